use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::table::{encode_transform, ResultRow, ResultTable};
use super::{clinically_relevant, offset_in_world, standard_offsets, NamedOffset, RunType, FORMAT_LADDER_CM};
use crate::camera::CArmCamera;
use crate::error::Result;
use crate::geometry::RigidTransform;
use crate::image::Image2D;
use crate::phantom::{crop_to_fov, generate_phantom, PhantomSpec};
use crate::projector::{DrrConfig, PreparedVolume};
use crate::registration::{two_stage_register_prepared, PreparedPyramid, SuccessCriteria, TwoStageConfig};
use crate::seeds::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellFilter {
    #[default]
    All,
    ClinicallyRelevant,
}

/// Volume format × image format × offset × run type, `trials_per_cell`
/// registrations each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomMatrixPlan {
    pub volume_formats_cm: Vec<f64>,
    pub image_formats_cm: Vec<f64>,
    pub offsets: Vec<NamedOffset>,
    pub run_types: Vec<RunType>,
    pub trials_per_cell: usize,
    pub cells: CellFilter,
    pub seed: u64,
    pub criteria: SuccessCriteria,
    pub phantom: PhantomSpec,
    pub detector_dims: [usize; 2],
    pub rotation_deg: f64,
    pub angulation_deg: f64,
    pub registration: TwoStageConfig,
}

impl Default for PhantomMatrixPlan {
    fn default() -> Self {
        PhantomMatrixPlan {
            volume_formats_cm: FORMAT_LADDER_CM.to_vec(),
            image_formats_cm: FORMAT_LADDER_CM.to_vec(),
            offsets: standard_offsets(),
            run_types: vec![RunType::Exposure, RunType::Fluoroscopy],
            trials_per_cell: 1,
            cells: CellFilter::All,
            seed: 0,
            criteria: SuccessCriteria::default(),
            phantom: PhantomSpec::head(2.0),
            detector_dims: [128, 128],
            rotation_deg: 10.0,
            angulation_deg: 10.0,
            registration: TwoStageConfig::default(),
        }
    }
}

impl PhantomMatrixPlan {
    pub fn validate(&self) -> Result<()> {
        use crate::error::Error;
        if self.trials_per_cell == 0 {
            return Err(Error::InvalidArgument("trials per cell must be at least 1".into()));
        }
        for f in self.volume_formats_cm.iter().chain(&self.image_formats_cm) {
            if !FORMAT_LADDER_CM.contains(f) {
                return Err(Error::InvalidArgument(format!("{f} cm is not on the format ladder")));
            }
        }
        if self.offsets.is_empty() || self.run_types.is_empty() {
            return Err(Error::InvalidArgument("plan has no offsets or run types".into()));
        }
        self.phantom.validate()?;
        self.camera(self.image_formats_cm[0]).validate()?;
        self.registration.space.validate()
    }

    pub fn camera(&self, image_fov_cm: f64) -> CArmCamera {
        CArmCamera::with_format(image_fov_cm, self.detector_dims).at_angles(self.rotation_deg, self.angulation_deg)
    }
}

struct Task {
    run: usize,
    vol: usize,
    img: usize,
    off: usize,
    trial: usize,
    cell: usize,
}

/// Registers the phantom against its own rendering for every cell. Ground
/// truth is the identity pose (the phantom never moves; offsets are applied
/// in software). Errors become rows with an error status.
pub fn run_phantom_matrix(plan: &PhantomMatrixPlan) -> Result<ResultTable> {
    plan.validate()?;
    let phantom = generate_phantom(&plan.phantom)?;

    let mut tasks = Vec::new();
    let (nv, ni, no) = (
        plan.volume_formats_cm.len(),
        plan.image_formats_cm.len(),
        plan.offsets.len(),
    );
    for run in 0..plan.run_types.len() {
        for vol in 0..nv {
            for img in 0..ni {
                let relevant = clinically_relevant(plan.volume_formats_cm[vol], plan.image_formats_cm[img]);
                if plan.cells == CellFilter::ClinicallyRelevant && !relevant {
                    continue;
                }
                for off in 0..no {
                    let cell = ((run * nv + vol) * ni + img) * no + off;
                    for trial in 0..plan.trials_per_cell {
                        tasks.push(Task {
                            run,
                            vol,
                            img,
                            off,
                            trial,
                            cell,
                        });
                    }
                }
            }
        }
    }

    let used_vol: Vec<usize> = (0..nv).filter(|v| tasks.iter().any(|t| t.vol == *v)).collect();
    let pyramids: HashMap<usize, Result<PreparedPyramid>> = used_vol
        .par_iter()
        .map(|&v| {
            let p = crop_to_fov(&phantom, plan.volume_formats_cm[v])
                .and_then(|c| PreparedPyramid::new(&c, &plan.registration));
            (v, p)
        })
        .collect();
    let prepared = PreparedVolume::new(&phantom);
    let drr = DrrConfig::for_volume(&phantom);
    let targets: HashMap<usize, Result<Image2D>> = (0..ni)
        .filter(|i| tasks.iter().any(|t| t.img == *i))
        .map(|i| {
            let cam = plan.camera(plan.image_formats_cm[i]);
            let img = cam
                .fov_mask(1)
                .and_then(|m| prepared.render(&cam, &RigidTransform::identity(), &drr, Some(&m)));
            (i, img)
        })
        .collect();

    let rows: Vec<ResultRow> = tasks
        .par_iter()
        .map(|t| {
            let seed = derive_seed(plan.seed, &[t.cell as u64, t.trial as u64]);
            let (vf, imf) = (plan.volume_formats_cm[t.vol], plan.image_formats_cm[t.img]);
            let camera = plan.camera(imf);
            let offset = &plan.offsets[t.off];
            let truth = RigidTransform::identity();
            let init = offset_in_world(&offset.transform(), &camera).compose(&truth);
            let run_type = plan.run_types[t.run];
            let t0 = Instant::now();
            let outcome = (|| -> Result<_> {
                let pyramid = pyramids[&t.vol].as_ref().map_err(clone_err)?;
                let clean = targets[&t.img].as_ref().map_err(clone_err)?;
                let fixed = run_type.noise().apply(clean, seed)?;
                let cfg = plan.registration.clone().with_seed(seed);
                Ok(
                    two_stage_register_prepared(pyramid, &fixed, &camera, &init, &cfg)?.with_truth(
                        &truth,
                        &camera,
                        &plan.criteria,
                    ),
                )
            })();
            let mut row = ResultRow {
                experiment: "phantom-matrix".into(),
                run_type: run_type.name().into(),
                volume_fov_cm: vf,
                image_fov_cm: imf,
                offset: offset.label.clone(),
                patient: None,
                contrast: None,
                frame: None,
                trial: t.trial,
                seed,
                relevant: clinically_relevant(vf, imf),
                offset_tx_mm: offset.translation_mm[0],
                offset_ty_mm: offset.translation_mm[1],
                offset_tz_mm: offset.translation_mm[2],
                offset_rx_deg: offset.rotation_deg[0],
                offset_ry_deg: offset.rotation_deg[1],
                offset_rz_deg: offset.rotation_deg[2],
                offset_angle_deg: offset.transform().rotation_angle_deg(),
                truth: encode_transform(&truth),
                recovered: None,
                t_mm: None,
                r_deg: None,
                in_plane_mm: None,
                out_of_plane_mm: None,
                pass_t: None,
                pass_r: None,
                pass: None,
                score: None,
                initial_score: None,
                evaluations: None,
                status: String::new(),
                wall_time_s: 0.0,
            };
            fill_outcome(&mut row, outcome);
            row.wall_time_s = t0.elapsed().as_secs_f64();
            row
        })
        .collect();
    Ok(ResultTable { rows })
}

pub(super) fn clone_err(e: &crate::error::Error) -> crate::error::Error {
    crate::error::Error::InvalidArgument(e.to_string())
}

pub(super) fn fill_outcome(row: &mut ResultRow, outcome: Result<crate::registration::RegistrationResult>) {
    match outcome {
        Ok(r) => {
            row.recovered = Some(encode_transform(&r.recovered));
            if let (Some(e), Some(p)) = (r.error, r.passed) {
                row.t_mm = Some(e.t_mm);
                row.r_deg = Some(e.r_deg);
                row.in_plane_mm = Some(e.in_plane);
                row.out_of_plane_mm = Some(e.out_of_plane);
                row.pass_t = Some(p.t);
                row.pass_r = Some(p.r);
                row.pass = Some(p.both);
            }
            row.score = Some(r.score);
            row.initial_score = Some(r.initial_score);
            row.evaluations = Some(r.evaluations);
            row.status = serde_json::to_value(r.status)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default();
        }
        Err(e) => row.status = format!("error: {e}"),
    }
}

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::matrix::{clone_err, fill_outcome};
use super::table::{encode_transform, ResultRow, ResultTable};
use super::{clinically_relevant, offset_in_world, sample_offset, OffsetDistribution};
use crate::camera::CArmCamera;
use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::noise::NoiseModel;
use crate::phantom::{generate_phantom, PhantomSpec};
use crate::recon::{ground_truth_pairs, FdkConfig, ReconGrid, RunConfig, Trajectory};
use crate::registration::{
    two_stage_register_prepared, PreparedPyramid, SearchSpace, SuccessCriteria, TranslationMeasure, TwoStageConfig,
};
use crate::seeds::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientSpec {
    pub label: String,
    pub contrast: bool,
}

/// Random frames of simulated rotational runs registered to their own
/// reconstruction from random offsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalPlan {
    pub patients: Vec<PatientSpec>,
    pub trials_per_patient: usize,
    pub offsets: OffsetDistribution,
    pub format_cm: f64,
    pub detector_dims: [usize; 2],
    pub run: RunConfig,
    pub phantom: PhantomSpec,
    pub criteria: SuccessCriteria,
    pub registration: TwoStageConfig,
    pub seed: u64,
}

impl Default for ClinicalPlan {
    fn default() -> Self {
        let format_cm = 27.0;
        ClinicalPlan {
            patients: vec![
                PatientSpec {
                    label: "contrast".into(),
                    contrast: true,
                },
                PatientSpec {
                    label: "no-contrast".into(),
                    contrast: false,
                },
            ],
            trials_per_patient: 100,
            offsets: OffsetDistribution::default(),
            format_cm,
            detector_dims: [128, 128],
            run: RunConfig {
                trajectory: Trajectory::default(),
                noise: NoiseModel::exposure(),
                downsample: 1,
                grid: ReconGrid {
                    dims: [128, 128, 128],
                    spacing_mm: 1.5,
                    fov_diameter_cm: format_cm,
                },
                fdk: FdkConfig::default(),
            },
            phantom: PhantomSpec::head(2.0),
            // the beam-axis translation is not searched
            criteria: SuccessCriteria {
                translation: TranslationMeasure::InPlane,
                ..SuccessCriteria::default()
            },
            registration: {
                let mut r = TwoStageConfig {
                    space: SearchSpace {
                        t_bounds_mm: 30.0,
                        r_bounds_deg: 12.0,
                    },
                    ..TwoStageConfig::default()
                };
                // reconstructed volumes carry less edge contrast; finish at full resolution
                r.fine.downsample = 1;
                r
            },
            seed: 0,
        }
    }
}

impl ClinicalPlan {
    pub fn validate(&self) -> Result<()> {
        if self.patients.is_empty() || self.trials_per_patient == 0 {
            return Err(Error::InvalidArgument("plan needs patients and trials".into()));
        }
        self.run.trajectory.validate()?;
        self.run.noise.validate()?;
        self.phantom.validate()?;
        self.registration.space.validate()?;
        CArmCamera::with_format(self.format_cm, self.detector_dims).validate()
    }
}

/// Frame index and offset drawn for one trial.
pub fn clinical_draw(plan: &ClinicalPlan, seed: u64) -> (usize, RigidTransform) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frame = rng.random_range(0..plan.run.trajectory.n_frames);
    let offset = sample_offset(&plan.offsets, rng.random());
    (frame, offset)
}

pub fn run_clinical_style(plan: &ClinicalPlan) -> Result<ResultTable> {
    plan.validate()?;
    let base = CArmCamera::with_format(plan.format_cm, plan.detector_dims);
    let mut rows = Vec::new();
    for (p, patient) in plan.patients.iter().enumerate() {
        let spec = plan.phantom.clone().with_contrast(patient.contrast);
        let volume = generate_phantom(&spec)?;
        // Patients share run noise and per-trial draws so they differ only in contrast.
        let data = ground_truth_pairs(&volume, &base, &plan.run, derive_seed(plan.seed, &[0]))?;
        let pyramid = PreparedPyramid::new(&data.reconstruction, &plan.registration);
        let patient_rows: Vec<ResultRow> = (0..plan.trials_per_patient)
            .into_par_iter()
            .map(|trial| {
                let seed = derive_seed(plan.seed, &[1, trial as u64]);
                let (frame, offset) = clinical_draw(plan, seed);
                let (fixed, camera, truth) = data.pair(frame).expect("frame index within run");
                let init = offset_in_world(&offset, camera).compose(&truth);
                let t0 = Instant::now();
                let outcome = pyramid.as_ref().map_err(clone_err).and_then(|pyr| {
                    let cfg = plan.registration.clone().with_seed(seed);
                    Ok(
                        two_stage_register_prepared(pyr, fixed, camera, &init, &cfg)?.with_truth(
                            &truth,
                            camera,
                            &plan.criteria,
                        ),
                    )
                });
                let e = offset.euler_xyz_deg();
                let mut row = ResultRow {
                    experiment: "clinical-style".into(),
                    run_type: noise_label(&plan.run.noise),
                    volume_fov_cm: plan.run.grid.fov_diameter_cm,
                    image_fov_cm: plan.format_cm,
                    offset: "random".into(),
                    patient: Some(p),
                    contrast: Some(patient.contrast),
                    frame: Some(frame),
                    trial,
                    seed,
                    relevant: clinically_relevant(plan.run.grid.fov_diameter_cm, plan.format_cm),
                    offset_tx_mm: offset.translation.x,
                    offset_ty_mm: offset.translation.y,
                    offset_tz_mm: offset.translation.z,
                    offset_rx_deg: e[0],
                    offset_ry_deg: e[1],
                    offset_rz_deg: e[2],
                    offset_angle_deg: offset.rotation_angle_deg(),
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
        rows.extend(patient_rows);
    }
    Ok(ResultTable { rows })
}

/// Translational and rotational pass rates split by contrast:
/// `(contrast_t, contrast_r, plain_t, plain_r)`.
pub fn contrast_pass_rates(table: &ResultTable) -> (f64, f64, f64, f64) {
    let rate = |contrast: bool, f: fn(&ResultRow) -> Option<bool>| {
        let rows: Vec<&ResultRow> = table.rows.iter().filter(|r| r.contrast == Some(contrast)).collect();
        if rows.is_empty() {
            return 0.0;
        }
        rows.iter().filter(|r| f(r) == Some(true)).count() as f64 / rows.len() as f64
    };
    (
        rate(true, |r| r.pass_t),
        rate(true, |r| r.pass_r),
        rate(false, |r| r.pass_t),
        rate(false, |r| r.pass_r),
    )
}

fn noise_label(noise: &NoiseModel) -> String {
    match noise {
        NoiseModel::None => "none".into(),
        NoiseModel::Poisson { photons } => format!("poisson-{photons}"),
    }
}

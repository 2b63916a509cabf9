//! Intensity-based 2D/3D rigid registration.
//!
//! Five parameters are optimised: in-plane translation `(tx, ty)` along the
//! detector u and v axes and rotations `(rx, ry, rz)` about the detector u, v
//! and viewing axes. For a parameter vector `x` and starting pose
//! `p -> R p + t` the candidate pose is `p -> Rδ R p + t + tx u + ty v`, so the
//! translation along the viewing axis never changes.
//!
//! The objective handed to the annealer is the negated gradient-difference
//! score divided by its maximum (two per pixel), which keeps temperatures
//! comparable across image sizes.

use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::anneal::{anneal, AnnealConfig, InitialTemperature};
use crate::camera::CArmCamera;
use crate::error::{Error, Result};
use crate::geometry::{euler_xyz_matrix, pose_error_for_camera, PoseError, RigidTransform};
use crate::image::Image2D;
use crate::projector::{DrrConfig, PreparedVolume};
use crate::similarity::{GradientDifference, SimilarityConfig};
use crate::volume::Volume;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub t_bounds_mm: f64,
    pub r_bounds_deg: f64,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            t_bounds_mm: 30.0,
            r_bounds_deg: 12.0,
        }
    }
}

impl SearchSpace {
    pub fn new(t_bounds_mm: f64, r_bounds_deg: f64) -> Result<Self> {
        let s = SearchSpace {
            t_bounds_mm,
            r_bounds_deg,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_bounds_mm > 0.0 && self.r_bounds_deg > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "search bounds must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        let (t, r) = (self.t_bounds_mm, self.r_bounds_deg);
        vec![(-t, t), (-t, t), (-r, r), (-r, r), (-r, r)]
    }
}

/// Which translational error the success test compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranslationMeasure {
    /// Full 3-D displacement at the iso-center.
    Full,
    /// Displacement component parallel to the detector.
    InPlane,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessCriteria {
    pub t_max_mm: f64,
    pub r_max_deg: f64,
    pub translation: TranslationMeasure,
}

impl Default for SuccessCriteria {
    fn default() -> Self {
        SuccessCriteria {
            t_max_mm: 1.0,
            r_max_deg: 3.0,
            translation: TranslationMeasure::Full,
        }
    }
}

impl SuccessCriteria {
    pub fn judge(&self, e: &PoseError) -> Passed {
        let t_err = match self.translation {
            TranslationMeasure::Full => e.translation_mm,
            TranslationMeasure::InPlane => e.in_plane_mm,
        };
        let t = t_err < self.t_max_mm;
        let r = e.rotation_deg < self.r_max_deg;
        Passed { t, r, both: t && r }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passed {
    pub t: bool,
    pub r: bool,
    pub both: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegistrationStatus {
    Optimized,
    /// The fixed image has no gradient content; the result is the start pose.
    InsufficientLandmarks,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub t_mm: f64,
    pub r_deg: f64,
    pub in_plane: f64,
    pub out_of_plane: f64,
}

impl From<PoseError> for ErrorRecord {
    fn from(e: PoseError) -> Self {
        ErrorRecord {
            t_mm: e.translation_mm,
            r_deg: e.rotation_deg,
            in_plane: e.in_plane_mm,
            out_of_plane: e.out_of_plane_mm,
        }
    }
}

impl From<ErrorRecord> for PoseError {
    fn from(e: ErrorRecord) -> Self {
        PoseError {
            translation_mm: e.t_mm,
            rotation_deg: e.r_deg,
            in_plane_mm: e.in_plane,
            out_of_plane_mm: e.out_of_plane,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    pub recovered: RigidTransform,
    /// Gradient-difference score at the recovered pose (last stage).
    pub score: f64,
    /// Score of the start pose under the same measure.
    pub initial_score: f64,
    pub intensity_scale: f64,
    pub evaluations: usize,
    pub wall_time_s: f64,
    pub status: RegistrationStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<ErrorRecord>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub passed: Option<Passed>,
}

impl RegistrationResult {
    /// Attaches the residual against `truth` and the pass flags.
    pub fn with_truth(mut self, truth: &RigidTransform, camera: &CArmCamera, criteria: &SuccessCriteria) -> Self {
        let e = residual(&self.recovered, truth, camera);
        self.passed = Some(criteria.judge(&e));
        self.error = Some(e.into());
        self
    }

    pub fn pose_error(&self) -> Option<PoseError> {
        self.error.map(PoseError::from)
    }
}

/// Residual at the iso-center, split against `camera`'s viewing axis.
pub fn residual(recovered: &RigidTransform, truth: &RigidTransform, camera: &CArmCamera) -> PoseError {
    pose_error_for_camera(recovered, truth, &nalgebra::Point3::origin(), camera)
}

/// Pass flags for a result that carries ground truth.
pub fn evaluate_success(result: &RegistrationResult, criteria: &SuccessCriteria) -> Result<Passed> {
    let e = result.pose_error().ok_or(Error::MissingGroundTruth)?;
    Ok(criteria.judge(&e))
}

/// Applies parameter vector `x = (tx, ty, rx, ry, rz)` (mm, degrees) to `start`.
pub fn apply_parameters(start: &RigidTransform, x: &[f64], camera: &CArmCamera) -> RigidTransform {
    let frame = camera.frame();
    let b: Matrix3<f64> = frame.basis();
    let r_delta = b * euler_xyz_matrix(x[2], x[3], x[4]) * b.transpose();
    let t: Vector3<f64> = start.translation + frame.u_axis * x[0] + frame.v_axis * x[1];
    RigidTransform::new(r_delta * start.rotation, t)
}

/// One resolution level of the coarse-to-fine scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub downsample: usize,
    /// Block-averaging factor applied to the volume before rendering.
    pub volume_binning: usize,
    /// Ray step as a multiple of the (binned) voxel spacing.
    pub step_factor: f64,
    pub anneal: AnnealConfig,
}

impl StageConfig {
    fn drr_config(&self, volume: &Volume) -> DrrConfig {
        DrrConfig::for_volume(volume)
            .with_step(volume.min_spacing() * self.step_factor)
            .with_downsample(self.downsample)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStageConfig {
    pub space: SearchSpace,
    pub coarse: StageConfig,
    pub fine: StageConfig,
    pub fine_space: SearchSpace,
    pub similarity: SimilarityConfig,
    /// Restrict the similarity to a disc of this fraction of the circular
    /// detector field; `None` uses every interior pixel.
    pub fov_mask_fraction: Option<f64>,
}

impl Default for TwoStageConfig {
    fn default() -> Self {
        TwoStageConfig {
            space: SearchSpace::default(),
            coarse: StageConfig {
                downsample: 4,
                volume_binning: 2,
                step_factor: 1.0,
                anneal: AnnealConfig {
                    initial_temperature: InitialTemperature::RelativeToStart(0.3),
                    temperature_reduction: 0.8,
                    steps_per_cycle: 5,
                    cycles_per_temperature: 2,
                    max_evaluations: 1000,
                    ..AnnealConfig::default()
                },
            },
            fine: StageConfig {
                downsample: 2,
                volume_binning: 1,
                step_factor: 1.0,
                anneal: AnnealConfig {
                    initial_temperature: InitialTemperature::RelativeToStart(0.02),
                    temperature_reduction: 0.7,
                    steps_per_cycle: 4,
                    cycles_per_temperature: 2,
                    max_evaluations: 100,
                    ..AnnealConfig::default()
                },
            },
            fine_space: SearchSpace {
                t_bounds_mm: 2.0,
                r_bounds_deg: 2.0,
            },
            similarity: SimilarityConfig::default(),
            fov_mask_fraction: Some(0.9),
        }
    }
}

impl TwoStageConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.coarse.anneal.seed = seed;
        self.fine.anneal.seed = seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
        self
    }
}

struct StageOutcome {
    x_best: Vec<f64>,
    score: f64,
    initial_score: f64,
    scale: f64,
    evaluations: usize,
    flat: bool,
}

#[allow(clippy::too_many_arguments)]
fn run_stage(
    prepared: &PreparedVolume,
    fixed: &Image2D,
    camera: &CArmCamera,
    start: &RigidTransform,
    space: &SearchSpace,
    drr_cfg: &DrrConfig,
    sim_cfg: &SimilarityConfig,
    anneal_cfg: &AnnealConfig,
    fov_mask_fraction: Option<f64>,
) -> Result<StageOutcome> {
    space.validate()?;
    drr_cfg.validate()?;
    if fixed.dims() != camera.detector_dims {
        return Err(Error::DimMismatch(fixed.dims(), camera.detector_dims));
    }
    let ds = drr_cfg.downsample;
    let fixed_ds = fixed.downsample(ds)?;
    let mask = match fov_mask_fraction {
        Some(f) => Some(camera.fov_mask_scaled(ds, f)?),
        None => None,
    };
    let gd = GradientDifference::with_mask(&fixed_ds, mask.as_deref(), sim_cfg)?;
    if gd.is_flat() {
        return Ok(StageOutcome {
            x_best: vec![0.0; 5],
            score: 0.0,
            initial_score: 0.0,
            scale: 1.0,
            evaluations: 1,
            flat: true,
        });
    }
    let norm = 1.0 / gd.max_score();
    let mut buf = vec![0.0f32; fixed_ds.data().len()];
    prepared.render_into(camera, start, drr_cfg, mask.as_deref(), &mut buf)?;
    let initial_score = gd.score_raw(&buf).0;
    // A pose that cannot be rendered (source inside the volume box) is
    // simply rejected by the annealer.
    let mut objective = |x: &[f64]| -> f64 {
        let pose = apply_parameters(start, x, camera);
        match prepared.render_into(camera, &pose, drr_cfg, mask.as_deref(), &mut buf) {
            Ok(()) => -gd.score_raw(&buf).0 * norm,
            Err(_) => f64::INFINITY,
        }
    };
    let x0 = [0.0; 5];
    let res = anneal(&mut objective, &x0, &space.bounds(), anneal_cfg)?;
    let pose = apply_parameters(start, &res.x_best, camera);
    prepared.render_into(camera, &pose, drr_cfg, mask.as_deref(), &mut buf)?;
    let (score, scale) = gd.score_raw(&buf);
    Ok(StageOutcome {
        x_best: res.x_best,
        score,
        initial_score,
        scale,
        evaluations: res.evaluations + 1,
        flat: false,
    })
}

/// Single-stage registration of `volume` to `fixed` (full detector
/// resolution, `camera.detector_dims`) starting from `init`.
#[allow(clippy::too_many_arguments)]
pub fn register(
    volume: &Volume,
    fixed: &Image2D,
    camera: &CArmCamera,
    init: &RigidTransform,
    space: &SearchSpace,
    drr_cfg: &DrrConfig,
    sim_cfg: &SimilarityConfig,
    anneal_cfg: &AnnealConfig,
) -> Result<RegistrationResult> {
    let t0 = Instant::now();
    camera.validate()?;
    let prepared = PreparedVolume::new(volume);
    let out = run_stage(
        &prepared,
        fixed,
        camera,
        init,
        space,
        drr_cfg,
        sim_cfg,
        anneal_cfg,
        Some(1.0),
    )?;
    Ok(finish(init, camera, out, None, t0))
}

fn finish(
    start: &RigidTransform,
    camera: &CArmCamera,
    out: StageOutcome,
    initial_score: Option<f64>,
    t0: Instant,
) -> RegistrationResult {
    let status = if out.flat {
        RegistrationStatus::InsufficientLandmarks
    } else {
        RegistrationStatus::Optimized
    };
    RegistrationResult {
        recovered: apply_parameters(start, &out.x_best, camera),
        score: out.score,
        initial_score: initial_score.unwrap_or(out.initial_score),
        intensity_scale: out.scale,
        evaluations: out.evaluations,
        wall_time_s: t0.elapsed().as_secs_f64(),
        status,
        error: None,
        passed: None,
    }
}

/// Volume pyramid reused across registrations against the same volume.
pub struct PreparedPyramid {
    coarse: PreparedVolume,
    coarse_drr: DrrConfig,
    fine: PreparedVolume,
    fine_drr: DrrConfig,
}

impl PreparedPyramid {
    pub fn new(volume: &Volume, cfg: &TwoStageConfig) -> Result<Self> {
        let level = |stage: &StageConfig| -> Result<(PreparedVolume, DrrConfig)> {
            let v = volume.binned(stage.volume_binning)?;
            Ok((PreparedVolume::new(&v), stage.drr_config(&v)))
        };
        let (coarse, coarse_drr) = level(&cfg.coarse)?;
        let (fine, fine_drr) = level(&cfg.fine)?;
        Ok(PreparedPyramid {
            coarse,
            coarse_drr,
            fine,
            fine_drr,
        })
    }
}

/// Coarse stage over `cfg.space`, then a fine stage over `cfg.fine_space`
/// around the coarse optimum.
pub fn two_stage_register(
    volume: &Volume,
    fixed: &Image2D,
    camera: &CArmCamera,
    init: &RigidTransform,
    cfg: &TwoStageConfig,
) -> Result<RegistrationResult> {
    let pyramid = PreparedPyramid::new(volume, cfg)?;
    two_stage_register_prepared(&pyramid, fixed, camera, init, cfg)
}

pub fn two_stage_register_prepared(
    pyramid: &PreparedPyramid,
    fixed: &Image2D,
    camera: &CArmCamera,
    init: &RigidTransform,
    cfg: &TwoStageConfig,
) -> Result<RegistrationResult> {
    let t0 = Instant::now();
    camera.validate()?;
    let coarse = run_stage(
        &pyramid.coarse,
        fixed,
        camera,
        init,
        &cfg.space,
        &pyramid.coarse_drr,
        &cfg.similarity,
        &cfg.coarse.anneal,
        cfg.fov_mask_fraction,
    )?;
    if coarse.flat {
        return Ok(finish(init, camera, coarse, None, t0));
    }
    let mid = apply_parameters(init, &coarse.x_best, camera);
    let fine = run_stage(
        &pyramid.fine,
        fixed,
        camera,
        &mid,
        &cfg.fine_space,
        &pyramid.fine_drr,
        &cfg.similarity,
        &cfg.fine.anneal,
        cfg.fov_mask_fraction,
    )?;
    let evaluations = coarse.evaluations + fine.evaluations;
    let mut r = finish(&mid, camera, fine, None, t0);
    r.evaluations = evaluations;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn success_is_strict() {
        let c = SuccessCriteria::default();
        let e = |t: f64, r: f64| PoseError {
            translation_mm: t,
            rotation_deg: r,
            in_plane_mm: t,
            out_of_plane_mm: 0.0,
        };
        assert_eq!(
            c.judge(&e(0.24, 1.11)),
            Passed {
                t: true,
                r: true,
                both: true
            }
        );
        assert_eq!(
            c.judge(&e(1.0, 0.0)),
            Passed {
                t: false,
                r: true,
                both: false
            }
        );
        assert_eq!(
            c.judge(&e(0.5, 3.5)),
            Passed {
                t: true,
                r: false,
                both: false
            }
        );
    }

    #[test]
    fn missing_truth_is_an_error() {
        let r = RegistrationResult {
            recovered: RigidTransform::identity(),
            score: 0.0,
            initial_score: 0.0,
            intensity_scale: 1.0,
            evaluations: 1,
            wall_time_s: 0.0,
            status: RegistrationStatus::Optimized,
            error: None,
            passed: None,
        };
        assert!(matches!(
            evaluate_success(&r, &SuccessCriteria::default()),
            Err(Error::MissingGroundTruth)
        ));
    }

    #[test]
    fn parameters_keep_out_of_plane_translation() {
        let cam = CArmCamera::default().at_angles(30.0, -15.0);
        let n = cam.frame().viewing_axis;
        let start = RigidTransform::from_parts_deg([3.0, -4.0, 7.0], [5.0, 1.0, -2.0]);
        let moved = apply_parameters(&start, &[12.0, -9.0, 4.0, -3.0, 8.0], &cam);
        assert!((moved.translation.dot(&n) - start.translation.dot(&n)).abs() < 1e-12);
        let same = apply_parameters(&start, &[0.0; 5], &cam);
        assert!(same.max_abs_diff(&start) < 1e-12);
    }

    #[test]
    fn rotation_parameters_follow_camera_axes() {
        let cam = CArmCamera::default().at_angles(40.0, 10.0);
        let f = cam.frame();
        let moved = apply_parameters(&RigidTransform::identity(), &[0.0, 0.0, 0.0, 0.0, 90.0], &cam);
        // rz turns the detector u axis onto v
        assert!((moved.apply_vector(&f.u_axis) - f.v_axis).norm() < 1e-12);
        assert!((moved.apply_vector(&f.viewing_axis) - f.viewing_axis).norm() < 1e-12);
    }
}

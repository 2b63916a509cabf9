//! Experiment orchestration: format ladder, initial offsets, phantom matrix,
//! clinical-style runs, statistics and similarity landscapes.

mod clinical;
mod landscape;
mod matrix;
mod report;
mod stats;
mod table;

pub use clinical::{clinical_draw, contrast_pass_rates, run_clinical_style, ClinicalPlan, PatientSpec};
pub use landscape::{similarity_landscape, write_landscape_csv, LandscapeAxis, LandscapeRow, SearchAxis};
pub use matrix::{run_phantom_matrix, CellFilter, PhantomMatrixPlan};
pub use report::render_report;
pub use stats::{histogram, rotation_edges, summarize, translation_edges, Histogram, Stats, Summary};
pub use table::{decode_transform, encode_transform, ResultRow, ResultTable};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::camera::CArmCamera;
use crate::geometry::RigidTransform;
use crate::noise::NoiseModel;

/// Image and reconstruction diameters (cm) selectable by collimation.
pub const FORMAT_LADDER_CM: [f64; 8] = [15.0, 19.0, 22.0, 27.0, 31.0, 37.0, 42.0, 48.0];

/// Smallest format with enough landmarks for image-based registration.
pub const MIN_RELEVANT_FORMAT_CM: f64 = 22.0;

/// Volume and image large enough, and the volume covers the image.
pub fn clinically_relevant(volume_fov_cm: f64, image_fov_cm: f64) -> bool {
    volume_fov_cm >= MIN_RELEVANT_FORMAT_CM && image_fov_cm >= MIN_RELEVANT_FORMAT_CM && volume_fov_cm >= image_fov_cm
}

/// Initial misalignment expressed in the camera frame (x, y in the image
/// plane, z along the beam), rotation about the iso-center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedOffset {
    pub label: String,
    pub translation_mm: [f64; 3],
    pub rotation_deg: [f64; 3],
}

impl NamedOffset {
    pub fn transform(&self) -> RigidTransform {
        RigidTransform::from_parts_deg(self.translation_mm, self.rotation_deg)
    }
}

/// The four fixed starting offsets of the phantom experiments.
pub fn standard_offsets() -> Vec<NamedOffset> {
    let o = |label: &str, t: [f64; 3], r: [f64; 3]| NamedOffset {
        label: label.into(),
        translation_mm: t,
        rotation_deg: r,
    };
    vec![
        o("T1", [10.0, 0.0, 0.0], [0.0; 3]),
        o("T2", [-8.0, 6.0, 0.0], [0.0; 3]),
        o("T3", [0.0; 3], [5.0, 0.0, 0.0]),
        o("T4", [4.0, 4.0, 0.0], [2.0, 3.0, 4.0]),
    ]
}

/// Re-expresses a camera-frame offset in world coordinates.
pub fn offset_in_world(offset: &RigidTransform, camera: &CArmCamera) -> RigidTransform {
    let b = camera.frame().basis();
    RigidTransform::new(b * offset.rotation * b.transpose(), b * offset.translation)
}

/// Random rigid offsets: uniform length along a uniform direction, uniform
/// angle about a uniform axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetDistribution {
    pub max_translation_mm: f64,
    pub max_rotation_deg: f64,
}

impl Default for OffsetDistribution {
    fn default() -> Self {
        OffsetDistribution {
            max_translation_mm: 25.0,
            max_rotation_deg: 10.0,
        }
    }
}

pub fn sample_offset(dist: &OffsetDistribution, seed: u64) -> RigidTransform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let length = rng.random::<f64>() * dist.max_translation_mm;
    let dir: [f64; 3] = UnitSphere.sample(&mut rng);
    let angle = rng.random::<f64>() * dist.max_rotation_deg;
    let axis: [f64; 3] = UnitSphere.sample(&mut rng);
    let mut t = RigidTransform::from_axis_angle(&Vector3::from(axis), angle);
    t.translation = Vector3::from(dir) * length;
    t
}

/// Noise level of the target images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunType {
    Exposure,
    Fluoroscopy,
}

impl RunType {
    pub fn noise(&self) -> NoiseModel {
        match self {
            RunType::Exposure => NoiseModel::exposure(),
            RunType::Fluoroscopy => NoiseModel::fluoroscopy(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RunType::Exposure => "exposure",
            RunType::Fluoroscopy => "fluoroscopy",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_have_one_centimetre_displacements() {
        let t = standard_offsets();
        assert_eq!(t.len(), 4);
        assert!((Vector3::from(t[0].translation_mm).norm() - 10.0).abs() < 1e-12);
        assert!((Vector3::from(t[1].translation_mm).norm() - 10.0).abs() < 1e-12);
        assert_eq!(t[3].translation_mm, [4.0, 4.0, 0.0]);
        assert_eq!(t[3].rotation_deg, [2.0, 3.0, 4.0]);
        let e = t[3].transform().euler_xyz_deg();
        assert!((e[0] - 2.0).abs() < 1e-9 && (e[1] - 3.0).abs() < 1e-9 && (e[2] - 4.0).abs() < 1e-9);
    }

    #[test]
    fn relevance_rule() {
        assert!(clinically_relevant(22.0, 22.0));
        assert!(!clinically_relevant(15.0, 27.0));
        assert!(!clinically_relevant(27.0, 31.0));
        assert!(clinically_relevant(48.0, 22.0));
        let n = FORMAT_LADDER_CM
            .iter()
            .flat_map(|&v| FORMAT_LADDER_CM.iter().map(move |&i| (v, i)))
            .filter(|&(v, i)| clinically_relevant(v, i))
            .count();
        // six formats >= 22 cm, pairs with volume >= image
        assert_eq!(n, 6 * 7 / 2);
    }

    #[test]
    fn offset_samples_respect_limits_and_seed() {
        let d = OffsetDistribution::default();
        for s in 0..200 {
            let o = sample_offset(&d, s);
            assert!(o.translation.norm() <= 25.0);
            assert!(o.rotation_angle_deg() <= 10.0 + 1e-9);
            assert!(o.orthonormality_error() < 1e-9);
        }
        assert_eq!(sample_offset(&d, 3), sample_offset(&d, 3));
    }

    #[test]
    fn world_offset_follows_camera_axes() {
        let cam = CArmCamera::default().at_angles(30.0, -15.0);
        let f = cam.frame();
        let w = offset_in_world(&RigidTransform::translation(10.0, 0.0, 0.0), &cam);
        assert!((w.translation - f.u_axis * 10.0).norm() < 1e-12);
        let r = offset_in_world(&RigidTransform::from_parts_deg([0.0; 3], [0.0, 0.0, 5.0]), &cam);
        // rotation about the beam keeps the beam direction
        assert!((r.rotation * f.viewing_axis - f.viewing_axis).norm() < 1e-12);
    }
}

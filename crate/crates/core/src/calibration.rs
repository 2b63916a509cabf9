//! Machine-based registration: C-arm sag, marker calibration and the 20°
//! calibration grid.
//!
//! Gravity sag displaces source and detector (world frame) as a smooth
//! function of the arm angles. A calibration node simulates a marker
//! acquisition through the sagged camera, estimates the 3×4 projection by DLT
//! and converts it back into source/detector offsets relative to the nominal
//! arm pose. Between nodes the offsets are interpolated bilinearly.
//!
//! Registration renders with the nominal (sensor) camera. An offset camera is
//! replaced by the equivalent patient translation, see [`equivalent_shift`].

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Point3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::CArmCamera;
use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::seeds::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerPhantom {
    pub points: Vec<[f64; 3]>,
}

/// Vertices of a regular dodecahedron centered at the origin.
pub fn dodecahedron_vertices(circumradius_mm: f64) -> Result<MarkerPhantom> {
    if !(circumradius_mm > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "circumradius must be positive, got {circumradius_mm}"
        )));
    }
    let phi = (1.0 + 5f64.sqrt()) * 0.5;
    let ip = 1.0 / phi;
    let mut pts = Vec::with_capacity(20);
    for sx in [-1.0, 1.0] {
        for sy in [-1.0, 1.0] {
            for sz in [-1.0, 1.0] {
                pts.push([sx, sy, sz]);
            }
        }
    }
    for a in [-1.0, 1.0] {
        for b in [-1.0, 1.0] {
            pts.push([0.0, a * ip, b * phi]);
            pts.push([a * ip, b * phi, 0.0]);
            pts.push([a * phi, 0.0, b * ip]);
        }
    }
    let k = circumradius_mm / 3f64.sqrt();
    Ok(MarkerPhantom {
        points: pts.into_iter().map(|p| p.map(|c| c * k)).collect(),
    })
}

/// Projects the markers (moved by `pose`) through `camera`, adding isotropic
/// Gaussian pixel noise of `noise_px` standard deviation.
pub fn project_markers(
    phantom: &MarkerPhantom,
    camera: &CArmCamera,
    pose: &RigidTransform,
    noise_px: f64,
    seed: u64,
) -> Result<Vec<[f64; 2]>> {
    if !(noise_px >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise sigma must be non-negative, got {noise_px}"
        )));
    }
    let m = camera.projection_map(pose);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise_px.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let mut out = Vec::with_capacity(phantom.points.len());
    for (index, p) in phantom.points.iter().enumerate() {
        let h = m * Point3::from(*p).to_homogeneous();
        if h.z <= 0.0 {
            return Err(Error::BehindSource { index });
        }
        let mut q = [h.x / h.z, h.y / h.z];
        if noise_px > 0.0 {
            q[0] += normal.sample(&mut rng);
            q[1] += normal.sample(&mut rng);
        }
        out.push(q);
    }
    Ok(out)
}

/// DLT estimate with its decomposition. `matrix` is scaled so that its third
/// row has unit norm and points with positive depth map to positive `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct DltEstimate {
    pub matrix: Matrix3x4<f64>,
    pub source: Point3<f64>,
    /// Upper-triangular intrinsics with positive diagonal, `K[2][2] = 1`.
    pub intrinsics: Matrix3<f64>,
    /// World-to-camera rotation (rows are the camera axes).
    pub rotation: Matrix3<f64>,
    /// Root mean square over all pixel coordinates (u and v separately).
    pub reprojection_rms_px: f64,
}

fn similarity_normalizer3(points: &[[f64; 3]]) -> (Vector3<f64>, f64) {
    let n = points.len() as f64;
    let c = points.iter().fold(Vector3::zeros(), |a, p| a + Vector3::from(*p)) / n;
    let mean = points.iter().map(|p| (Vector3::from(*p) - c).norm()).sum::<f64>() / n;
    (c, 3f64.sqrt() / mean)
}

fn similarity_normalizer2(points: &[[f64; 2]]) -> ([f64; 2], f64) {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let mean = points
        .iter()
        .map(|p| ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    ([cx, cy], 2f64.sqrt() / mean)
}

/// Normalized DLT over `(world, pixel)` correspondences.
pub fn estimate_projection_dlt(world: &[[f64; 3]], pixels: &[[f64; 2]]) -> Result<DltEstimate> {
    if world.len() != pixels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} world points but {} pixel points",
            world.len(),
            pixels.len()
        )));
    }
    let n = world.len();
    if n < 6 {
        return Err(Error::TooFewCorrespondences { needed: 6, got: n });
    }
    let (c3, s3) = similarity_normalizer3(world);
    let (c2, s2) = similarity_normalizer2(pixels);
    if !(s3.is_finite() && s2.is_finite()) {
        return Err(Error::Degenerate("coincident points".into()));
    }
    // coplanarity: smallest spread direction of the normalized 3-D points
    let mut cov = Matrix3::zeros();
    for p in world {
        let d = (Vector3::from(*p) - c3) * s3;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let (emin, emax) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    if emin <= 1e-8 * emax {
        return Err(Error::Degenerate("world points are coplanar".into()));
    }

    let mut a = DMatrix::<f64>::zeros(2 * n, 12);
    for (i, (w, q)) in world.iter().zip(pixels).enumerate() {
        let x = (Vector3::from(*w) - c3) * s3;
        let xh = [x.x, x.y, x.z, 1.0];
        let u = (q[0] - c2[0]) * s2;
        let v = (q[1] - c2[1]) * s2;
        for k in 0..4 {
            a[(2 * i, k)] = xh[k];
            a[(2 * i, 8 + k)] = -u * xh[k];
            a[(2 * i + 1, 4 + k)] = xh[k];
            a[(2 * i + 1, 8 + k)] = -v * xh[k];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Degenerate("SVD failed".into()))?;
    let (k_min, _) =
        svd.singular_values.iter().enumerate().fold(
            (0, f64::INFINITY),
            |(bi, bv), (i, &s)| if s < bv { (i, s) } else { (bi, bv) },
        );
    let h = v_t.row(k_min);
    let pn = Matrix3x4::from_fn(|r, c| h[4 * r + c]);

    // undo normalization: P = T2⁻¹ · Pn · T3
    let t2_inv = Matrix3::new(1.0 / s2, 0.0, c2[0], 0.0, 1.0 / s2, c2[1], 0.0, 0.0, 1.0);
    let mut t3 = nalgebra::Matrix4::<f64>::identity() * s3;
    t3[(3, 3)] = 1.0;
    t3[(0, 3)] = -s3 * c3.x;
    t3[(1, 3)] = -s3 * c3.y;
    t3[(2, 3)] = -s3 * c3.z;
    let mut p = t2_inv * pn * t3;

    let scale = p.fixed_view::<1, 3>(2, 0).norm();
    if !(scale > 0.0) {
        return Err(Error::Degenerate("projection has no depth row".into()));
    }
    p /= scale;
    let c_mean = Vector3::from(
        world
            .iter()
            .fold([0.0; 3], |a, w| [a[0] + w[0], a[1] + w[1], a[2] + w[2]]),
    ) / n as f64;
    if (p * Point3::from(c_mean).to_homogeneous()).z < 0.0 {
        p = -p;
    }

    let m: Matrix3<f64> = p.fixed_view::<3, 3>(0, 0).into_owned();
    let m_inv = m
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("singular projection".into()))?;
    let source = Point3::from(-(m_inv * p.column(3)));
    let (intrinsics, rotation) = rq3(&m);

    let sq: f64 = world
        .iter()
        .zip(pixels)
        .map(|(w, q)| {
            let h = p * Point3::from(*w).to_homogeneous();
            (h.x / h.z - q[0]).powi(2) + (h.y / h.z - q[1]).powi(2)
        })
        .sum();
    Ok(DltEstimate {
        matrix: p,
        source,
        intrinsics,
        rotation,
        reprojection_rms_px: (sq / (2 * n) as f64).sqrt(),
    })
}

/// `M = K R` with `K` upper triangular (positive diagonal, `K[2][2] = 1`
/// after scaling) and `R` orthonormal.
fn rq3(m: &Matrix3<f64>) -> (Matrix3<f64>, Matrix3<f64>) {
    let flip = Matrix3::new(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0);
    let qr = (flip * m).transpose().qr();
    let (q, r) = (qr.q(), qr.r());
    let mut k = flip * r.transpose() * flip;
    let mut rot = flip * q.transpose();
    for i in 0..3 {
        if k[(i, i)] < 0.0 {
            let mut d = Matrix3::identity();
            d[(i, i)] = -1.0;
            k *= d;
            rot = d * rot;
        }
    }
    let k22 = k[(2, 2)];
    (k / k22, rot)
}

/// Source and detector displacement terms for one of the two arm ends
/// (world frame, mm). Angles enter in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SagTerms {
    pub constant: [f64; 3],
    pub sin_rotation: [f64; 3],
    pub sin_angulation: [f64; 3],
    pub sin_rotation_cos_angulation: [f64; 3],
    /// Linear terms per degree, for tests of the interpolation.
    #[serde(default)]
    pub per_deg_rotation: [f64; 3],
    #[serde(default)]
    pub per_deg_angulation: [f64; 3],
}

impl SagTerms {
    pub fn at(&self, rotation_deg: f64, angulation_deg: f64) -> [f64; 3] {
        let (sr, sa) = (rotation_deg.to_radians().sin(), angulation_deg.to_radians().sin());
        let ca = angulation_deg.to_radians().cos();
        [0, 1, 2].map(|i| {
            self.constant[i]
                + self.sin_rotation[i] * sr
                + self.sin_angulation[i] * sa
                + self.sin_rotation_cos_angulation[i] * sr * ca
                + self.per_deg_rotation[i] * rotation_deg
                + self.per_deg_angulation[i] * angulation_deg
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SagModel {
    pub source: SagTerms,
    pub detector: SagTerms,
}

impl SagModel {
    pub fn none() -> Self {
        SagModel::default()
    }

    /// Gravity-plausible sag with every amplitude at most 2 mm.
    pub fn default_sag() -> Self {
        SagModel {
            source: SagTerms {
                sin_rotation: [0.8, -0.6, 0.5],
                sin_angulation: [0.2, -0.9, 0.3],
                sin_rotation_cos_angulation: [0.4, 0.5, -0.2],
                ..SagTerms::default()
            },
            detector: SagTerms {
                constant: [0.0, -0.5, 0.0],
                sin_rotation: [-1.2, 1.0, 0.6],
                sin_angulation: [0.4, 1.5, -0.4],
                sin_rotation_cos_angulation: [-0.6, -0.9, 0.3],
                ..SagTerms::default()
            },
        }
    }

    /// `base` moved to the given angles with the sag displacements applied.
    pub fn apply(&self, base: &CArmCamera, rotation_deg: f64, angulation_deg: f64) -> CArmCamera {
        let mut cam = base.clone().at_angles(rotation_deg, angulation_deg);
        cam.source_offset_mm = self.source.at(rotation_deg, angulation_deg);
        cam.detector_offset_mm = self.detector.at(rotation_deg, angulation_deg);
        cam
    }
}

/// Converts a DLT estimate into source/detector offsets of `nominal`
/// (whose angles are the sensor readings). Detector orientation is taken
/// from the sensors; the estimate supplies source position, focal distance
/// and principal point.
pub fn offsets_from_dlt(est: &DltEstimate, nominal: &CArmCamera) -> ([f64; 3], [f64; 3]) {
    let mut clean = nominal.clone();
    clean.source_offset_mm = [0.0; 3];
    clean.detector_offset_mm = [0.0; 3];
    let f = clean.frame();
    let p = &est.matrix;
    let row = |r: usize| Vector3::new(p[(r, 0)], p[(r, 1)], p[(r, 2)]);
    let pitch = nominal.pixel_pitch_mm;
    let c = nominal.center_px();
    let (ru, rv) = (row(0), row(1));
    let h = 0.5 * (ru.dot(&f.u_axis) + rv.dot(&f.v_axis)) * pitch;
    let ku = ru.dot(&f.viewing_axis);
    let kv = rv.dot(&f.viewing_axis);
    let s = est.source.coords;
    let d = s + f.u_axis * ((c[0] - ku) * pitch) + f.v_axis * ((c[1] - kv) * pitch) + f.viewing_axis * h;
    let so = s - f.source.coords;
    let dof = d - f.detector_center.coords;
    ([so.x, so.y, so.z], [dof.x, dof.y, dof.z])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRange {
    pub rotation_deg: (f64, f64),
    pub angulation_deg: (f64, f64),
    pub spacing_deg: f64,
}

impl Default for GridRange {
    fn default() -> Self {
        GridRange {
            rotation_deg: (-120.0, 120.0),
            angulation_deg: (-40.0, 40.0),
            spacing_deg: 20.0,
        }
    }
}

impl GridRange {
    fn counts(&self) -> Result<(usize, usize)> {
        let count = |(lo, hi): (f64, f64)| -> Result<usize> {
            let steps = (hi - lo) / self.spacing_deg;
            if !(self.spacing_deg > 0.0) || !(hi > lo) || (steps - steps.round()).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "range {lo}..{hi} is not a whole number of {}° steps",
                    self.spacing_deg
                )));
            }
            Ok(steps.round() as usize + 1)
        };
        Ok((count(self.rotation_deg)?, count(self.angulation_deg)?))
    }
}

/// Detector format for calibration runs; the marker phantom must project
/// inside it. Only marker positions are simulated, so full resolution is cheap.
pub const CALIBRATION_FORMAT_CM: f64 = 48.0;
pub const CALIBRATION_DETECTOR_DIMS: [usize; 2] = [1024, 1024];

pub fn calibration_camera() -> CArmCamera {
    CArmCamera::with_format(CALIBRATION_FORMAT_CM, CALIBRATION_DETECTOR_DIMS)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerAcquisition {
    pub circumradius_mm: f64,
    pub noise_px: f64,
    pub seed: u64,
}

impl Default for MarkerAcquisition {
    fn default() -> Self {
        MarkerAcquisition {
            circumradius_mm: 100.0,
            noise_px: 0.25,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationGrid {
    pub range: GridRange,
    /// Node cameras, rotation index fastest.
    pub cameras: Vec<CArmCamera>,
    pub reprojection_rms_px: Vec<f64>,
}

/// Calibrates every node of `range` on `base` under `sag`.
pub fn build_calibration_grid(
    sag: &SagModel,
    base: &CArmCamera,
    range: &GridRange,
    acq: &MarkerAcquisition,
) -> Result<CalibrationGrid> {
    let (nr, na) = range.counts()?;
    let phantom = dodecahedron_vertices(acq.circumradius_mm)?;
    let nodes: Vec<Result<(CArmCamera, f64)>> = (0..nr * na)
        .into_par_iter()
        .map(|idx| {
            let rot = range.rotation_deg.0 + (idx % nr) as f64 * range.spacing_deg;
            let ang = range.angulation_deg.0 + (idx / nr) as f64 * range.spacing_deg;
            let truth = sag.apply(base, rot, ang);
            let px = project_markers(
                &phantom,
                &truth,
                &RigidTransform::identity(),
                acq.noise_px,
                derive_seed(acq.seed, &[idx as u64]),
            )?;
            let est = estimate_projection_dlt(&phantom.points, &px)?;
            let mut cam = base.clone().at_angles(rot, ang);
            let (so, d) = offsets_from_dlt(&est, &cam);
            cam.source_offset_mm = so;
            cam.detector_offset_mm = d;
            Ok((cam, est.reprojection_rms_px))
        })
        .collect();
    let mut cameras = Vec::with_capacity(nodes.len());
    let mut rms = Vec::with_capacity(nodes.len());
    for n in nodes {
        let (c, r) = n?;
        cameras.push(c);
        rms.push(r);
    }
    Ok(CalibrationGrid {
        range: *range,
        cameras,
        reprojection_rms_px: rms,
    })
}

impl CalibrationGrid {
    /// Source and detector offsets at arbitrary angles, bilinear between nodes.
    pub fn interpolate_offsets(&self, rotation_deg: f64, angulation_deg: f64) -> Result<([f64; 3], [f64; 3])> {
        let (nr, na) = self.range.counts()?;
        if self.cameras.len() != nr * na {
            return Err(Error::InvalidArgument(format!(
                "grid holds {} cameras, range implies {}",
                self.cameras.len(),
                nr * na
            )));
        }
        let r = &self.range;
        let fr = (rotation_deg - r.rotation_deg.0) / r.spacing_deg;
        let fa = (angulation_deg - r.angulation_deg.0) / r.spacing_deg;
        let tol = 1e-9;
        if !(fr >= -tol && fr <= (nr - 1) as f64 + tol && fa >= -tol && fa <= (na - 1) as f64 + tol) {
            return Err(Error::OutOfCalibratedRange {
                rotation_deg,
                angulation_deg,
            });
        }
        let fr = fr.clamp(0.0, (nr - 1) as f64);
        let fa = fa.clamp(0.0, (na - 1) as f64);
        let i0 = (fr.floor() as usize).min(nr - 2);
        let j0 = (fa.floor() as usize).min(na - 2);
        let (wr, wa) = (fr - i0 as f64, fa - j0 as f64);
        let node = |i: usize, j: usize| &self.cameras[i + nr * j];
        let mix = |get: fn(&CArmCamera) -> [f64; 3]| -> [f64; 3] {
            let (a, b) = (get(node(i0, j0)), get(node(i0 + 1, j0)));
            let (c, d) = (get(node(i0, j0 + 1)), get(node(i0 + 1, j0 + 1)));
            [0, 1, 2].map(|k| (1.0 - wa) * ((1.0 - wr) * a[k] + wr * b[k]) + wa * ((1.0 - wr) * c[k] + wr * d[k]))
        };
        Ok((mix(|c| c.source_offset_mm), mix(|c| c.detector_offset_mm)))
    }

    /// Node camera geometry at arbitrary angles with interpolated offsets.
    pub fn interpolate_camera(&self, rotation_deg: f64, angulation_deg: f64) -> Result<CArmCamera> {
        self.apply_to(&self.cameras[0], rotation_deg, angulation_deg)
    }

    /// `camera` (any format) moved to the given angles with interpolated offsets.
    pub fn apply_to(&self, camera: &CArmCamera, rotation_deg: f64, angulation_deg: f64) -> Result<CArmCamera> {
        let (so, d) = self.interpolate_offsets(rotation_deg, angulation_deg)?;
        let mut cam = camera.clone().at_angles(rotation_deg, angulation_deg);
        cam.source_offset_mm = so;
        cam.detector_offset_mm = d;
        Ok(cam)
    }
}

/// Patient transform under which the nominal camera (offsets removed) sees
/// approximately what `camera` sees: a translation by `-g`, where the
/// in-plane part of `g` moves the iso-center image like the offsets do and
/// the depth part is the mean source/detector depth offset.
pub fn equivalent_shift(camera: &CArmCamera) -> RigidTransform {
    let f = camera.frame();
    let s = Vector3::from(camera.source_offset_mm);
    let d = Vector3::from(camera.detector_offset_mm);
    let (sod, sid) = (camera.source_to_iso_mm, camera.source_to_detector_mm);
    let n = f.viewing_axis;
    let s_perp = s - n * s.dot(&n);
    let d_perp = d - n * d.dot(&n);
    let g = (s_perp * (sid - sod) + d_perp * sod) / sid + n * (0.5 * (s.dot(&n) + d.dot(&n)));
    RigidTransform::translation(-g.x, -g.y, -g.z)
}

/// Initial patient transform from the calibrated geometry at the sensor angles.
pub fn machine_register(grid: &CalibrationGrid, rotation_deg: f64, angulation_deg: f64) -> Result<RigidTransform> {
    Ok(equivalent_shift(
        &grid.interpolate_camera(rotation_deg, angulation_deg)?,
    ))
}

/// Pose the calibration ought to report: the equivalent shift of the true
/// sagged camera.
pub fn machine_truth(sag: &SagModel, base: &CArmCamera, rotation_deg: f64, angulation_deg: f64) -> RigidTransform {
    equivalent_shift(&sag.apply(base, rotation_deg, angulation_deg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::pose_error_for_camera;

    #[test]
    fn dodecahedron_geometry() {
        let d = dodecahedron_vertices(3f64.sqrt()).unwrap();
        assert_eq!(d.points.len(), 20);
        assert!(d
            .points
            .iter()
            .any(|p| (p[0] - 1.0).abs() < 1e-12 && (p[1] - 1.0).abs() < 1e-12 && (p[2] - 1.0).abs() < 1e-12));
        for p in &d.points {
            assert!((Vector3::from(*p).norm() - 3f64.sqrt()).abs() < 1e-9);
        }
        let mut dists = Vec::new();
        for i in 0..20 {
            for j in i + 1..20 {
                dists.push((Vector3::from(d.points[i]) - Vector3::from(d.points[j])).norm());
            }
        }
        let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min > 1e-6);
        assert_eq!(dists.iter().filter(|&&x| (x - min).abs() < 1e-9).count(), 30);
    }

    #[test]
    fn noiseless_dlt_recovers_matrix_and_source() {
        let cam = SagModel::default_sag().apply(&CArmCamera::default(), 35.0, -12.0);
        let ph = dodecahedron_vertices(80.0).unwrap();
        let pose = RigidTransform::from_parts_deg([3.0, -2.0, 5.0], [4.0, -7.0, 2.0]);
        let px = project_markers(&ph, &cam, &pose, 0.0, 1).unwrap();
        let world: Vec<[f64; 3]> = ph
            .points
            .iter()
            .map(|p| pose.apply(&Point3::from(*p)).coords.into())
            .collect();
        let est = estimate_projection_dlt(&world, &px).unwrap();
        let mut truth = cam.projection_map(&RigidTransform::identity());
        truth /= truth.fixed_view::<1, 3>(2, 0).norm();
        assert!((est.matrix - truth).abs().max() < 1e-9 * truth.abs().max());
        assert!((est.source - cam.frame().source).norm() < 1e-6);
        assert!(est.reprojection_rms_px < 1e-8);
        let (so, d) = offsets_from_dlt(&est, &cam);
        for k in 0..3 {
            assert!((so[k] - cam.source_offset_mm[k]).abs() < 1e-6);
            assert!((d[k] - cam.detector_offset_mm[k]).abs() < 1e-6);
        }
        // rotation part matches the arm
        assert!((est.rotation.transpose() - cam.arm_rotation()).abs().max() < 1e-9);
    }

    #[test]
    fn dlt_preconditions() {
        let ph = dodecahedron_vertices(80.0).unwrap();
        let cam = CArmCamera::default();
        let px = project_markers(&ph, &cam, &RigidTransform::identity(), 0.0, 0).unwrap();
        assert!(matches!(
            estimate_projection_dlt(&ph.points[..5], &px[..5]),
            Err(Error::TooFewCorrespondences { needed: 6, got: 5 })
        ));
        let flat: Vec<[f64; 3]> = (0..8).map(|i| [i as f64 * 10.0, (i * i) as f64, 0.0]).collect();
        let fpx: Vec<[f64; 2]> = flat.iter().map(|p| cam.project(&Point3::from(*p)).unwrap()).collect();
        assert!(matches!(
            estimate_projection_dlt(&flat, &fpx),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn markers_behind_source_are_rejected() {
        let ph = dodecahedron_vertices(80.0).unwrap();
        let pose = RigidTransform::translation(0.0, 0.0, -900.0);
        assert!(matches!(
            project_markers(&ph, &CArmCamera::default(), &pose, 0.0, 0),
            Err(Error::BehindSource { .. })
        ));
    }

    #[test]
    fn no_sag_gives_identity_init_and_node_is_exact() {
        let base = CArmCamera::default();
        let acq = MarkerAcquisition {
            noise_px: 0.0,
            ..MarkerAcquisition::default()
        };
        let grid = build_calibration_grid(&SagModel::none(), &base, &GridRange::default(), &acq).unwrap();
        let init = machine_register(&grid, 13.0, -27.0).unwrap();
        assert!(init.max_abs_diff(&RigidTransform::identity()) < 1e-6);

        let sag = SagModel::default_sag();
        let grid = build_calibration_grid(&sag, &base, &GridRange::default(), &acq).unwrap();
        let node = grid.interpolate_camera(40.0, 20.0).unwrap();
        assert_eq!(node, grid.cameras[8 + 13 * 3]);
        let e = pose_error_for_camera(
            &machine_register(&grid, 40.0, 20.0).unwrap(),
            &machine_truth(&sag, &base, 40.0, 20.0),
            &Point3::origin(),
            &node,
        );
        assert!(e.translation_mm < 1e-6);
        assert!(matches!(
            grid.interpolate_camera(130.0, 0.0),
            Err(Error::OutOfCalibratedRange { .. })
        ));
    }

    #[test]
    fn bilinear_reproduces_bilinear_sag() {
        let base = CArmCamera::default();
        let sag = SagModel {
            source: SagTerms {
                constant: [0.3, -0.2, 0.1],
                per_deg_rotation: [0.01, 0.005, -0.002],
                per_deg_angulation: [-0.004, 0.02, 0.003],
                ..SagTerms::default()
            },
            detector: SagTerms {
                per_deg_rotation: [-0.01, 0.002, 0.004],
                per_deg_angulation: [0.006, -0.01, 0.0],
                ..SagTerms::default()
            },
        };
        let acq = MarkerAcquisition {
            noise_px: 0.0,
            ..MarkerAcquisition::default()
        };
        let grid = build_calibration_grid(&sag, &base, &GridRange::default(), &acq).unwrap();
        let got = grid.interpolate_camera(-50.0, 10.0).unwrap();
        let want = sag.apply(&base, -50.0, 10.0);
        for k in 0..3 {
            assert!((got.source_offset_mm[k] - want.source_offset_mm[k]).abs() < 1e-9);
            assert!((got.detector_offset_mm[k] - want.detector_offset_mm[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn equivalent_shift_matches_rigid_arm_translation() {
        let mut cam = CArmCamera::default().at_angles(25.0, 15.0);
        cam.source_offset_mm = [1.0, -2.0, 0.5];
        cam.detector_offset_mm = [1.0, -2.0, 0.5];
        let shift = equivalent_shift(&cam);
        let nominal = CArmCamera::default().at_angles(25.0, 15.0);
        for p in [[0.0, 0.0, 0.0], [40.0, -30.0, 20.0], [-60.0, 10.0, -45.0]] {
            let p = Point3::from(p);
            let a = cam.project(&p).unwrap();
            let b = nominal.project(&shift.apply(&p)).unwrap();
            assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn reprojection_residual_matches_noise_level() {
        let ph = dodecahedron_vertices(100.0).unwrap();
        let cam = SagModel::default_sag().apply(&calibration_camera(), -30.0, 10.0);
        let sigma = 0.5;
        let mut mean_sq = 0.0;
        for seed in 0..100 {
            let px = project_markers(&ph, &cam, &RigidTransform::identity(), sigma, seed).unwrap();
            mean_sq += estimate_projection_dlt(&ph.points, &px)
                .unwrap()
                .reprojection_rms_px
                .powi(2)
                / 100.0;
        }
        // 40 coordinates, 11 fitted parameters
        let expected = sigma * (29.0f64 / 40.0).sqrt();
        assert!(
            (mean_sq.sqrt() / expected - 1.0).abs() < 0.05,
            "{} vs {expected}",
            mean_sq.sqrt()
        );
        let a = project_markers(&ph, &cam, &RigidTransform::identity(), 0.0, 1).unwrap();
        assert_eq!(
            a,
            project_markers(&ph, &cam, &RigidTransform::identity(), 0.0, 2).unwrap()
        );
    }

    #[test]
    fn residual_is_invariant_to_pixel_similarity() {
        let ph = dodecahedron_vertices(100.0).unwrap();
        let cam = calibration_camera().at_angles(50.0, -20.0);
        let px = project_markers(&ph, &cam, &RigidTransform::identity(), 0.7, 5).unwrap();
        let base = estimate_projection_dlt(&ph.points, &px).unwrap().reprojection_rms_px;
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let k = 3.5;
        let moved: Vec<[f64; 2]> = px
            .iter()
            .map(|p| [k * (c * p[0] - s * p[1]) + 40.0, k * (s * p[0] + c * p[1]) - 900.0])
            .collect();
        let other = estimate_projection_dlt(&ph.points, &moved).unwrap().reprojection_rms_px;
        assert!(
            (other / k - base).abs() < 1e-9 * base.max(1.0),
            "{base} vs {}",
            other / k
        );
    }

    fn max_interpolation_error(spacing: f64) -> f64 {
        let base = calibration_camera();
        let sag = SagModel::default_sag();
        let range = GridRange {
            rotation_deg: (-80.0, 80.0),
            angulation_deg: (-40.0, 40.0),
            spacing_deg: spacing,
        };
        let acq = MarkerAcquisition {
            noise_px: 0.0,
            ..MarkerAcquisition::default()
        };
        let grid = build_calibration_grid(&sag, &base, &range, &acq).unwrap();
        let mut worst = 0.0f64;
        for i in 0..=32 {
            for j in 0..=16 {
                let (r, a) = (-80.0 + 5.0 * i as f64, -40.0 + 5.0 * j as f64);
                let got = grid
                    .interpolate_camera(r + 1.3, a + 0.7)
                    .unwrap_or_else(|_| grid.interpolate_camera(r, a).unwrap());
                let want = sag.apply(&base, got.carm_rotation_deg, got.carm_angulation_deg);
                for k in 0..3 {
                    worst = worst
                        .max((got.source_offset_mm[k] - want.source_offset_mm[k]).abs())
                        .max((got.detector_offset_mm[k] - want.detector_offset_mm[k]).abs());
                }
            }
        }
        worst
    }

    #[test]
    fn interpolation_error_shrinks_with_spacing() {
        let e = [20.0, 10.0, 5.0].map(max_interpolation_error);
        assert!(e[0] > e[1] && e[1] > e[2], "{e:?}");
        assert!(e[0] < 0.1);
    }

    #[test]
    fn decomposed_source_within_noise_bounds() {
        let ph = dodecahedron_vertices(100.0).unwrap();
        let cam = SagModel::default_sag().apply(&calibration_camera(), 70.0, 30.0);
        let truth = cam.frame().source;
        let f = cam.frame();
        let (mut lateral, mut depth) = (0.0f64, 0.0f64);
        for seed in 0..50 {
            let px = project_markers(&ph, &cam, &RigidTransform::identity(), 0.25, seed).unwrap();
            let d = estimate_projection_dlt(&ph.points, &px).unwrap().source - truth;
            let along = d.dot(&f.viewing_axis);
            depth = depth.max(along.abs());
            lateral = lateral.max((d - f.viewing_axis * along).norm());
        }
        // depth is the weakly determined direction of a DLT camera
        assert!(lateral < 10.0 && depth < 30.0, "lateral {lateral} depth {depth}");
    }
}

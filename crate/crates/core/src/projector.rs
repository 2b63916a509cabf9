//! Digitally reconstructed radiographs.
//!
//! Each pixel is the line integral of attenuation from the source through the
//! pixel center. Samples sit at fixed arc lengths `(k + ½)·step` from the
//! source, so the sample set never depends on the volume box: the box only
//! decides which samples are skipped, and skipped samples are exactly zero.
//! That makes the projector linear and translation-consistent to rounding.

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::CArmCamera;
use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::image::Image2D;
use crate::volume::Volume;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Trilinear,
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrrConfig {
    pub step_mm: f64,
    pub interpolation: Interpolation,
    pub downsample: usize,
}

impl DrrConfig {
    /// Half the smallest voxel spacing, trilinear, full resolution.
    pub fn for_volume(volume: &Volume) -> Self {
        DrrConfig {
            step_mm: 0.5 * volume.min_spacing(),
            interpolation: Interpolation::Trilinear,
            downsample: 1,
        }
    }

    pub fn with_step(mut self, step_mm: f64) -> Self {
        self.step_mm = step_mm;
        self
    }

    pub fn with_downsample(mut self, downsample: usize) -> Self {
        self.downsample = downsample;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_mm > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "step_mm must be positive, got {}",
                self.step_mm
            )));
        }
        if self.downsample == 0 {
            return Err(Error::InvalidArgument("downsample must be >= 1".into()));
        }
        Ok(())
    }
}

/// Slab test. Returns the parametric interval `(t_near, t_far)` over which
/// `origin + t·direction` lies inside `[lo, hi]`, or `None` on a miss. The
/// interval is not clipped to `t ≥ 0`.
pub fn ray_box_intersect(origin: &[f64; 3], direction: &[f64; 3], lo: &[f64; 3], hi: &[f64; 3]) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if direction[a] == 0.0 {
            if origin[a] < lo[a] || origin[a] > hi[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / direction[a];
        let mut ta = (lo[a] - origin[a]) * inv;
        let mut tb = (hi[a] - origin[a]) * inv;
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    if t0 <= t1 {
        Some((t0, t1))
    } else {
        None
    }
}

/// A volume laid out for ray casting: zero-padded by one voxel on every side
/// so trilinear lookups never need bounds checks, plus the index-space box
/// that encloses all non-zero voxels.
#[derive(Debug, Clone)]
pub struct PreparedVolume {
    padded: Vec<f32>,
    dims: [usize; 3],
    stride_y: usize,
    stride_z: usize,
    spacing: [f64; 3],
    origin: [f64; 3],
    /// Support box in unpadded index coordinates; `None` when all zero.
    support: Option<([f64; 3], [f64; 3])>,
    face_box: ([f64; 3], [f64; 3]),
}

/// Per-render ray setup in the volume's index space.
struct RayFrame {
    source_idx: [f64; 3],
    pixel0: Vector3<f64>,
    du: Vector3<f64>,
    dv: Vector3<f64>,
    source_vol: Vector3<f64>,
}

impl PreparedVolume {
    pub fn new(volume: &Volume) -> Self {
        let [nx, ny, nz] = volume.dims();
        let (px, py, pz) = (nx + 2, ny + 2, nz + 2);
        let mut padded = vec![0.0f32; px * py * pz];
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        let src = volume.data();
        for z in 0..nz {
            for y in 0..ny {
                let row = &src[nx * (y + ny * z)..nx * (y + ny * z) + nx];
                let dst = 1 + px * ((y + 1) + py * (z + 1));
                padded[dst..dst + nx].copy_from_slice(row);
                for (x, &v) in row.iter().enumerate() {
                    if v != 0.0 {
                        any = true;
                        let p = [x, y, z];
                        for a in 0..3 {
                            lo[a] = lo[a].min(p[a]);
                            hi[a] = hi[a].max(p[a]);
                        }
                    }
                }
            }
        }
        let dims = volume.dims();
        let support = any.then(|| {
            let mut l = [0.0; 3];
            let mut h = [0.0; 3];
            for a in 0..3 {
                l[a] = lo[a] as f64 - 1.0;
                h[a] = hi[a] as f64 + 1.0;
            }
            (l, h)
        });
        let face_box = (
            [-0.5; 3],
            [dims[0] as f64 - 0.5, dims[1] as f64 - 0.5, dims[2] as f64 - 0.5],
        );
        PreparedVolume {
            padded,
            dims,
            stride_y: px,
            stride_z: px * py,
            spacing: volume.spacing_mm(),
            origin: volume.origin_mm(),
            support,
            face_box,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    fn to_index(&self, p: &Vector3<f64>) -> [f64; 3] {
        [
            (p.x - self.origin[0]) / self.spacing[0],
            (p.y - self.origin[1]) / self.spacing[1],
            (p.z - self.origin[2]) / self.spacing[2],
        ]
    }

    /// Trilinear sample at unpadded index coordinates inside `[-1, n]`.
    #[inline(always)]
    fn trilinear(&self, x: f64, y: f64, z: f64) -> f64 {
        let (x, y, z) = (x + 1.0, y + 1.0, z + 1.0);
        let x0 = (x as usize).min(self.dims[0]);
        let y0 = (y as usize).min(self.dims[1]);
        let z0 = (z as usize).min(self.dims[2]);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let fz = z - z0 as f64;
        let b = x0 + self.stride_y * y0 + self.stride_z * z0;
        let d = &self.padded;
        let sy = self.stride_y;
        let sz = self.stride_z;
        let c00 = d[b] as f64 + (d[b + 1] as f64 - d[b] as f64) * fx;
        let c10 = d[b + sy] as f64 + (d[b + sy + 1] as f64 - d[b + sy] as f64) * fx;
        let c01 = d[b + sz] as f64 + (d[b + sz + 1] as f64 - d[b + sz] as f64) * fx;
        let c11 = d[b + sy + sz] as f64 + (d[b + sy + sz + 1] as f64 - d[b + sy + sz] as f64) * fx;
        let c0 = c00 + (c10 - c00) * fy;
        let c1 = c01 + (c11 - c01) * fy;
        c0 + (c1 - c0) * fz
    }

    #[inline(always)]
    fn nearest(&self, x: f64, y: f64, z: f64) -> f64 {
        let xi = ((x + 1.0).round() as usize).min(self.dims[0] + 1);
        let yi = ((y + 1.0).round() as usize).min(self.dims[1] + 1);
        let zi = ((z + 1.0).round() as usize).min(self.dims[2] + 1);
        self.padded[xi + self.stride_y * yi + self.stride_z * zi] as f64
    }

    fn ray_frame(&self, camera: &CArmCamera, patient: &RigidTransform, downsample: usize) -> Result<RayFrame> {
        let frame = camera.frame();
        let inv = patient.inverse();
        let source_vol = inv.apply(&frame.source).coords;
        let source_idx = self.to_index(&source_vol);
        let (lo, hi) = self.face_box;
        if (0..3).all(|a| source_idx[a] >= lo[a] && source_idx[a] <= hi[a]) {
            return Err(Error::InvalidArgument("X-ray source lies inside the volume box".into()));
        }
        let ds = downsample as f64;
        let half = (ds - 1.0) * 0.5;
        let p00 = camera.pixel_position(&frame, half, half);
        let p10 = camera.pixel_position(&frame, half + ds, half);
        let p01 = camera.pixel_position(&frame, half, half + ds);
        let pixel0 = inv.apply(&p00).coords;
        let du = inv.apply(&p10).coords - pixel0;
        let dv = inv.apply(&p01).coords - pixel0;
        Ok(RayFrame {
            source_idx,
            pixel0,
            du,
            dv,
            source_vol,
        })
    }

    /// Line integral for one ray given in the volume frame, `dir` unit length.
    #[inline]
    fn integrate(&self, rf: &RayFrame, dir: &Vector3<f64>, step: f64, interp: Interpolation) -> f64 {
        let Some((lo, hi)) = &self.support else {
            return 0.0;
        };
        let d = [
            dir.x / self.spacing[0],
            dir.y / self.spacing[1],
            dir.z / self.spacing[2],
        ];
        let Some((t0, t1)) = ray_box_intersect(&rf.source_idx, &d, lo, hi) else {
            return 0.0;
        };
        let t0 = t0.max(0.0);
        if t1 <= t0 {
            return 0.0;
        }
        let k0 = (t0 / step - 0.5).ceil().max(0.0) as i64;
        let k1 = (t1 / step - 0.5).floor() as i64;
        if k1 < k0 {
            return 0.0;
        }
        let t_first = (k0 as f64 + 0.5) * step;
        let s = &rf.source_idx;
        let (mut x, mut y, mut z) = (s[0] + d[0] * t_first, s[1] + d[1] * t_first, s[2] + d[2] * t_first);
        let (dx, dy, dz) = (d[0] * step, d[1] * step, d[2] * step);
        let mut acc = 0.0f64;
        match interp {
            Interpolation::Trilinear => {
                for _ in k0..=k1 {
                    acc += self.trilinear(x, y, z);
                    x += dx;
                    y += dy;
                    z += dz;
                }
            }
            Interpolation::Nearest => {
                for _ in k0..=k1 {
                    acc += self.nearest(x, y, z);
                    x += dx;
                    y += dy;
                    z += dz;
                }
            }
        }
        // (1/cm)·mm → dimensionless
        acc * step * 0.1
    }

    /// Renders a DRR. Pixels outside `mask` (when given) are left at zero.
    pub fn render(
        &self,
        camera: &CArmCamera,
        patient: &RigidTransform,
        cfg: &DrrConfig,
        mask: Option<&[bool]>,
    ) -> Result<Image2D> {
        cfg.validate()?;
        let [nu, nv] = camera.downsampled_dims(cfg.downsample)?;
        let mut data = vec![0.0f32; nu * nv];
        self.render_into(camera, patient, cfg, mask, &mut data)?;
        Image2D::new(
            [nu, nv],
            camera.pixel_pitch_mm * cfg.downsample as f64,
            data,
            camera.fov_diameter_cm,
        )
    }

    pub fn render_into(
        &self,
        camera: &CArmCamera,
        patient: &RigidTransform,
        cfg: &DrrConfig,
        mask: Option<&[bool]>,
        out: &mut [f32],
    ) -> Result<()> {
        cfg.validate()?;
        let [nu, nv] = camera.downsampled_dims(cfg.downsample)?;
        if out.len() != nu * nv || mask.is_some_and(|m| m.len() != nu * nv) {
            return Err(Error::DimsMismatch {
                expected: nu * nv,
                found: out.len(),
            });
        }
        let rf = self.ray_frame(camera, patient, cfg.downsample)?;
        let step = cfg.step_mm;
        let interp = cfg.interpolation;
        out.par_chunks_mut(nu).enumerate().for_each(|(j, row)| {
            let row_start = rf.pixel0 + rf.dv * j as f64;
            for (i, px) in row.iter_mut().enumerate() {
                if let Some(m) = mask {
                    if !m[j * nu + i] {
                        *px = 0.0;
                        continue;
                    }
                }
                let p = row_start + rf.du * i as f64;
                let dir = (p - rf.source_vol).normalize();
                *px = self.integrate(&rf, &dir, step, interp) as f32;
            }
        });
        Ok(())
    }

    /// Exact transpose of the trilinear projector: scatters each pixel value
    /// back along its ray with the same sample positions and weights.
    pub fn backproject_adjoint(
        &self,
        camera: &CArmCamera,
        patient: &RigidTransform,
        cfg: &DrrConfig,
        image: &Image2D,
    ) -> Result<Vec<f64>> {
        cfg.validate()?;
        let [nu, nv] = camera.downsampled_dims(cfg.downsample)?;
        if image.dims() != [nu, nv] {
            return Err(Error::DimMismatch(image.dims(), [nu, nv]));
        }
        let rf = self.ray_frame(camera, patient, cfg.downsample)?;
        let [nx, ny, nz] = self.dims;
        let mut out = vec![0.0f64; nx * ny * nz];
        // full box, not the support: the adjoint must not depend on the data
        let lo = [-1.0; 3];
        let hi = [nx as f64, ny as f64, nz as f64];
        let step = cfg.step_mm;
        for j in 0..nv {
            for i in 0..nu {
                let w = image.get(i, j) as f64 * step * 0.1;
                if w == 0.0 {
                    continue;
                }
                let p = rf.pixel0 + rf.dv * j as f64 + rf.du * i as f64;
                let dir = (p - rf.source_vol).normalize();
                let d = [
                    dir.x / self.spacing[0],
                    dir.y / self.spacing[1],
                    dir.z / self.spacing[2],
                ];
                let Some((t0, t1)) = ray_box_intersect(&rf.source_idx, &d, &lo, &hi) else {
                    continue;
                };
                let t0 = t0.max(0.0);
                let k0 = (t0 / step - 0.5).ceil().max(0.0) as i64;
                let k1 = (t1 / step - 0.5).floor() as i64;
                for k in k0..=k1 {
                    let t = (k as f64 + 0.5) * step;
                    let s = &rf.source_idx;
                    let q = [s[0] + d[0] * t, s[1] + d[1] * t, s[2] + d[2] * t];
                    scatter_trilinear(&mut out, self.dims, q, w);
                }
            }
        }
        Ok(out)
    }
}

fn scatter_trilinear(out: &mut [f64], dims: [usize; 3], q: [f64; 3], w: f64) {
    let f = [q[0].floor(), q[1].floor(), q[2].floor()];
    let fr = [q[0] - f[0], q[1] - f[1], q[2] - f[2]];
    for c in 0..8 {
        let off = [c & 1, (c >> 1) & 1, (c >> 2) & 1];
        let mut idx = [0i64; 3];
        let mut wt = w;
        for a in 0..3 {
            idx[a] = f[a] as i64 + off[a] as i64;
            wt *= if off[a] == 1 { fr[a] } else { 1.0 - fr[a] };
        }
        if (0..3).all(|a| idx[a] >= 0 && (idx[a] as usize) < dims[a]) {
            let i = idx[0] as usize + dims[0] * (idx[1] as usize + dims[1] * idx[2] as usize);
            out[i] += wt;
        }
    }
}

pub fn render_drr(volume: &Volume, camera: &CArmCamera, patient: &RigidTransform, cfg: &DrrConfig) -> Result<Image2D> {
    PreparedVolume::new(volume).render(camera, patient, cfg, None)
}

/// Direction of the ray through full-resolution pixel `(px, py)`, world frame.
pub fn pixel_ray(camera: &CArmCamera, px: f64, py: f64) -> (Point3<f64>, Vector3<f64>) {
    let f = camera.frame();
    let p = camera.pixel_position(&f, px, py);
    (f.source, (p - f.source).normalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(n: usize, spacing: f64, mu: f32) -> Volume {
        let v = Volume::zeros_centered([n, n, n], [spacing; 3], 20.0).unwrap();
        v.with_data(vec![mu; n * n * n]).unwrap()
    }

    #[test]
    fn slab_examples() {
        let lo = [0.0; 3];
        let hi = [1.0; 3];
        assert_eq!(
            ray_box_intersect(&[-2.0, 0.5, 0.5], &[1.0, 0.0, 0.0], &lo, &hi),
            Some((2.0, 3.0))
        );
        assert_eq!(ray_box_intersect(&[-2.0, 1.5, 0.5], &[1.0, 0.0, 0.0], &lo, &hi), None);
        let (a, b) = ray_box_intersect(&[0.5, 0.5, 0.5], &[0.0, 0.0, 1.0], &lo, &hi).unwrap();
        assert_eq!(a, -b);
    }

    #[test]
    fn zero_volume_renders_zero() {
        let v = Volume::zeros_centered([8, 8, 8], [2.0; 3], 10.0).unwrap();
        let cam = CArmCamera::with_format(20.0, [16, 16]);
        let img = render_drr(&v, &cam, &RigidTransform::identity(), &DrrConfig::for_volume(&v)).unwrap();
        assert!(img.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn central_ray_matches_chord() {
        // 40 mm cube of 0.2/cm; central ray chord is 40 mm = 4 cm
        let v = cube(20, 2.0, 0.2);
        let cam = CArmCamera::with_format(20.0, [17, 17]);
        let img = render_drr(&v, &cam, &RigidTransform::identity(), &DrrConfig::for_volume(&v)).unwrap();
        let center = img.get(8, 8) as f64;
        assert!((center - 0.8).abs() / 0.8 < 0.01, "{center}");
    }

    #[test]
    fn source_inside_volume_is_rejected() {
        let v = cube(10, 200.0, 0.1);
        let cam = CArmCamera::with_format(20.0, [8, 8]);
        assert!(render_drr(&v, &cam, &RigidTransform::identity(), &DrrConfig::for_volume(&v)).is_err());
    }

    #[test]
    fn nearest_and_trilinear_agree_on_constant_interior() {
        let v = cube(16, 2.0, 0.3);
        let cam = CArmCamera::with_format(10.0, [8, 8]);
        let mut cfg = DrrConfig::for_volume(&v);
        let a = render_drr(&v, &cam, &RigidTransform::identity(), &cfg).unwrap();
        cfg.interpolation = Interpolation::Nearest;
        let b = render_drr(&v, &cam, &RigidTransform::identity(), &cfg).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() / x.max(1e-6) < 0.05);
        }
    }
}

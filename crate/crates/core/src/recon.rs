//! Rotational acquisitions and FDK cone-beam reconstruction.
//!
//! Frames are DRRs of a volume along a circular propeller trajectory. The
//! reconstruction is the Feldkamp algorithm on a flat detector: cosine
//! weighting, short-scan (Parker) weighting, row-wise ramp filtering in the
//! iso-center plane, and voxel-driven backprojection with bilinear detector
//! lookup and inverse-square depth weighting.

use std::path::Path;

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::camera::CArmCamera;
use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::image::Image2D;
use crate::io;
use crate::noise::NoiseModel;
use crate::projector::{DrrConfig, PreparedVolume};
use crate::seeds::derive_seed;
use crate::volume::{centered_origin, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub n_frames: usize,
    pub start_deg: f64,
    pub arc_deg: f64,
    pub angulation_deg: f64,
}

impl Default for Trajectory {
    fn default() -> Self {
        Trajectory {
            n_frames: 120,
            start_deg: -100.0,
            arc_deg: 200.0,
            angulation_deg: 0.0,
        }
    }
}

impl Trajectory {
    pub fn validate(&self) -> Result<()> {
        if self.n_frames < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 frames, got {}",
                self.n_frames
            )));
        }
        if !(self.arc_deg > 0.0 && self.arc_deg <= 360.0) {
            return Err(Error::InvalidArgument(format!(
                "arc must be in (0, 360], got {}",
                self.arc_deg
            )));
        }
        Ok(())
    }

    pub fn rotation_deg(&self, frame: usize) -> f64 {
        self.start_deg + frame as f64 * self.arc_deg / (self.n_frames - 1) as f64
    }

    pub fn cameras(&self, base: &CArmCamera) -> Result<Vec<CArmCamera>> {
        self.validate()?;
        Ok((0..self.n_frames)
            .map(|i| base.clone().at_angles(self.rotation_deg(i), self.angulation_deg))
            .collect())
    }
}

/// Frames of a rotational acquisition with the exact camera of each frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationalRun {
    pub trajectory: Trajectory,
    pub frames: Vec<Image2D>,
    pub cameras: Vec<CArmCamera>,
}

/// Camera describing an image rendered at `downsample`: same geometry, fewer
/// and larger pixels.
pub fn binned_camera(camera: &CArmCamera, downsample: usize) -> Result<CArmCamera> {
    let dims = camera.downsampled_dims(downsample)?;
    let mut c = camera.clone();
    c.detector_dims = dims;
    c.pixel_pitch_mm *= downsample as f64;
    Ok(c)
}

pub fn simulate_rotational_run(
    volume: &Volume,
    base: &CArmCamera,
    trajectory: &Trajectory,
    drr: &DrrConfig,
    noise: &NoiseModel,
    seed: u64,
) -> Result<RotationalRun> {
    noise.validate()?;
    drr.validate()?;
    let full = trajectory.cameras(base)?;
    let prepared = PreparedVolume::new(volume);
    let mut frames = Vec::with_capacity(full.len());
    let mut cameras = Vec::with_capacity(full.len());
    for (i, cam) in full.iter().enumerate() {
        let img = prepared.render(cam, &RigidTransform::identity(), drr, None)?;
        frames.push(noise.apply(&img, derive_seed(seed, &[i as u64]))?);
        cameras.push(binned_camera(cam, drr.downsample)?);
    }
    Ok(RotationalRun {
        trajectory: *trajectory,
        frames,
        cameras,
    })
}

impl RotationalRun {
    /// Writes `frame_NNNN.img.{json,raw}` and `frame_NNNN.cam.json` per frame
    /// plus `run.json` with the trajectory.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        io::save_json(&self.trajectory, &dir.join("run.json"))?;
        for (i, (img, cam)) in self.frames.iter().zip(&self.cameras).enumerate() {
            io::save_image(img, &dir.join(format!("frame_{i:04}")))?;
            io::save_json(cam, &dir.join(format!("frame_{i:04}.cam.json")))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let trajectory: Trajectory = io::load_json(&dir.join("run.json"))?;
        trajectory.validate()?;
        let mut frames = Vec::with_capacity(trajectory.n_frames);
        let mut cameras = Vec::with_capacity(trajectory.n_frames);
        for i in 0..trajectory.n_frames {
            frames.push(io::load_image(&dir.join(format!("frame_{i:04}")))?);
            cameras.push(io::load_json(&dir.join(format!("frame_{i:04}.cam.json")))?);
        }
        Ok(RotationalRun {
            trajectory,
            frames,
            cameras,
        })
    }
}

/// Reconstruction grid centered on the iso-center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconGrid {
    pub dims: [usize; 3],
    pub spacing_mm: f64,
    pub fov_diameter_cm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterWindow {
    #[default]
    RamLak,
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FdkConfig {
    pub window: FilterWindow,
}

/// Frequency response (FFT bin order) of the band-limited ramp filter for
/// unit sample spacing. The DC bin is exactly zero.
pub fn ramp_response(n_fft: usize, window: FilterWindow) -> Vec<f64> {
    let mut kernel = vec![Complex::new(0.0, 0.0); n_fft];
    kernel[0].re = 0.25;
    for k in (1..n_fft / 2).step_by(2) {
        let h = -1.0 / (std::f64::consts::PI * k as f64).powi(2);
        kernel[k].re = h;
        kernel[n_fft - k].re = h;
    }
    FftPlanner::new().plan_fft_forward(n_fft).process(&mut kernel);
    let mut out: Vec<f64> = kernel.iter().map(|c| c.re).collect();
    out[0] = 0.0;
    if window == FilterWindow::Hann {
        for (i, r) in out.iter_mut().enumerate() {
            let f = i.min(n_fft - i) as f64 / (n_fft / 2) as f64;
            *r *= 0.5 * (1.0 + (std::f64::consts::PI * f).cos());
        }
    }
    out
}

/// Filters every row of a `nu`-wide image in place (linear convolution, zero
/// padded) with the ramp `response` scaled by `1 / spacing`.
pub fn filter_rows(data: &mut [f64], nu: usize, response: &[f64], spacing: f64) {
    let n_fft = response.len();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n_fft);
    let inv = planner.plan_fft_inverse(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let norm = 1.0 / (n_fft as f64 * spacing);
    for row in data.chunks_mut(nu) {
        for (b, &v) in buf.iter_mut().zip(row.iter()) {
            *b = Complex::new(v, 0.0);
        }
        buf[nu..].fill(Complex::new(0.0, 0.0));
        fwd.process(&mut buf);
        for (b, r) in buf.iter_mut().zip(response) {
            *b *= *r;
        }
        inv.process(&mut buf);
        for (v, b) in row.iter_mut().zip(&buf) {
            *v = b.re * norm;
        }
    }
}

/// Short-scan weight for source angle `beta` (from the first frame) and fan
/// angle `gamma`, radians, for a scan covering `[0, scan]`. The conjugate of
/// ray `(beta, gamma)` is `(beta + pi + 2 gamma, -gamma)`.
pub fn parker_weight(beta: f64, gamma: f64, scan: f64) -> f64 {
    use std::f64::consts::{FRAC_PI_4, PI};
    let delta = 0.5 * (scan - PI);
    let w = if beta < 2.0 * (delta - gamma) {
        (FRAC_PI_4 * beta / (delta - gamma)).sin().powi(2)
    } else if beta <= PI - 2.0 * gamma {
        1.0
    } else {
        (FRAC_PI_4 * (PI + 2.0 * delta - beta) / (delta + gamma)).sin().powi(2)
    };
    if w.is_finite() {
        w.clamp(0.0, 1.0)
    } else {
        0.0
    }
}

struct FrameGeometry {
    map: [[f64; 4]; 3],
    iso_depth: f64,
    weight: f64,
    dims: [usize; 2],
}

/// FDK reconstruction in 1/cm. Frames are assumed to follow a single
/// propeller arc in increasing rotation order.
pub fn fdk_reconstruct(
    frames: &[Image2D],
    cameras: &[CArmCamera],
    grid: &ReconGrid,
    cfg: &FdkConfig,
) -> Result<Volume> {
    use std::f64::consts::PI;
    if frames.len() < 2 || frames.len() != cameras.len() {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 frames with one camera each, got {} frames and {} cameras",
            frames.len(),
            cameras.len()
        )));
    }
    let dims = frames[0].dims();
    for (img, cam) in frames.iter().zip(cameras) {
        cam.validate()?;
        if img.dims() != dims {
            return Err(Error::DimMismatch(img.dims(), dims));
        }
        if cam.detector_dims != dims {
            return Err(Error::DimMismatch(cam.detector_dims, dims));
        }
    }
    if grid.dims.contains(&0) || !(grid.spacing_mm > 0.0) {
        return Err(Error::InvalidArgument(format!("bad reconstruction grid {grid:?}")));
    }

    let n = frames.len();
    let betas: Vec<f64> = cameras
        .iter()
        .map(|c| (c.carm_rotation_deg - cameras[0].carm_rotation_deg).to_radians())
        .collect();
    let scan = betas[n - 1];
    if !(scan > 0.0) {
        return Err(Error::InvalidArgument("frames must advance in rotation".into()));
    }
    let full_scan = scan >= 2.0 * PI - 1e-9;
    // trapezoid weights over the sampled arc
    let dbeta: Vec<f64> = (0..n)
        .map(|i| {
            let lo = if i == 0 {
                betas[0]
            } else {
                0.5 * (betas[i - 1] + betas[i])
            };
            let hi = if i == n - 1 {
                betas[n - 1]
            } else {
                0.5 * (betas[i] + betas[i + 1])
            };
            hi - lo
        })
        .collect();

    let [nu, nv] = dims;
    let n_fft = (2 * nu).next_power_of_two();
    let response = ramp_response(n_fft, cfg.window);

    let filtered: Vec<(Vec<f32>, FrameGeometry)> = frames
        .par_iter()
        .zip(cameras.par_iter())
        .enumerate()
        .map(|(i, (img, cam))| {
            let f = cam.frame();
            let s = f.source;
            let h = (f.detector_center - s).dot(&f.viewing_axis);
            let iso_depth = (Point3::origin() - s).dot(&f.viewing_axis);
            let mut data: Vec<f64> = Vec::with_capacity(nu * nv);
            for j in 0..nv {
                for k in 0..nu {
                    let x = cam.pixel_position(&f, k as f64, j as f64) - s;
                    let cosw = h / x.norm();
                    let parker = if full_scan {
                        1.0
                    } else {
                        parker_weight(betas[i], (x.dot(&f.u_axis) / h).atan(), scan)
                    };
                    data.push(img.get(k, j) as f64 * cosw * parker);
                }
            }
            let spacing = cam.pixel_pitch_mm * iso_depth / h;
            filter_rows(&mut data, nu, &response, spacing);
            let m = cam.projection_map(&RigidTransform::identity());
            let scale = if full_scan { 0.5 } else { 1.0 };
            let geom = FrameGeometry {
                map: [0, 1, 2].map(|r| [0, 1, 2, 3].map(|c| m[(r, c)])),
                iso_depth,
                // 1/mm → 1/cm
                weight: dbeta[i] * scale * 10.0,
                dims,
            };
            (data.into_iter().map(|v| v as f32).collect(), geom)
        })
        .collect();

    let [gx, gy, gz] = grid.dims;
    let spacing = [grid.spacing_mm; 3];
    let origin = centered_origin(grid.dims, spacing);
    let mut out = vec![0.0f32; gx * gy * gz];
    out.par_chunks_mut(gx * gy).enumerate().for_each(|(z, slab)| {
        let mut acc = vec![0.0f64; gx * gy];
        let pz = origin[2] + z as f64 * spacing[2];
        for (q, g) in &filtered {
            for y in 0..gy {
                let py = origin[1] + y as f64 * spacing[1];
                let row = &mut acc[y * gx..(y + 1) * gx];
                let m = &g.map;
                let base = |r: usize| m[r][1] * py + m[r][2] * pz + m[r][3];
                let (b0, b1, b2) = (base(0), base(1), base(2));
                for (x, a) in row.iter_mut().enumerate() {
                    let px = origin[0] + x as f64 * spacing[0];
                    let w = b2 + m[2][0] * px;
                    if w <= 0.0 {
                        continue;
                    }
                    let u = (b0 + m[0][0] * px) / w;
                    let v = (b1 + m[1][0] * px) / w;
                    let val = bilinear(q, g.dims, u, v);
                    if val != 0.0 {
                        let r = g.iso_depth / w;
                        *a += g.weight * r * r * val;
                    }
                }
            }
        }
        for (o, a) in slab.iter_mut().zip(acc) {
            *o = a as f32;
        }
    });
    Volume::new_clamped(grid.dims, spacing, origin, out, grid.fov_diameter_cm)
}

fn bilinear(data: &[f32], dims: [usize; 2], u: f64, v: f64) -> f64 {
    let [nu, nv] = dims;
    if !(u > -1.0 && v > -1.0 && u < nu as f64 && v < nv as f64) {
        return 0.0;
    }
    let (fu, fv) = (u.floor(), v.floor());
    let (wu, wv) = (u - fu, v - fv);
    let (iu, iv) = (fu as i64, fv as i64);
    let at = |a: i64, b: i64| -> f64 {
        if a < 0 || b < 0 || a >= nu as i64 || b >= nv as i64 {
            0.0
        } else {
            data[a as usize + nu * b as usize] as f64
        }
    };
    (1.0 - wv) * ((1.0 - wu) * at(iu, iv) + wu * at(iu + 1, iv))
        + wv * ((1.0 - wu) * at(iu, iv + 1) + wu * at(iu + 1, iv + 1))
}

/// A reconstruction together with the run it came from. Every frame is
/// registered to the reconstruction by the identity transform.
#[derive(Debug, Clone)]
pub struct GroundTruthDataset {
    pub reconstruction: Volume,
    pub run: RotationalRun,
}

impl GroundTruthDataset {
    pub fn len(&self) -> usize {
        self.run.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.run.frames.is_empty()
    }

    /// Frame image, its camera and the ground-truth patient transform.
    pub fn pair(&self, frame: usize) -> Option<(&Image2D, &CArmCamera, RigidTransform)> {
        Some((
            self.run.frames.get(frame)?,
            self.run.cameras.get(frame)?,
            RigidTransform::identity(),
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub trajectory: Trajectory,
    pub noise: NoiseModel,
    /// Frames are rendered at `detector_dims / downsample`.
    pub downsample: usize,
    pub grid: ReconGrid,
    pub fdk: FdkConfig,
}

/// Simulates a run of `volume` (no motion between frames) and reconstructs it.
pub fn ground_truth_pairs(
    volume: &Volume,
    base: &CArmCamera,
    cfg: &RunConfig,
    seed: u64,
) -> Result<GroundTruthDataset> {
    let drr = DrrConfig::for_volume(volume).with_downsample(cfg.downsample);
    let run = simulate_rotational_run(volume, base, &cfg.trajectory, &drr, &cfg.noise, seed)?;
    let reconstruction = fdk_reconstruct(&run.frames, &run.cameras, &cfg.grid, &cfg.fdk)?;
    Ok(GroundTruthDataset { reconstruction, run })
}

/// Normalized cross-correlation of two equally sized sample sets.
pub fn normalized_cross_correlation(a: &[f32], b: &[f32]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    let ma = a.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mb = b.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x as f64 - ma, y as f64 - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    sab / (saa * sbb).sqrt()
}

/// Samples `volume` trilinearly at the voxel centers of `grid` (zero outside).
pub fn resample_to_grid(volume: &Volume, grid: &ReconGrid) -> Vec<f32> {
    let spacing = [grid.spacing_mm; 3];
    let origin = centered_origin(grid.dims, spacing);
    let [gx, gy, gz] = grid.dims;
    let mut out = Vec::with_capacity(gx * gy * gz);
    for z in 0..gz {
        for y in 0..gy {
            for x in 0..gx {
                let p = Vector3::new(
                    origin[0] + x as f64 * spacing[0],
                    origin[1] + y as f64 * spacing[1],
                    origin[2] + z as f64 * spacing[2],
                );
                out.push(sample_trilinear(volume, &p) as f32);
            }
        }
    }
    out
}

fn sample_trilinear(v: &Volume, p: &Vector3<f64>) -> f64 {
    let o = v.origin_mm();
    let s = v.spacing_mm();
    let d = v.dims();
    let q = [0, 1, 2].map(|a| (p[a] - o[a]) / s[a]);
    let f = q.map(f64::floor);
    let mut acc = 0.0;
    for c in 0..8 {
        let off = [c & 1, (c >> 1) & 1, (c >> 2) & 1];
        let mut w = 1.0;
        let mut idx = [0usize; 3];
        let mut inside = true;
        for a in 0..3 {
            let i = f[a] as i64 + off[a] as i64;
            let fr = q[a] - f[a];
            w *= if off[a] == 1 { fr } else { 1.0 - fr };
            if i < 0 || i >= d[a] as i64 {
                inside = false;
            } else {
                idx[a] = i as usize;
            }
        }
        if inside {
            acc += w * v.get(idx[0], idx[1], idx[2]) as f64;
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::Ellipsoid;
    use crate::phantom::{generate_phantom, MaterialEllipsoid, PhantomSpec};

    fn sphere_volume() -> Volume {
        let mut spec = PhantomSpec::empty([64, 64, 64], [1.0; 3]);
        spec.extra.push(MaterialEllipsoid {
            shape: Ellipsoid::new("sphere", [0.0; 3], [20.0; 3]),
            mu: 0.3,
        });
        generate_phantom(&spec).unwrap()
    }

    fn small_camera() -> CArmCamera {
        CArmCamera::with_format(15.0, [128, 128])
    }

    #[test]
    fn trajectory_spacing() {
        let t = Trajectory::default();
        let cams = t.cameras(&small_camera()).unwrap();
        assert_eq!(cams.len(), 120);
        let d: Vec<f64> = cams
            .windows(2)
            .map(|w| w[1].carm_rotation_deg - w[0].carm_rotation_deg)
            .collect();
        assert!(d.iter().all(|x| (x - 200.0 / 119.0).abs() < 1e-12));
        assert!(cams
            .iter()
            .all(|c| c.carm_angulation_deg == 0.0 && c.detector_dims == [128, 128]));
        assert!(Trajectory { n_frames: 1, ..t }.validate().is_err());
        assert!(Trajectory { arc_deg: 400.0, ..t }.validate().is_err());
    }

    #[test]
    fn ramp_has_no_dc_and_is_symmetric() {
        for w in [FilterWindow::RamLak, FilterWindow::Hann] {
            let r = ramp_response(256, w);
            assert_eq!(r[0], 0.0);
            for k in 1..128 {
                assert!((r[k] - r[256 - k]).abs() < 1e-12);
                assert!(r[k] > 0.0);
            }
        }
        // Ram-Lak follows |f| closely away from DC
        let r = ramp_response(256, FilterWindow::RamLak);
        assert!((r[64] - 0.25).abs() < 0.01, "{}", r[64]);
    }

    #[test]
    fn parker_weights_complement_conjugates() {
        let scan = 200f64.to_radians();
        for gamma in [-0.1, -0.03, 0.0, 0.05, 0.11] {
            for k in 0..200 {
                let beta = scan * k as f64 / 199.0;
                let conj = beta + std::f64::consts::PI + 2.0 * gamma;
                let back = beta - std::f64::consts::PI + 2.0 * gamma;
                let w = parker_weight(beta, gamma, scan);
                let other = if (0.0..=scan).contains(&conj) {
                    parker_weight(conj, -gamma, scan)
                } else if (0.0..=scan).contains(&back) {
                    parker_weight(back, -gamma, scan)
                } else {
                    0.0
                };
                assert!(
                    (w + other - 1.0).abs() < 1e-9,
                    "beta {beta} gamma {gamma}: {w} + {other}"
                );
            }
        }
    }

    #[test]
    fn conjugate_ray_geometry() {
        // the ray through pixel offset a at rotation beta reappears at
        // beta + pi + 2 gamma through offset -a
        let cam = CArmCamera::with_format(27.0, [256, 256]);
        let beta0 = 10f64;
        let c0 = cam.clone().at_angles(beta0, 0.0);
        let f0 = c0.frame();
        let px = 200.0;
        let p = c0.pixel_position(&f0, px, 127.5);
        let a = (p - f0.source).dot(&f0.u_axis);
        let h = (f0.detector_center - f0.source).dot(&f0.viewing_axis);
        let gamma = (a / h).atan();
        let c1 = cam.clone().at_angles(beta0 + 180.0 + 2.0 * gamma.to_degrees(), 0.0);
        let mid = f0.source + (p - f0.source) * 0.5;
        let q_src = c1.project(&f0.source).unwrap();
        let q_mid = c1.project(&mid).unwrap();
        let c = c1.center_px();
        assert!((q_src[0] - (2.0 * c[0] - px)).abs() < 1e-6, "{q_src:?}");
        assert!((q_mid[0] - (2.0 * c[0] - px)).abs() < 1e-6, "{q_mid:?}");
    }

    fn reconstruct_sphere(window: FilterWindow) -> (Volume, Volume) {
        let vol = sphere_volume();
        let drr = DrrConfig::for_volume(&vol);
        let run = simulate_rotational_run(
            &vol,
            &small_camera(),
            &Trajectory::default(),
            &drr,
            &NoiseModel::None,
            0,
        )
        .unwrap();
        let grid = ReconGrid {
            dims: [96, 96, 96],
            spacing_mm: 1.0,
            fov_diameter_cm: 15.0,
        };
        (
            fdk_reconstruct(&run.frames, &run.cameras, &grid, &FdkConfig { window }).unwrap(),
            vol,
        )
    }

    #[test]
    fn sphere_reconstruction_fidelity() {
        let (rec, vol) = reconstruct_sphere(FilterWindow::RamLak);
        let c = rec.get(48, 48, 48) as f64;
        assert!((c / 0.3 - 1.0).abs() < 0.15, "center {c}");
        let mut ext = (0.0, 0usize);
        for z in 0..96 {
            for y in 0..96 {
                for x in 0..96 {
                    let r = rec.voxel_center(x, y, z).coords.norm();
                    if r > 24.0 && r < 45.0 {
                        ext.0 += rec.get(x, y, z) as f64;
                        ext.1 += 1;
                    }
                }
            }
        }
        let ext_mean = ext.0 / ext.1 as f64;
        assert!(ext_mean < 0.03, "exterior {ext_mean}");
        let grid = ReconGrid {
            dims: [96, 96, 96],
            spacing_mm: 1.0,
            fov_diameter_cm: 15.0,
        };
        let ncc = normalized_cross_correlation(rec.data(), &resample_to_grid(&vol, &grid));
        assert!(ncc > 0.9, "ncc {ncc}");
    }

    #[test]
    fn zero_frames_and_linearity() {
        let cams = Trajectory {
            n_frames: 12,
            ..Trajectory::default()
        }
        .cameras(&CArmCamera::with_format(15.0, [32, 32]))
        .unwrap();
        let grid = ReconGrid {
            dims: [16, 16, 16],
            spacing_mm: 4.0,
            fov_diameter_cm: 15.0,
        };
        let zeros: Vec<Image2D> = cams
            .iter()
            .map(|_| Image2D::zeros([32, 32], cams[0].pixel_pitch_mm, 15.0).unwrap())
            .collect();
        let rec = fdk_reconstruct(&zeros, &cams, &grid, &FdkConfig::default()).unwrap();
        assert!(rec.data().iter().all(|&v| v == 0.0));

        let vol = sphere_volume();
        let drr = DrrConfig::for_volume(&vol);
        let frames: Vec<Image2D> = cams
            .iter()
            .map(|c| {
                PreparedVolume::new(&vol)
                    .render(c, &RigidTransform::identity(), &drr, None)
                    .unwrap()
            })
            .collect();
        let doubled: Vec<Image2D> = frames.iter().map(|f| f.map(|v| 2.0 * v)).collect();
        let a = fdk_reconstruct(&frames, &cams, &grid, &FdkConfig::default()).unwrap();
        let b = fdk_reconstruct(&doubled, &cams, &grid, &FdkConfig::default()).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            // clamping of negative ringing commutes with positive scaling
            assert!((2.0 * x - y).abs() <= 1e-6 * y.abs().max(1e-3), "{x} {y}");
        }
        let bad = {
            let mut f = frames.clone();
            f[3] = Image2D::zeros([16, 16], 1.0, 15.0).unwrap();
            f
        };
        assert!(matches!(
            fdk_reconstruct(&bad, &cams, &grid, &FdkConfig::default()),
            Err(Error::DimMismatch(..))
        ));
    }

    #[test]
    fn run_round_trips_through_directory() {
        let vol = sphere_volume();
        let t = Trajectory {
            n_frames: 3,
            ..Trajectory::default()
        };
        let drr = DrrConfig::for_volume(&vol).with_downsample(4);
        let run = simulate_rotational_run(&vol, &small_camera(), &t, &drr, &NoiseModel::exposure(), 5).unwrap();
        assert_eq!(run.cameras[0].detector_dims, [32, 32]);
        let dir = tempfile::tempdir().unwrap();
        run.save(dir.path()).unwrap();
        assert!(dir.path().join("frame_0002.img.raw").exists());
        assert!(dir.path().join("frame_0002.cam.json").exists());
        assert_eq!(RotationalRun::load(dir.path()).unwrap(), run);
    }
}

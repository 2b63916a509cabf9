//! Gradient-difference similarity between a fixed X-ray image and a DRR.
//!
//! With difference gradients `Gx = ∂I/∂u − s·∂D/∂u` and `Gy` likewise, the
//! score is `Σ σh/(σh + Gx²) + Σ σv/(σv + Gy²)` over interior pixels, where
//! `σh`, `σv` are the variances of the fixed image's gradients. Each term is
//! at most one, so the score is bounded by twice the pixel count and reaches
//! it only when the scaled DRR explains every gradient of the image.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image2D;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleSearch {
    Fixed(f64),
    GoldenSection { lo: f64, hi: f64, iters: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    pub scale_search: ScaleSearch,
    /// Variance floor relative to the squared dynamic range of the fixed image.
    pub epsilon: f64,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            scale_search: ScaleSearch::GoldenSection {
                lo: 0.05,
                hi: 20.0,
                iters: 24,
            },
            epsilon: 1e-12,
        }
    }
}

impl SimilarityConfig {
    pub fn fixed_scale(s: f64) -> Self {
        SimilarityConfig {
            scale_search: ScaleSearch::Fixed(s),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument("similarity epsilon must be positive".into()));
        }
        match self.scale_search {
            ScaleSearch::Fixed(s) if !s.is_finite() => Err(Error::InvalidArgument("fixed scale must be finite".into())),
            ScaleSearch::GoldenSection { lo, hi, iters } if !(lo < hi) || iters == 0 => Err(Error::InvalidArgument(
                format!("golden section needs lo < hi and iters >= 1 (got {lo}, {hi}, {iters})"),
            )),
            _ => Ok(()),
        }
    }
}

/// Central-difference gradients along u and v; border pixels are zero.
pub fn gradient_images(img: &Image2D) -> Result<(Image2D, Image2D)> {
    let [nu, nv] = img.dims();
    if nu < 3 || nv < 3 {
        return Err(Error::ImageTooSmall(img.dims()));
    }
    let mut gx = vec![0.0f32; nu * nv];
    let mut gy = vec![0.0f32; nu * nv];
    let d = img.data();
    for v in 1..nv - 1 {
        for u in 1..nu - 1 {
            let i = u + nu * v;
            gx[i] = ((d[i + 1] as f64 - d[i - 1] as f64) * 0.5) as f32;
            gy[i] = ((d[i + nu] as f64 - d[i - nu] as f64) * 0.5) as f32;
        }
    }
    Ok((img.with_data(gx)?, img.with_data(gy)?))
}

#[inline]
fn central(d: &[f32], i: usize, stride: usize) -> f64 {
    (d[i + stride] as f64 - d[i - stride] as f64) * 0.5
}

/// Fixed-image side of the measure, computed once per registration: the
/// pixel set, fixed gradients and their variances.
#[derive(Debug, Clone)]
pub struct GradientDifference {
    dims: [usize; 2],
    pixels: Vec<usize>,
    fixed_gx: Vec<f64>,
    fixed_gy: Vec<f64>,
    sigma_h: f64,
    sigma_v: f64,
    flat: bool,
    cfg: SimilarityConfig,
}

impl GradientDifference {
    /// All interior pixels.
    pub fn new(fixed: &Image2D, cfg: &SimilarityConfig) -> Result<Self> {
        Self::with_mask(fixed, None, cfg)
    }

    /// Interior pixels whose four neighbours are inside `mask`, so no gradient
    /// straddles a collimator edge.
    pub fn with_mask(fixed: &Image2D, mask: Option<&[bool]>, cfg: &SimilarityConfig) -> Result<Self> {
        cfg.validate()?;
        let [nu, nv] = fixed.dims();
        if nu < 3 || nv < 3 {
            return Err(Error::ImageTooSmall(fixed.dims()));
        }
        if let Some(m) = mask {
            if m.len() != nu * nv {
                return Err(Error::DimsMismatch {
                    expected: nu * nv,
                    found: m.len(),
                });
            }
        }
        let inside = |i: usize| mask.is_none_or(|m| m[i]);
        let mut pixels = Vec::new();
        for v in 1..nv - 1 {
            for u in 1..nu - 1 {
                let i = u + nu * v;
                if inside(i) && inside(i - 1) && inside(i + 1) && inside(i - nu) && inside(i + nu) {
                    pixels.push(i);
                }
            }
        }
        if pixels.is_empty() {
            return Err(Error::Empty("similarity pixel set"));
        }
        let d = fixed.data();
        let fixed_gx: Vec<f64> = pixels.iter().map(|&i| central(d, i, 1)).collect();
        let fixed_gy: Vec<f64> = pixels.iter().map(|&i| central(d, i, nu)).collect();
        let (lo, hi) = pixels.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &i| {
            (l.min(d[i] as f64), h.max(d[i] as f64))
        });
        let range = hi - lo;
        let floor = (cfg.epsilon * range * range).max(f64::MIN_POSITIVE);
        let var_h = variance(&fixed_gx);
        let var_v = variance(&fixed_gy);
        Ok(GradientDifference {
            dims: fixed.dims(),
            flat: var_h <= floor && var_v <= floor,
            sigma_h: var_h.max(floor),
            sigma_v: var_v.max(floor),
            pixels,
            fixed_gx,
            fixed_gy,
            cfg: *cfg,
        })
    }

    /// True when the fixed image carries no gradient structure.
    pub fn is_flat(&self) -> bool {
        self.flat
    }

    pub fn pixel_count(&self) -> usize {
        self.pixels.len()
    }

    /// Score of identical images: two per pixel.
    pub fn max_score(&self) -> f64 {
        2.0 * self.pixels.len() as f64
    }

    pub fn sigmas(&self) -> (f64, f64) {
        (self.sigma_h, self.sigma_v)
    }

    fn moving_gradients(&self, moving: &[f32]) -> (Vec<f64>, Vec<f64>) {
        let nu = self.dims[0];
        let gx = self.pixels.iter().map(|&i| central(moving, i, 1)).collect();
        let gy = self.pixels.iter().map(|&i| central(moving, i, nu)).collect();
        (gx, gy)
    }

    fn score_grads(&self, mgx: &[f64], mgy: &[f64], s: f64) -> f64 {
        let (sh, sv) = (self.sigma_h, self.sigma_v);
        let mut acc = 0.0;
        for k in 0..self.pixels.len() {
            let gx = self.fixed_gx[k] - s * mgx[k];
            let gy = self.fixed_gy[k] - s * mgy[k];
            acc += sh / (sh + gx * gx) + sv / (sv + gy * gy);
        }
        acc
    }

    fn check_dims(&self, moving: &Image2D) -> Result<()> {
        if moving.dims() != self.dims {
            return Err(Error::DimMismatch(self.dims, moving.dims()));
        }
        Ok(())
    }

    /// Score at a given intensity scale.
    pub fn score_at(&self, moving: &Image2D, s: f64) -> Result<f64> {
        self.check_dims(moving)?;
        let (gx, gy) = self.moving_gradients(moving.data());
        Ok(self.score_grads(&gx, &gy, s))
    }

    /// Score at the configured or searched scale; returns `(score, s)`.
    pub fn score(&self, moving: &Image2D) -> Result<(f64, f64)> {
        self.check_dims(moving)?;
        Ok(self.score_raw(moving.data()))
    }

    /// As [`score`](Self::score) on a raw buffer with the fixed image's dims.
    pub fn score_raw(&self, moving: &[f32]) -> (f64, f64) {
        let (gx, gy) = self.moving_gradients(moving);
        match self.cfg.scale_search {
            ScaleSearch::Fixed(s) => (self.score_grads(&gx, &gy, s), s),
            ScaleSearch::GoldenSection { lo, hi, iters } => {
                let (s, v) = golden_section_max(|s| self.score_grads(&gx, &gy, s), lo, hi, iters);
                (v, s)
            }
        }
    }
}

fn variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Golden-section maximisation of a unimodal function on `[lo, hi]`.
/// Returns the best `(x, f(x))` seen.
pub fn golden_section_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64, iters: usize) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) * 0.5;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Gradient difference at a given scale over all interior pixels.
pub fn gradient_difference(fixed: &Image2D, moving: &Image2D, s: f64, cfg: &SimilarityConfig) -> Result<f64> {
    if fixed.dims() != moving.dims() {
        return Err(Error::DimMismatch(fixed.dims(), moving.dims()));
    }
    GradientDifference::new(fixed, cfg)?.score_at(moving, s)
}

/// Gradient difference at the configured or searched scale. A fixed image
/// without gradient content is flagged rather than scored.
pub fn evaluate(fixed: &Image2D, moving: &Image2D, cfg: &SimilarityConfig) -> Result<f64> {
    if fixed.dims() != moving.dims() {
        return Err(Error::DimMismatch(fixed.dims(), moving.dims()));
    }
    let gd = GradientDifference::new(fixed, cfg)?;
    if gd.is_flat() {
        return Err(Error::InsufficientLandmarks);
    }
    Ok(gd.score(moving)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(nu: usize, nv: usize, f: impl Fn(usize, usize) -> f32) -> Image2D {
        Image2D::from_fn([nu, nv], 1.0, 10.0, f).unwrap()
    }

    #[test]
    fn constant_and_ramp_gradients() {
        let (gx, gy) = gradient_images(&img(6, 5, |_, _| 3.0)).unwrap();
        assert!(gx.data().iter().chain(gy.data()).all(|&g| g == 0.0));
        let (gx, gy) = gradient_images(&img(6, 5, |u, _| u as f32)).unwrap();
        for v in 1..4 {
            for u in 1..5 {
                assert_eq!(gx.get(u, v), 1.0);
            }
        }
        assert!(gy.data().iter().all(|&g| g == 0.0));
        assert!(gradient_images(&img(2, 5, |_, _| 0.0)).is_err());
    }

    #[test]
    fn single_spike_three_by_three() {
        let (gx, gy) = gradient_images(&img(3, 3, |u, v| if (u, v) == (1, 1) { 2.0 } else { 0.0 })).unwrap();
        assert_eq!(gx.get(1, 1), 0.0);
        assert_eq!(gy.get(1, 1), 0.0);
        assert_eq!(gx.get(0, 1), 0.0);
    }

    #[test]
    fn identical_images_score_two_per_pixel() {
        let a = img(9, 7, |u, v| ((u * 7 + v * 3) % 5) as f32);
        let cfg = SimilarityConfig::default();
        assert_eq!(gradient_difference(&a, &a, 1.0, &cfg).unwrap(), 2.0 * 35.0);
        let e = evaluate(&a, &a, &cfg).unwrap();
        assert!((e - 70.0).abs() < 1e-6, "{e}");
    }

    #[test]
    fn zero_moving_matches_direct_sum() {
        // 5x5 fixed image, oracle computed by hand-rolled summation
        let vals = [
            [0.0, 1.0, 2.0, 1.0, 0.0],
            [1.0, 3.0, 4.0, 2.0, 1.0],
            [2.0, 5.0, 9.0, 4.0, 2.0],
            [1.0, 2.0, 3.0, 2.0, 0.0],
            [0.0, 0.0, 1.0, 1.0, 0.0],
        ];
        let fixed = img(5, 5, |u, v| vals[v][u] as f32);
        let zero = img(5, 5, |_, _| 0.0);
        let mut gxs = vec![];
        let mut gys = vec![];
        for v in 1..4 {
            for u in 1..4 {
                gxs.push((vals[v][u + 1] - vals[v][u - 1]) / 2.0);
                gys.push((vals[v + 1][u] - vals[v - 1][u]) / 2.0);
            }
        }
        let var = |x: &Vec<f64>| {
            let m = x.iter().sum::<f64>() / 9.0;
            x.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 9.0
        };
        let (sh, sv) = (var(&gxs), var(&gys));
        let oracle: f64 =
            gxs.iter().map(|g| sh / (sh + g * g)).sum::<f64>() + gys.iter().map(|g| sv / (sv + g * g)).sum::<f64>();
        let cfg = SimilarityConfig::default();
        for s in [0.3, 1.0, 7.0] {
            let got = gradient_difference(&fixed, &zero, s, &cfg).unwrap();
            assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
        }
    }

    #[test]
    fn golden_section_beats_neighbours() {
        let fixed = img(16, 16, |u, v| {
            ((u as f32 - 7.5).powi(2) + (v as f32 - 8.0).powi(2)).sqrt()
        });
        let moving = fixed.map(|x| x * 0.4);
        let cfg = SimilarityConfig::default();
        let gd = GradientDifference::new(&fixed, &cfg).unwrap();
        let (best, s) = gd.score(&moving).unwrap();
        for f in [0.9, 1.1] {
            assert!(best >= gd.score_at(&moving, s * f).unwrap());
        }
        // 1-D scan oracle
        let scan_best = (1..2000)
            .map(|k| gd.score_at(&moving, k as f64 * 0.01).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(best >= scan_best - 1e-6);
        assert!((s - 2.5).abs() < 0.01, "{s}");
    }

    #[test]
    fn shifted_image_scores_lower() {
        let fixed = img(32, 32, |u, v| ((u as f32 * 0.4).sin() + (v as f32 * 0.3).cos()) * 3.0);
        let shifted = img(32, 32, |u, v| {
            (((u + 5) as f32 * 0.4).sin() + (v as f32 * 0.3).cos()) * 3.0
        });
        let cfg = SimilarityConfig::default();
        assert!(evaluate(&fixed, &shifted, &cfg).unwrap() < evaluate(&fixed, &fixed, &cfg).unwrap());
    }

    #[test]
    fn flat_fixed_image_is_flagged() {
        let flat = img(8, 8, |_, _| 1.0);
        let other = img(8, 8, |u, _| u as f32);
        assert!(matches!(
            evaluate(&flat, &other, &SimilarityConfig::default()),
            Err(Error::InsufficientLandmarks)
        ));
        assert!(matches!(
            evaluate(&flat, &img(7, 8, |_, _| 0.0), &SimilarityConfig::default()),
            Err(Error::DimMismatch(..))
        ));
    }

    #[test]
    fn mask_excludes_collimator_edges() {
        let fixed = img(10, 10, |u, v| (u * v) as f32);
        let mut mask = vec![true; 100];
        mask[5 * 10 + 5] = false;
        let gd = GradientDifference::with_mask(&fixed, Some(&mask), &SimilarityConfig::default()).unwrap();
        // the masked pixel and its four neighbours drop out
        assert_eq!(gd.pixel_count(), 64 - 5);
    }
}

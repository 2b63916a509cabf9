//! Quantum noise on line-integral images.
//!
//! A pixel with line integral `p` receives `I = I0·exp(-p)` expected photons;
//! the detected count is Poisson and is mapped back to `-ln(count / I0)`.
//! Zero counts are clamped to half a photon.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image2D;

pub const FLUOROSCOPY_PHOTONS: f64 = 5e4;
pub const EXPOSURE_PHOTONS: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    None,
    Poisson { photons: f64 },
}

impl NoiseModel {
    pub fn fluoroscopy() -> Self {
        NoiseModel::Poisson {
            photons: FLUOROSCOPY_PHOTONS,
        }
    }

    pub fn exposure() -> Self {
        NoiseModel::Poisson {
            photons: EXPOSURE_PHOTONS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::Poisson { photons } if !(photons > 0.0 && photons.is_finite()) => Err(Error::InvalidArgument(
                format!("photon count must be positive, got {photons}"),
            )),
            _ => Ok(()),
        }
    }

    /// Noisy copy of `image`; pixels are visited in storage order so the
    /// result depends only on `seed`.
    pub fn apply(&self, image: &Image2D, seed: u64) -> Result<Image2D> {
        self.validate()?;
        let NoiseModel::Poisson { photons } = *self else {
            return Ok(image.clone());
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = image
            .data()
            .iter()
            .map(|&p| {
                let mean = photons * (-(p as f64)).exp();
                let count = if mean > 0.0 {
                    Poisson::new(mean).map(|d| d.sample(&mut rng)).unwrap_or(mean)
                } else {
                    0.0
                };
                (-(count.max(0.5) / photons).ln()) as f32
            })
            .collect();
        image.with_data(data)
    }
}

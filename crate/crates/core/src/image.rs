use crate::error::{Error, Result};

/// Projection image of line-integral values, u-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    dims: [usize; 2],
    pitch_mm: f64,
    data: Vec<f32>,
    pub fov_diameter_cm: f64,
}

impl Image2D {
    pub fn new(dims: [usize; 2], pitch_mm: f64, data: Vec<f32>, fov_diameter_cm: f64) -> Result<Self> {
        let expected = dims[0] * dims[1];
        if data.len() != expected {
            return Err(Error::DimsMismatch {
                expected,
                found: data.len(),
            });
        }
        if !(pitch_mm > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "pixel pitch must be positive, got {pitch_mm}"
            )));
        }
        Ok(Image2D {
            dims,
            pitch_mm,
            data,
            fov_diameter_cm,
        })
    }

    pub fn zeros(dims: [usize; 2], pitch_mm: f64, fov_diameter_cm: f64) -> Result<Self> {
        Self::new(dims, pitch_mm, vec![0.0; dims[0] * dims[1]], fov_diameter_cm)
    }

    pub fn from_fn(
        dims: [usize; 2],
        pitch_mm: f64,
        fov_diameter_cm: f64,
        f: impl Fn(usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(dims[0] * dims[1]);
        for v in 0..dims[1] {
            for u in 0..dims[0] {
                data.push(f(u, v));
            }
        }
        Self::new(dims, pitch_mm, data, fov_diameter_cm)
    }

    pub fn dims(&self) -> [usize; 2] {
        self.dims
    }

    pub fn pitch_mm(&self) -> f64 {
        self.pitch_mm
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f32 {
        self.data[u + self.dims[0] * v]
    }

    pub fn with_data(&self, data: Vec<f32>) -> Result<Image2D> {
        Image2D::new(self.dims, self.pitch_mm, data, self.fov_diameter_cm)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image2D {
        Image2D {
            dims: self.dims,
            pitch_mm: self.pitch_mm,
            data: self.data.iter().map(|&v| f(v)).collect(),
            fov_diameter_cm: self.fov_diameter_cm,
        }
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Block average by an integer factor; block centers coincide with the
    /// ray positions the projector uses at the same downsampling.
    pub fn downsample(&self, factor: usize) -> Result<Image2D> {
        if factor == 0 || !self.dims[0].is_multiple_of(factor) || !self.dims[1].is_multiple_of(factor) {
            return Err(Error::InvalidArgument(format!(
                "image {:?} not divisible by {factor}",
                self.dims
            )));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let nu = self.dims[0] / factor;
        let nv = self.dims[1] / factor;
        let norm = 1.0 / (factor * factor) as f64;
        let mut data = Vec::with_capacity(nu * nv);
        for bv in 0..nv {
            for bu in 0..nu {
                let mut acc = 0.0f64;
                for v in bv * factor..(bv + 1) * factor {
                    for u in bu * factor..(bu + 1) * factor {
                        acc += self.get(u, v) as f64;
                    }
                }
                data.push((acc * norm) as f32);
            }
        }
        Image2D::new([nu, nv], self.pitch_mm * factor as f64, data, self.fov_diameter_cm)
    }

    /// Zero everything outside `mask`.
    pub fn masked(&self, mask: &[bool]) -> Image2D {
        let data = self
            .data
            .iter()
            .zip(mask)
            .map(|(&v, &m)| if m { v } else { 0.0 })
            .collect();
        Image2D {
            dims: self.dims,
            pitch_mm: self.pitch_mm,
            data,
            fov_diameter_cm: self.fov_diameter_cm,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn downsample_averages_blocks() {
        let img = Image2D::from_fn([4, 2], 1.0, 10.0, |u, v| (u + 4 * v) as f32).unwrap();
        let d = img.downsample(2).unwrap();
        assert_eq!(d.dims(), [2, 1]);
        assert_eq!(d.data(), &[2.5, 4.5]);
        assert_eq!(d.pitch_mm(), 2.0);
        assert!(img.downsample(3).is_err());
    }
}

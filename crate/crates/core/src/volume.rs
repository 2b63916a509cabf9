use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};

/// Voxel grid of linear attenuation values (1/cm), x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    /// World position of the center of voxel (0, 0, 0).
    origin_mm: [f64; 3],
    data: Vec<f32>,
    pub fov_diameter_cm: f64,
}

impl Volume {
    pub fn new(
        dims: [usize; 3],
        spacing_mm: [f64; 3],
        origin_mm: [f64; 3],
        data: Vec<f32>,
        fov_diameter_cm: f64,
    ) -> Result<Self> {
        let expected = dims[0] * dims[1] * dims[2];
        if data.len() != expected {
            return Err(Error::DimsMismatch {
                expected,
                found: data.len(),
            });
        }
        if spacing_mm.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "voxel spacing must be positive: {spacing_mm:?}"
            )));
        }
        if !(fov_diameter_cm > 0.0) {
            return Err(Error::InvalidArgument("fov diameter must be positive".into()));
        }
        if let Some(i) = data.iter().position(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "attenuation at voxel {i} is negative or NaN"
            )));
        }
        Ok(Volume {
            dims,
            spacing_mm,
            origin_mm,
            data,
            fov_diameter_cm,
        })
    }

    /// Reconstruction output may carry small negative ringing; clamp it.
    pub fn new_clamped(
        dims: [usize; 3],
        spacing_mm: [f64; 3],
        origin_mm: [f64; 3],
        mut data: Vec<f32>,
        fov_diameter_cm: f64,
    ) -> Result<Self> {
        for v in &mut data {
            if !(*v >= 0.0) {
                *v = 0.0;
            }
        }
        Self::new(dims, spacing_mm, origin_mm, data, fov_diameter_cm)
    }

    /// Zero volume whose voxel grid is centered on the iso-center.
    pub fn zeros_centered(dims: [usize; 3], spacing_mm: [f64; 3], fov_diameter_cm: f64) -> Result<Self> {
        let origin = centered_origin(dims, spacing_mm);
        Self::new(
            dims,
            spacing_mm,
            origin,
            vec![0.0; dims[0] * dims[1] * dims[2]],
            fov_diameter_cm,
        )
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing_mm(&self) -> [f64; 3] {
        self.spacing_mm
    }

    pub fn origin_mm(&self) -> [f64; 3] {
        self.origin_mm
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> Point3<f64> {
        Point3::new(
            self.origin_mm[0] + x as f64 * self.spacing_mm[0],
            self.origin_mm[1] + y as f64 * self.spacing_mm[1],
            self.origin_mm[2] + z as f64 * self.spacing_mm[2],
        )
    }

    /// Edge-to-edge extent of the grid in millimetres.
    pub fn extent_mm(&self) -> Vector3<f64> {
        Vector3::new(
            self.dims[0] as f64 * self.spacing_mm[0],
            self.dims[1] as f64 * self.spacing_mm[1],
            self.dims[2] as f64 * self.spacing_mm[2],
        )
    }

    /// Axis-aligned box bounded by the outer voxel faces.
    pub fn bounding_box(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for a in 0..3 {
            lo[a] = self.origin_mm[a] - 0.5 * self.spacing_mm[a];
            hi[a] = lo[a] + self.dims[a] as f64 * self.spacing_mm[a];
        }
        (lo, hi)
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing_mm.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing_mm.iter().product()
    }

    pub fn with_data(&self, data: Vec<f32>) -> Result<Volume> {
        Volume::new(self.dims, self.spacing_mm, self.origin_mm, data, self.fov_diameter_cm)
    }

    pub fn with_origin(mut self, origin_mm: [f64; 3]) -> Volume {
        self.origin_mm = origin_mm;
        self
    }

    /// Same grid, values multiplied by a non-negative factor.
    pub fn scaled(&self, factor: f32) -> Result<Volume> {
        self.with_data(self.data.iter().map(|v| v * factor).collect())
    }

    /// Block average by `factor` along every axis. Trailing partial blocks are
    /// padded with zeros; the lower grid corner stays where it was.
    pub fn binned(&self, factor: usize) -> Result<Volume> {
        if factor == 0 {
            return Err(Error::InvalidArgument("binning factor must be positive".into()));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let [nx, ny, nz] = self.dims;
        let nd = [nx, ny, nz].map(|n| n.div_ceil(factor));
        let mut acc = vec![0.0f64; nd[0] * nd[1] * nd[2]];
        for z in 0..nz {
            for y in 0..ny {
                let row = &self.data[nx * (y + ny * z)..nx * (y + ny * z + 1)];
                let base = nd[0] * (y / factor + nd[1] * (z / factor));
                for (x, &v) in row.iter().enumerate() {
                    acc[base + x / factor] += v as f64;
                }
            }
        }
        let norm = 1.0 / (factor * factor * factor) as f64;
        let f = factor as f64;
        let spacing = self.spacing_mm.map(|s| s * f);
        let origin = [0, 1, 2].map(|i| self.origin_mm[i] + 0.5 * (f - 1.0) * self.spacing_mm[i]);
        Volume::new(
            nd,
            spacing,
            origin,
            acc.into_iter().map(|v| (v * norm) as f32).collect(),
            self.fov_diameter_cm,
        )
    }

    pub fn map_data(&mut self, mut f: impl FnMut(usize, f32) -> f32) {
        for (i, v) in self.data.iter_mut().enumerate() {
            *v = f(i, *v).max(0.0);
        }
    }
}

pub fn centered_origin(dims: [usize; 3], spacing_mm: [f64; 3]) -> [f64; 3] {
    [
        -(dims[0] as f64 - 1.0) * 0.5 * spacing_mm[0],
        -(dims[1] as f64 - 1.0) * 0.5 * spacing_mm[1],
        -(dims[2] as f64 - 1.0) * 0.5 * spacing_mm[2],
    ]
}

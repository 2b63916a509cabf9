use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::CArmCamera;
use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::registration::{residual, SuccessCriteria};

/// One registration trial. Transforms are stored as 12 space-separated
/// numbers (row-major rotation, then translation) so residuals can be
/// recomputed exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub run_type: String,
    pub volume_fov_cm: f64,
    pub image_fov_cm: f64,
    pub offset: String,
    pub patient: Option<usize>,
    pub contrast: Option<bool>,
    pub frame: Option<usize>,
    pub trial: usize,
    pub seed: u64,
    pub relevant: bool,
    /// Offset in the camera frame.
    pub offset_tx_mm: f64,
    pub offset_ty_mm: f64,
    pub offset_tz_mm: f64,
    pub offset_rx_deg: f64,
    pub offset_ry_deg: f64,
    pub offset_rz_deg: f64,
    pub offset_angle_deg: f64,
    pub truth: String,
    pub recovered: Option<String>,
    pub t_mm: Option<f64>,
    pub r_deg: Option<f64>,
    pub in_plane_mm: Option<f64>,
    pub out_of_plane_mm: Option<f64>,
    pub pass_t: Option<bool>,
    pub pass_r: Option<bool>,
    pub pass: Option<bool>,
    pub score: Option<f64>,
    pub initial_score: Option<f64>,
    pub evaluations: Option<usize>,
    pub status: String,
    /// Excluded from replay comparisons.
    pub wall_time_s: f64,
}

impl ResultRow {
    /// Residual recomputed from the stored transforms.
    pub fn recompute(&self, camera: &CArmCamera, criteria: &SuccessCriteria) -> Result<Option<(f64, f64, bool)>> {
        let Some(rec) = &self.recovered else {
            return Ok(None);
        };
        let e = residual(&decode_transform(rec)?, &decode_transform(&self.truth)?, camera);
        let p = criteria.judge(&e);
        Ok(Some((e.translation_mm, e.rotation_deg, p.both)))
    }

    /// Copy with the wall-clock time zeroed, for determinism checks.
    pub fn without_timing(&self) -> ResultRow {
        ResultRow {
            wall_time_s: 0.0,
            ..self.clone()
        }
    }
}

pub fn encode_transform(t: &RigidTransform) -> String {
    let r = &t.rotation;
    let mut parts: Vec<String> = Vec::with_capacity(12);
    for i in 0..3 {
        for j in 0..3 {
            parts.push(format!("{:?}", r[(i, j)]));
        }
    }
    for k in 0..3 {
        parts.push(format!("{:?}", t.translation[k]));
    }
    parts.join(" ")
}

pub fn decode_transform(s: &str) -> Result<RigidTransform> {
    let v: Vec<f64> = s
        .split_whitespace()
        .map(|p| p.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::InvalidArgument(format!("bad transform {s:?}: {e}")))?;
    if v.len() != 12 {
        return Err(Error::InvalidArgument(format!(
            "transform needs 12 numbers, got {}",
            v.len()
        )));
    }
    Ok(RigidTransform::new(
        Matrix3::from_row_slice(&v[..9]),
        Vector3::new(v[9], v[10], v[11]),
    ))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r)?;
        }
        wr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        if let Some(p) = path.parent() {
            std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
        }
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load_csv(path: &Path) -> Result<ResultTable> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rd = csv::Reader::from_reader(std::io::BufReader::new(f));
        let rows = rd.deserialize().collect::<std::result::Result<Vec<ResultRow>, _>>()?;
        Ok(ResultTable { rows })
    }

    pub fn without_timing(&self) -> ResultTable {
        ResultTable {
            rows: self.rows.iter().map(ResultRow::without_timing).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transforms_round_trip_exactly() {
        let t = RigidTransform::from_parts_deg([1.0 / 3.0, -2.5, 1e-7], [3.3, -7.1, 0.2]);
        assert_eq!(decode_transform(&encode_transform(&t)).unwrap(), t);
        assert!(decode_transform("1 2 3").is_err());
    }
}

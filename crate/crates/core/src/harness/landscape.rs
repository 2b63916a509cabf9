use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::CArmCamera;
use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::image::Image2D;
use crate::projector::{DrrConfig, PreparedVolume};
use crate::registration::apply_parameters;
use crate::similarity::{GradientDifference, SimilarityConfig};

/// Search parameters in optimizer order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchAxis {
    Tx,
    Ty,
    Rx,
    Ry,
    Rz,
}

impl SearchAxis {
    fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            SearchAxis::Tx => "tx_mm",
            SearchAxis::Ty => "ty_mm",
            SearchAxis::Rx => "rx_deg",
            SearchAxis::Ry => "ry_deg",
            SearchAxis::Rz => "rz_deg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandscapeAxis {
    pub axis: SearchAxis,
    pub lo: f64,
    pub hi: f64,
    /// Grid points; one point sits at `lo`.
    pub steps: usize,
}

impl LandscapeAxis {
    fn value(&self, k: usize) -> f64 {
        if self.steps == 1 {
            self.lo
        } else {
            self.lo + (self.hi - self.lo) * k as f64 / (self.steps - 1) as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeRow {
    pub coords: Vec<f64>,
    pub score: f64,
}

/// Similarity of `fixed` against DRRs displaced from `center` along the given
/// axes (camera-frame parameters), first axis fastest.
pub fn similarity_landscape(
    volume: &PreparedVolume,
    fixed: &Image2D,
    camera: &CArmCamera,
    center: &RigidTransform,
    axes: &[LandscapeAxis],
    drr: &DrrConfig,
    sim: &SimilarityConfig,
    mask: Option<&[bool]>,
) -> Result<Vec<LandscapeRow>> {
    if axes.is_empty() {
        return Err(Error::InvalidArgument("landscape needs at least one axis".into()));
    }
    if let Some(a) = axes.iter().find(|a| a.steps == 0) {
        return Err(Error::InvalidArgument(format!("axis {} has zero steps", a.axis.name())));
    }
    let gd = GradientDifference::with_mask(fixed, mask, sim)?;
    let total: usize = axes.iter().map(|a| a.steps).product();
    let rows = (0..total)
        .into_par_iter()
        .map(|flat| {
            let mut rem = flat;
            let mut x = [0.0; 5];
            let mut coords = Vec::with_capacity(axes.len());
            for a in axes {
                let v = a.value(rem % a.steps);
                rem /= a.steps;
                x[a.axis.index()] = v;
                coords.push(v);
            }
            let pose = apply_parameters(center, &x, camera);
            let mut moving = volume.render(camera, &pose, drr, None)?;
            if let Some(m) = mask {
                moving = moving.masked(m);
            }
            Ok(LandscapeRow {
                coords,
                score: gd.score(&moving)?.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows)
}

pub fn write_landscape_csv<W: Write>(axes: &[LandscapeAxis], rows: &[LandscapeRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header: Vec<&str> = axes.iter().map(|a| a.axis.name()).collect();
    header.push("score");
    wr.write_record(&header)?;
    for r in rows {
        let mut rec: Vec<String> = r.coords.iter().map(|c| format!("{c}")).collect();
        rec.push(format!("{:?}", r.score));
        wr.write_record(&rec)?;
    }
    wr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

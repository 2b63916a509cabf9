use serde::{Deserialize, Serialize};

use super::table::ResultRow;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1); zero for a single value.
    pub stddev: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Stats> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Some(Stats {
            count: values.len(),
            mean,
            stddev: var.sqrt(),
            min: values.iter().cloned().fold(f64::INFINITY, f64::min),
            max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub translation_mm: Option<Stats>,
    pub rotation_deg: Option<Stats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSummary {
    pub trials: usize,
    /// Rows that produced a residual (registration did not error out).
    pub completed: usize,
    pub passed: usize,
    pub passed_translation: usize,
    pub passed_rotation: usize,
    pub success_rate: f64,
    pub translation_rate: f64,
    pub rotation_rate: f64,
    pub all: ResidualStats,
    pub successful: ResidualStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub all_cells: SubsetSummary,
    pub clinically_relevant: SubsetSummary,
    pub translation_histogram: Histogram,
    pub rotation_histogram: Histogram,
}

fn subset(rows: &[&ResultRow]) -> SubsetSummary {
    let done: Vec<&&ResultRow> = rows.iter().filter(|r| r.t_mm.is_some() && r.r_deg.is_some()).collect();
    let ok: Vec<&&ResultRow> = done.iter().copied().filter(|r| r.pass == Some(true)).collect();
    let count = |f: fn(&ResultRow) -> Option<bool>| rows.iter().filter(|r| f(r) == Some(true)).count();
    let residuals = |set: &[&&ResultRow]| ResidualStats {
        translation_mm: Stats::of(&set.iter().filter_map(|r| r.t_mm).collect::<Vec<_>>()),
        rotation_deg: Stats::of(&set.iter().filter_map(|r| r.r_deg).collect::<Vec<_>>()),
    };
    let rate = |k: usize| {
        if rows.is_empty() {
            0.0
        } else {
            k as f64 / rows.len() as f64
        }
    };
    let (pt, pr) = (count(|r| r.pass_t), count(|r| r.pass_r));
    SubsetSummary {
        trials: rows.len(),
        completed: done.len(),
        passed: ok.len(),
        passed_translation: pt,
        passed_rotation: pr,
        success_rate: rate(ok.len()),
        translation_rate: rate(pt),
        rotation_rate: rate(pr),
        all: residuals(&done),
        successful: residuals(&ok),
    }
}

/// Residual statistics over {all, successful} × {all cells, clinically
/// relevant} plus residual histograms over all rows.
pub fn summarize(rows: &[ResultRow]) -> Result<Summary> {
    if rows.is_empty() {
        return Err(Error::Empty("result table"));
    }
    let all: Vec<&ResultRow> = rows.iter().collect();
    let relevant: Vec<&ResultRow> = rows.iter().filter(|r| r.relevant).collect();
    let t: Vec<f64> = rows.iter().filter_map(|r| r.t_mm).collect();
    let r: Vec<f64> = rows.iter().filter_map(|r| r.r_deg).collect();
    Ok(Summary {
        all_cells: subset(&all),
        clinically_relevant: subset(&relevant),
        translation_histogram: histogram(&t, &translation_edges())?,
        rotation_histogram: histogram(&r, &rotation_edges())?,
    })
}

/// Finite bin edges; the last bin is open ("More").
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    /// `counts[i]` covers `[edges[i], edges[i+1])`; the final entry counts
    /// values at or above the last edge.
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn labels(&self) -> Vec<String> {
        let mut out: Vec<String> = self.edges.windows(2).map(|w| format!("{}-{}", w[0], w[1])).collect();
        out.push("More".into());
        out
    }
}

/// 0.1 mm bins up to 1 mm, then 1-2, 2-5 and open.
pub fn translation_edges() -> Vec<f64> {
    let mut e: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    e.extend([2.0, 5.0]);
    e
}

/// 0.5° bins up to 3°, then 3-5, 5-10 and open.
pub fn rotation_edges() -> Vec<f64> {
    let mut e: Vec<f64> = (0..=6).map(|i| i as f64 * 0.5).collect();
    e.extend([5.0, 10.0]);
    e
}

pub fn histogram(values: &[f64], edges: &[f64]) -> Result<Histogram> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("histogram edges must be increasing".into()));
    }
    let mut counts = vec![0usize; edges.len()];
    for &v in values {
        if v < edges[0] || v.is_nan() {
            continue;
        }
        let i = edges.partition_point(|&e| e <= v) - 1;
        counts[i] += 1;
    }
    Ok(Histogram {
        edges: edges.to_vec(),
        counts,
    })
}

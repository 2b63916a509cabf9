//! Adaptive simulated annealing for bounded continuous minimisation, after
//! Corana, Marchesi, Martini and Ridella (1987).
//!
//! The run is organised as temperature levels. Each level performs
//! `cycles_per_temperature` step adjustments; before each adjustment every
//! coordinate receives `steps_per_cycle` trial moves. Moves are accepted by the
//! Metropolis rule. Step lengths grow when more than 60% of a coordinate's
//! moves were accepted and shrink below 40%. At the end of a level the
//! temperature drops and the walk restarts from the best point seen.
//!
//! Randomness comes from ChaCha8 seeded with `seed` through
//! `SeedableRng::seed_from_u64`, so a seed fixes the whole run on every
//! platform.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialTemperature {
    Absolute(f64),
    /// Multiple of `|f(x0)|` (falls back to the factor itself when `f(x0) = 0`).
    RelativeToStart(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealConfig {
    pub initial_temperature: InitialTemperature,
    pub temperature_reduction: f64,
    pub steps_per_cycle: usize,
    pub cycles_per_temperature: usize,
    pub step_adjust_factor: f64,
    /// Per-dimension starting step; empty means a quarter of each bound width.
    #[serde(default)]
    pub initial_step: Vec<f64>,
    pub termination_epsilon: f64,
    /// Number of trailing temperature levels compared for termination.
    #[serde(default = "default_levels")]
    pub termination_levels: usize,
    pub max_evaluations: usize,
    pub seed: u64,
}

fn default_levels() -> usize {
    4
}

impl Default for AnnealConfig {
    fn default() -> Self {
        AnnealConfig {
            initial_temperature: InitialTemperature::RelativeToStart(1.0),
            temperature_reduction: 0.85,
            steps_per_cycle: 20,
            cycles_per_temperature: 5,
            step_adjust_factor: 2.0,
            initial_step: Vec::new(),
            termination_epsilon: 1e-4,
            termination_levels: 4,
            max_evaluations: 20_000,
            seed: 0,
        }
    }
}

impl AnnealConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self, dims: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("anneal: {m}")));
        match self.initial_temperature {
            InitialTemperature::Absolute(t) | InitialTemperature::RelativeToStart(t) if !(t > 0.0) => {
                return bad(format!("initial temperature must be positive, got {t}"))
            }
            _ => {}
        }
        if !(self.temperature_reduction > 0.0 && self.temperature_reduction < 1.0) {
            return bad(format!(
                "temperature_reduction must be in (0,1), got {}",
                self.temperature_reduction
            ));
        }
        if self.steps_per_cycle == 0 || self.cycles_per_temperature == 0 || self.termination_levels == 0 {
            return bad("cycle counts must be positive".into());
        }
        if !(self.step_adjust_factor > 1.0) {
            return bad("step_adjust_factor must exceed 1".into());
        }
        if !self.initial_step.is_empty()
            && (self.initial_step.len() != dims || self.initial_step.iter().any(|&v| !(v > 0.0)))
        {
            return bad("initial_step must hold one positive value per dimension".into());
        }
        if !(self.termination_epsilon > 0.0) || self.max_evaluations == 0 {
            return bad("termination_epsilon and max_evaluations must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub eval: usize,
    pub x: Vec<f64>,
    pub score: f64,
    pub accepted: bool,
    pub temperature: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnealTrace {
    pub entries: Vec<TraceEntry>,
}

impl AnnealTrace {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Best score seen up to and including each entry.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.entries
            .iter()
            .map(|e| {
                best = best.min(e.score);
                best
            })
            .collect()
    }

    /// CSV with columns `eval, x0..x{n-1}, score, accepted, temperature`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let n = self.entries.first().map_or(0, |e| e.x.len());
        let mut header = vec!["eval".to_string()];
        header.extend((0..n).map(|i| format!("x{i}")));
        header.extend(["score", "accepted", "temperature"].map(String::from));
        wr.write_record(&header)?;
        for e in &self.entries {
            let mut rec = vec![e.eval.to_string()];
            rec.extend(e.x.iter().map(|v| v.to_string()));
            rec.push(e.score.to_string());
            rec.push((e.accepted as u8).to_string());
            rec.push(e.temperature.to_string());
            wr.write_record(&rec)?;
        }
        wr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealResult {
    pub x_best: Vec<f64>,
    pub score_best: f64,
    pub evaluations: usize,
    pub temperature_levels: usize,
    pub trace: AnnealTrace,
}

/// Minimises `objective` over the box `bounds` starting from `x0`.
pub fn anneal<F>(mut objective: F, x0: &[f64], bounds: &[(f64, f64)], cfg: &AnnealConfig) -> Result<AnnealResult>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    if n == 0 || bounds.len() != n {
        return Err(Error::InvalidArgument(format!(
            "anneal: x0 has {n} dims but {} bounds given",
            bounds.len()
        )));
    }
    cfg.validate(n)?;
    for (dim, (&v, &(lo, hi))) in x0.iter().zip(bounds).enumerate() {
        if !(lo < hi) {
            return Err(Error::InvalidArgument(format!(
                "anneal: empty bound in dimension {dim}"
            )));
        }
        if !(v >= lo && v <= hi) {
            return Err(Error::OutOfBounds { dim, value: v, lo, hi });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = AnnealTrace::default();
    let mut evals = 0usize;

    let mut x = x0.to_vec();
    let mut f = objective(&x);
    if !f.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    let mut temperature = match cfg.initial_temperature {
        InitialTemperature::Absolute(t) => t,
        InitialTemperature::RelativeToStart(k) => {
            if f == 0.0 {
                k
            } else {
                k * f.abs()
            }
        }
    };
    trace.entries.push(TraceEntry {
        eval: evals,
        x: x.clone(),
        score: f,
        accepted: true,
        temperature,
    });
    evals += 1;

    let mut x_best = x.clone();
    let mut f_best = f;
    let mut step: Vec<f64> = if cfg.initial_step.is_empty() {
        bounds.iter().map(|(lo, hi)| 0.25 * (hi - lo)).collect()
    } else {
        cfg.initial_step.clone()
    };
    let mut level_scores: Vec<f64> = vec![f];
    let mut levels = 0usize;
    let mut accepted = vec![0usize; n];
    let mut trial = vec![0.0; n];

    'outer: loop {
        for _ in 0..cfg.cycles_per_temperature {
            for _ in 0..cfg.steps_per_cycle {
                for h in 0..n {
                    if evals >= cfg.max_evaluations {
                        break 'outer;
                    }
                    trial.copy_from_slice(&x);
                    let (lo, hi) = bounds[h];
                    let r: f64 = rng.random_range(-1.0..1.0);
                    trial[h] = x[h] + r * step[h];
                    if trial[h] < lo || trial[h] > hi {
                        trial[h] = rng.random_range(lo..=hi);
                    }
                    let ft = objective(&trial);
                    let accept = if !ft.is_finite() {
                        false
                    } else if ft <= f {
                        true
                    } else {
                        let p = (-(ft - f) / temperature).exp();
                        rng.random::<f64>() < p
                    };
                    trace.entries.push(TraceEntry {
                        eval: evals,
                        x: trial.clone(),
                        score: ft,
                        accepted: accept,
                        temperature,
                    });
                    evals += 1;
                    if accept {
                        x.copy_from_slice(&trial);
                        f = ft;
                        accepted[h] += 1;
                        if f < f_best {
                            f_best = f;
                            x_best.copy_from_slice(&x);
                        }
                    }
                }
            }
            adjust_steps(&mut step, &mut accepted, cfg, bounds);
        }
        levels += 1;
        level_scores.push(f);
        let k = level_scores.len() - 1;
        if k >= cfg.termination_levels {
            let stalled = (1..=cfg.termination_levels)
                .all(|u| (level_scores[k] - level_scores[k - u]).abs() <= cfg.termination_epsilon);
            if stalled && f - f_best <= cfg.termination_epsilon {
                break;
            }
        }
        temperature *= cfg.temperature_reduction;
        x.copy_from_slice(&x_best);
        f = f_best;
    }

    Ok(AnnealResult {
        x_best,
        score_best: f_best,
        evaluations: evals,
        temperature_levels: levels,
        trace,
    })
}

fn adjust_steps(step: &mut [f64], accepted: &mut [usize], cfg: &AnnealConfig, bounds: &[(f64, f64)]) {
    let ns = cfg.steps_per_cycle as f64;
    let c = cfg.step_adjust_factor;
    for h in 0..step.len() {
        let ratio = accepted[h] as f64 / ns;
        if ratio > 0.6 {
            step[h] *= 1.0 + c * (ratio - 0.6) / 0.4;
        } else if ratio < 0.4 {
            step[h] /= 1.0 + c * (0.4 - ratio) / 0.4;
        }
        step[h] = step[h].min(bounds[h].1 - bounds[h].0);
        accepted[h] = 0;
    }
}

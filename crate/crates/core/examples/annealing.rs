//! Adaptive simulated annealing on a multimodal test function.
use fluororeg::anneal::{anneal, AnnealConfig};

fn rastrigin(x: &[f64]) -> f64 {
    10.0 * x.len() as f64
        + x.iter()
            .map(|v| v * v - 10.0 * (2.0 * std::f64::consts::PI * v).cos())
            .sum::<f64>()
}

fn main() -> fluororeg::Result<()> {
    let bounds = vec![(-5.12, 5.12); 4];
    let x0 = vec![4.0, -3.5, 2.2, -4.4];
    let cfg = AnnealConfig {
        max_evaluations: 200_000,
        ..AnnealConfig::default()
    }
    .with_seed(7);
    let res = anneal(rastrigin, &x0, &bounds, &cfg)?;
    println!("start f = {:.3}", rastrigin(&x0));
    println!("best  f = {:.3e} at {:?}", res.score_best, res.x_best);
    println!(
        "{} evaluations over {} temperature levels",
        res.evaluations, res.temperature_levels
    );
    Ok(())
}

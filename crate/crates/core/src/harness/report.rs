use std::collections::BTreeSet;
use std::fmt::Write;

use super::stats::{ResidualStats, Summary};
use super::table::ResultRow;

fn fmt_stats(label: &str, s: &ResidualStats, out: &mut String) {
    let cell = |v: &Option<super::stats::Stats>| match v {
        Some(s) => format!("{:7.3} {:7.3} {:7.3} {:8.3}", s.mean, s.stddev, s.min, s.max),
        None => format!("{:>7} {:>7} {:>7} {:>8}", "-", "-", "-", "-"),
    };
    let _ = writeln!(
        out,
        "  {label:<34} {}   {}",
        cell(&s.translation_mm),
        cell(&s.rotation_deg)
    );
}

/// Plain-text report: per-run-type format grid (passes/trials, `*` marks the
/// clinically relevant cells), residual statistics and histograms.
pub fn render_report(rows: &[ResultRow], summary: &Summary) -> String {
    let mut out = String::new();
    let run_types: BTreeSet<&str> = rows.iter().map(|r| r.run_type.as_str()).collect();
    for rt in run_types {
        let sel: Vec<&ResultRow> = rows.iter().filter(|r| r.run_type == rt).collect();
        let mut vols: Vec<f64> = sel.iter().map(|r| r.volume_fov_cm).collect();
        let mut imgs: Vec<f64> = sel.iter().map(|r| r.image_fov_cm).collect();
        for v in [&mut vols, &mut imgs] {
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v.dedup();
        }
        let _ = writeln!(
            out,
            "{} / {rt}: passed/trials per cell (rows: volume cm, columns: image cm)",
            sel[0].experiment
        );
        let _ = write!(out, "{:>6}", "");
        for i in &imgs {
            let _ = write!(out, "{i:>9}");
        }
        let _ = writeln!(out);
        for v in &vols {
            let _ = write!(out, "{v:>6}");
            for i in &imgs {
                let cell: Vec<&&ResultRow> = sel
                    .iter()
                    .filter(|r| r.volume_fov_cm == *v && r.image_fov_cm == *i)
                    .collect();
                if cell.is_empty() {
                    let _ = write!(out, "{:>9}", "");
                    continue;
                }
                let ok = cell.iter().filter(|r| r.pass == Some(true)).count();
                let mark = if cell[0].relevant { "*" } else { " " };
                let _ = write!(out, "{:>8}{mark}", format!("{ok}/{}", cell.len()));
            }
            let _ = writeln!(out);
        }
        let _ = writeln!(out);
    }
    for (name, s) in [
        ("all cells", &summary.all_cells),
        ("clinically relevant", &summary.clinically_relevant),
    ] {
        let _ = writeln!(
            out,
            "{name}: {} trials, {} completed, success {:.1}% (translation {:.1}%, rotation {:.1}%)",
            s.trials,
            s.completed,
            100.0 * s.success_rate,
            100.0 * s.translation_rate,
            100.0 * s.rotation_rate
        );
    }
    let _ = writeln!(
        out,
        "\nresiduals  {:>34}   {:^32}   {:^32}",
        "", "translation mm (mean sd min max)", "rotation deg (mean sd min max)"
    );
    fmt_stats("all cells, all trials", &summary.all_cells.all, &mut out);
    fmt_stats("all cells, successful", &summary.all_cells.successful, &mut out);
    fmt_stats(
        "clinically relevant, all trials",
        &summary.clinically_relevant.all,
        &mut out,
    );
    fmt_stats(
        "clinically relevant, successful",
        &summary.clinically_relevant.successful,
        &mut out,
    );
    for (name, h) in [
        ("translation mm", &summary.translation_histogram),
        ("rotation deg", &summary.rotation_histogram),
    ] {
        let _ = writeln!(out, "\nhistogram {name}");
        for (label, c) in h.labels().iter().zip(&h.counts) {
            let _ = writeln!(out, "  {label:>9} {c}");
        }
    }
    out
}

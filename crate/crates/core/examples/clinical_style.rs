//! Random-offset registrations against reconstructed runs of a contrast and a
//! non-contrast patient.
use fluororeg::harness::{contrast_pass_rates, run_clinical_style, ClinicalPlan};

fn main() -> fluororeg::Result<()> {
    let trials = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(10);
    let plan = ClinicalPlan {
        trials_per_patient: trials,
        ..ClinicalPlan::default()
    };
    let table = run_clinical_style(&plan)?;
    for r in &table.rows {
        println!(
            "{:<12} frame {:>3} offset {:>5.1} mm -> {:.2} mm in plane, {:.2} deg",
            if r.contrast == Some(true) {
                "contrast"
            } else {
                "no contrast"
            },
            r.frame.unwrap_or(0),
            r.offset_tx_mm.hypot(r.offset_ty_mm).hypot(r.offset_tz_mm),
            r.in_plane_mm.unwrap_or(f64::NAN),
            r.r_deg.unwrap_or(f64::NAN)
        );
    }
    let (ct, cr, nt, nr) = contrast_pass_rates(&table);
    println!("contrast:    translation {ct:.2} rotation {cr:.2}");
    println!("no contrast: translation {nt:.2} rotation {nr:.2}");
    Ok(())
}

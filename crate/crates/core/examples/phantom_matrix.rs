//! A reduced phantom matrix: three formats, exposure noise, the four standard offsets.
use fluororeg::harness::{render_report, run_phantom_matrix, summarize, PhantomMatrixPlan, RunType};

fn main() -> fluororeg::Result<()> {
    let plan = PhantomMatrixPlan {
        volume_formats_cm: vec![22.0, 27.0, 31.0],
        image_formats_cm: vec![22.0, 27.0, 31.0],
        run_types: vec![RunType::Exposure],
        ..PhantomMatrixPlan::default()
    };
    let table = run_phantom_matrix(&plan)?;
    let summary = summarize(&table.rows)?;
    print!("{}", render_report(&table.rows, &summary));
    Ok(())
}

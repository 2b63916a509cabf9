//! Simulated rotational run of the phantom and its FDK reconstruction.
use fluororeg::noise::NoiseModel;
use fluororeg::phantom::{generate_phantom, PhantomSpec};
use fluororeg::projector::DrrConfig;
use fluororeg::recon::{
    fdk_reconstruct, normalized_cross_correlation, resample_to_grid, simulate_rotational_run, FdkConfig, ReconGrid,
    Trajectory,
};
use fluororeg::CArmCamera;

fn main() -> fluororeg::Result<()> {
    let vol = generate_phantom(&PhantomSpec::head(3.0))?;
    let base = CArmCamera::with_format(27.0, [128, 128]);
    let traj = Trajectory {
        n_frames: 60,
        ..Trajectory::default()
    };
    let run = simulate_rotational_run(
        &vol,
        &base,
        &traj,
        &DrrConfig::for_volume(&vol),
        &NoiseModel::exposure(),
        3,
    )?;
    println!("{} frames over {} deg", run.frames.len(), traj.arc_deg);

    let grid = ReconGrid {
        dims: [64, 64, 64],
        spacing_mm: 3.0,
        fov_diameter_cm: 27.0,
    };
    let rec = fdk_reconstruct(&run.frames, &run.cameras, &grid, &FdkConfig::default())?;
    let reference = resample_to_grid(&vol, &grid);
    println!(
        "NCC against the phantom: {:.3}",
        normalized_cross_correlation(rec.data(), &reference)
    );
    Ok(())
}

//! Calibrates a sagging C-arm on a 20 degree grid and checks the machine-based
//! initialization at off-grid positions.
use fluororeg::calibration::{
    build_calibration_grid, calibration_camera, machine_register, machine_truth, GridRange, MarkerAcquisition, SagModel,
};
use fluororeg::geometry::pose_error_for_camera;
use nalgebra::Point3;

fn main() -> fluororeg::Result<()> {
    let sag = SagModel::default_sag();
    let base = calibration_camera();
    let grid = build_calibration_grid(&sag, &base, &GridRange::default(), &MarkerAcquisition::default())?;
    println!(
        "{} nodes, worst marker reprojection rms {:.3} px",
        grid.cameras.len(),
        grid.reprojection_rms_px.iter().cloned().fold(0.0, f64::max)
    );

    for (rot, ang) in [(7.0, 3.0), (-55.0, 25.0), (101.0, -33.0)] {
        let est = machine_register(&grid, rot, ang)?;
        let truth = machine_truth(&sag, &base, rot, ang);
        let e = pose_error_for_camera(&est, &truth, &Point3::origin(), &base.clone().at_angles(rot, ang));
        println!(
            "rot {rot:>6.1} ang {ang:>6.1}: init error {:.3} mm in plane, {:.3} mm along the beam",
            e.in_plane_mm, e.out_of_plane_mm
        );
    }
    Ok(())
}

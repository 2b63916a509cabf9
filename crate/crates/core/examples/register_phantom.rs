//! One two-stage registration of a noisy phantom DRR from a displaced start.
use fluororeg::harness::{offset_in_world, standard_offsets};
use fluororeg::noise::NoiseModel;
use fluororeg::phantom::{crop_to_fov, generate_phantom, PhantomSpec};
use fluororeg::projector::{DrrConfig, PreparedVolume};
use fluororeg::registration::{two_stage_register, SuccessCriteria, TwoStageConfig};
use fluororeg::{CArmCamera, RigidTransform};

fn main() -> fluororeg::Result<()> {
    let camera = CArmCamera::with_format(27.0, [128, 128]).at_angles(10.0, 10.0);
    let full = generate_phantom(&PhantomSpec::head(2.0))?;
    let truth = RigidTransform::identity();
    let fixed = PreparedVolume::new(&full).render(&camera, &truth, &DrrConfig::for_volume(&full), None)?;
    let fixed = NoiseModel::exposure().apply(&fixed, 1)?;
    let vol = crop_to_fov(&full, 27.0)?;

    for offset in standard_offsets() {
        let init = offset_in_world(&offset.transform(), &camera).compose(&truth);
        let res = two_stage_register(&vol, &fixed, &camera, &init, &TwoStageConfig::default())?.with_truth(
            &truth,
            &camera,
            &SuccessCriteria::default(),
        );
        let e = res.error.expect("truth attached");
        println!(
            "{}: residual {:.2} mm / {:.2} deg after {} evaluations in {:.1} s",
            offset.label, e.t_mm, e.r_deg, res.evaluations, res.wall_time_s
        );
    }
    Ok(())
}

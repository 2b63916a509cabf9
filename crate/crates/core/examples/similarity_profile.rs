//! Gradient-difference score as the phantom slides away from its true position.
use fluororeg::harness::{similarity_landscape, LandscapeAxis, SearchAxis};
use fluororeg::phantom::{crop_to_fov, generate_phantom, PhantomSpec};
use fluororeg::projector::{DrrConfig, PreparedVolume};
use fluororeg::similarity::SimilarityConfig;
use fluororeg::{CArmCamera, RigidTransform};

fn main() -> fluororeg::Result<()> {
    let camera = CArmCamera::with_format(27.0, [128, 128]).at_angles(10.0, 10.0);
    let vol = crop_to_fov(&generate_phantom(&PhantomSpec::head(2.0))?, 27.0)?;
    let prepared = PreparedVolume::new(&vol);
    let drr = DrrConfig::for_volume(&vol).with_downsample(2);
    let fixed = prepared.render(&camera, &RigidTransform::identity(), &drr, None)?;

    for axis in [SearchAxis::Tx, SearchAxis::Rz] {
        let range = if axis == SearchAxis::Tx { 20.0 } else { 10.0 };
        let sweep = [LandscapeAxis {
            axis,
            lo: -range,
            hi: range,
            steps: 11,
        }];
        let rows = similarity_landscape(
            &prepared,
            &fixed,
            &camera,
            &RigidTransform::identity(),
            &sweep,
            &drr,
            &SimilarityConfig::default(),
            None,
        )?;
        println!("{}", axis.name());
        for r in rows {
            println!("  {:>7.2} {:>10.2}", r.coords[0], r.score);
        }
    }
    Ok(())
}

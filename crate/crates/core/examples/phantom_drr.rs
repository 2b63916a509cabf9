//! Builds the head phantom and writes DRRs at a few C-arm positions as PGM files.
use fluororeg::io::export_pgm;
use fluororeg::phantom::{generate_phantom, PhantomSpec};
use fluororeg::projector::{DrrConfig, PreparedVolume};
use fluororeg::{CArmCamera, RigidTransform};

fn main() -> fluororeg::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "drr_out".into());
    std::fs::create_dir_all(&out).expect("create output dir");

    let vol = generate_phantom(&PhantomSpec::head(2.0))?;
    println!("phantom {:?} voxels at {:?} mm", vol.dims(), vol.spacing_mm());
    let prepared = PreparedVolume::new(&vol);
    let drr = DrrConfig::for_volume(&vol);

    for (rot, ang) in [(0.0, 0.0), (90.0, 0.0), (30.0, 20.0)] {
        let camera = CArmCamera::with_format(27.0, [256, 256]).at_angles(rot, ang);
        let img = prepared.render(&camera, &RigidTransform::identity(), &drr, None)?;
        let path = std::path::Path::new(&out).join(format!("drr_rot{rot}_ang{ang}.pgm"));
        export_pgm(&img, &path, None)?;
        let max = img.data().iter().cloned().fold(f32::MIN, f32::max);
        println!("{} max line integral {max:.3}", path.display());
    }
    Ok(())
}

use fluororeg::projector::{DrrConfig, PreparedVolume};
use fluororeg::recon::{ramp_response, FilterWindow};
use fluororeg::similarity::{GradientDifference, SimilarityConfig};
use fluororeg::{CArmCamera, Image2D, RigidTransform, Volume};
use nalgebra::{Point3, Vector3};
use proptest::prelude::*;

fn transform() -> impl Strategy<Value = RigidTransform> {
    (
        prop::array::uniform3(-50.0..50.0f64),
        prop::array::uniform3(-180.0..180.0f64),
    )
        .prop_map(|(t, r)| RigidTransform::from_parts_deg(t, r))
}

fn point() -> impl Strategy<Value = Point3<f64>> {
    prop::array::uniform3(-200.0..200.0f64).prop_map(|p| Point3::new(p[0], p[1], p[2]))
}

/// Integer-valued images keep f32 gradients exact.
fn int_image(n: usize) -> impl Strategy<Value = Image2D> {
    prop::collection::vec(0..64i32, n * n)
        .prop_map(move |v| Image2D::new([n, n], 1.0, v.into_iter().map(|x| x as f32).collect(), 10.0).unwrap())
}

fn small_volume(n: usize) -> impl Strategy<Value = Volume> {
    prop::collection::vec(0.0..1.0f32, n * n * n).prop_map(move |d| {
        let s = 60.0 / n as f64;
        let o = -0.5 * (n as f64 - 1.0) * s;
        Volume::new([n; 3], [s; 3], [o; 3], d, 27.0).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn compose_is_associative(a in transform(), b in transform(), c in transform(), p in point()) {
        let l = a.compose(&b).compose(&c).apply(&p);
        let r = a.compose(&b.compose(&c)).apply(&p);
        prop_assert!((l - r).norm() < 1e-9);
    }

    #[test]
    fn compose_applies_right_first(a in transform(), b in transform(), p in point()) {
        let l = a.compose(&b).apply(&p);
        let r = a.apply(&b.apply(&p));
        prop_assert!((l - r).norm() < 1e-9);
    }

    #[test]
    fn inverse_round_trips(a in transform(), p in point()) {
        prop_assert!((a.inverse().apply(&a.apply(&p)) - p).norm() < 1e-9);
        prop_assert!(a.compose(&a.inverse()).max_abs_diff(&RigidTransform::identity()) < 1e-9);
        prop_assert!(a.orthonormality_error() < 1e-9);
    }

    #[test]
    fn euler_round_trip(rx in -179.0..179.0f64, ry in -89.0..89.0f64, rz in -179.0..179.0f64) {
        let t = RigidTransform::from_euler_xyz_deg(rx, ry, rz);
        let e = t.euler_xyz_deg();
        let back = RigidTransform::from_euler_xyz_deg(e[0], e[1], e[2]);
        prop_assert!(back.max_abs_diff(&t) < 1e-9);
    }

    #[test]
    fn rotation_preserves_lengths(a in transform(), v in prop::array::uniform3(-10.0..10.0f64)) {
        let v = Vector3::new(v[0], v[1], v[2]);
        prop_assert!((a.apply_vector(&v).norm() - v.norm()).abs() < 1e-9);
    }

    #[test]
    fn similarity_bounded_by_pixel_count(f in int_image(12), m in int_image(12), s in 0.05..20.0f64) {
        let gd = GradientDifference::new(&f, &SimilarityConfig::default()).unwrap();
        let v = gd.score_at(&m, s).unwrap();
        prop_assert!(v <= gd.max_score());
        prop_assert!(v > 0.0);
    }

    #[test]
    fn similarity_self_match_attains_bound(f in int_image(12)) {
        let gd = GradientDifference::new(&f, &SimilarityConfig::default()).unwrap();
        prop_assert_eq!(gd.score_at(&f, 1.0).unwrap(), gd.max_score());
    }

    #[test]
    fn similarity_ignores_constant_offset(f in int_image(12), m in int_image(12), c in -16..16i32, s in 0.1..5.0f64) {
        let gd = GradientDifference::new(&f, &SimilarityConfig::default()).unwrap();
        let shifted = m.map(|x| x + c as f32);
        prop_assert_eq!(gd.score_at(&m, s).unwrap(), gd.score_at(&shifted, s).unwrap());
    }

    #[test]
    fn similarity_scale_couples_with_intensity(f in int_image(12), m in int_image(12), k in 0..4u32, s in 0.1..5.0f64) {
        let gd = GradientDifference::new(&f, &SimilarityConfig::default()).unwrap();
        let k = 2f64.powi(k as i32 - 1);
        let scaled = m.map(|x| x * k as f32);
        prop_assert_eq!(gd.score_at(&scaled, s).unwrap(), gd.score_at(&m, s * k).unwrap());
    }

    #[test]
    fn ramp_has_no_dc(n in 3..11u32, hann in any::<bool>()) {
        let w = if hann { FilterWindow::Hann } else { FilterWindow::RamLak };
        let r = ramp_response(1 << n, w);
        prop_assert!(r[0].abs() < 1e-12);
        prop_assert!(r.iter().all(|v| *v >= -1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn projector_is_linear(a in small_volume(10), b in small_volume(10), wa in 0.1..3.0f32, wb in 0.1..3.0f32,
                           pose in transform(), rot in -90.0..90.0f64, ang in -30.0..30.0f64) {
        let pose = RigidTransform::new(pose.rotation, pose.translation * 0.1);
        let camera = CArmCamera::with_format(27.0, [24, 24]).at_angles(rot, ang);
        let cfg = DrrConfig::for_volume(&a);
        let mix = a.with_data(a.data().iter().zip(b.data()).map(|(x, y)| wa * x + wb * y).collect()).unwrap();
        let ia = PreparedVolume::new(&a).render(&camera, &pose, &cfg, None).unwrap();
        let ib = PreparedVolume::new(&b).render(&camera, &pose, &cfg, None).unwrap();
        let im = PreparedVolume::new(&mix).render(&camera, &pose, &cfg, None).unwrap();
        let scale = im.data().iter().cloned().fold(1e-3f32, f32::max) as f64;
        for ((x, y), z) in ia.data().iter().zip(ib.data()).zip(im.data()) {
            let lin = wa as f64 * *x as f64 + wb as f64 * *y as f64;
            prop_assert!((lin - *z as f64).abs() <= 1e-6 * scale, "{lin} vs {z}");
        }
    }
}

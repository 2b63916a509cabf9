//! Every stochastic pipeline gives bit-identical output for a fixed seed,
//! whatever the size of the worker pool.

use fluororeg::anneal::{anneal, AnnealConfig};
use fluororeg::harness::{run_clinical_style, run_phantom_matrix, ClinicalPlan, PhantomMatrixPlan, RunType};
use fluororeg::noise::NoiseModel;
use fluororeg::phantom::{generate_phantom, PhantomSpec};
use fluororeg::projector::{DrrConfig, PreparedVolume};
use fluororeg::recon::{fdk_reconstruct, simulate_rotational_run, FdkConfig, ReconGrid, Trajectory};
use fluororeg::registration::TwoStageConfig;
use fluororeg::{CArmCamera, RigidTransform};

fn with_threads<T: Send>(n: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .unwrap()
        .install(f)
}

fn small_registration() -> TwoStageConfig {
    let mut cfg = TwoStageConfig::default();
    cfg.coarse.anneal.max_evaluations = 150;
    cfg.fine.anneal.max_evaluations = 40;
    cfg
}

#[test]
fn anneal_repeats_bit_for_bit() {
    let f = |x: &[f64]| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 0.5).powi(2) + (5.0 * x[0]).sin();
    let cfg = AnnealConfig::default().with_seed(42);
    let a = anneal(f, &[2.0, 2.0], &[(-4.0, 4.0); 2], &cfg).unwrap();
    let b = anneal(f, &[2.0, 2.0], &[(-4.0, 4.0); 2], &cfg).unwrap();
    assert_eq!(a, b);
    let c = anneal(f, &[2.0, 2.0], &[(-4.0, 4.0); 2], &cfg.clone().with_seed(43)).unwrap();
    assert_ne!(a.trace, c.trace);
}

#[test]
fn noise_and_drr_independent_of_pool_size() {
    let vol = generate_phantom(&PhantomSpec::head(4.0)).unwrap();
    let camera = CArmCamera::with_format(27.0, [96, 96]).at_angles(10.0, 10.0);
    let render = || {
        let img = PreparedVolume::new(&vol)
            .render(&camera, &RigidTransform::identity(), &DrrConfig::for_volume(&vol), None)
            .unwrap();
        NoiseModel::fluoroscopy().apply(&img, 9).unwrap()
    };
    let a = with_threads(1, render);
    let b = with_threads(3, render);
    assert_eq!(a.data(), b.data());
}

#[test]
fn reconstruction_independent_of_pool_size() {
    let vol = generate_phantom(&PhantomSpec::head(6.0)).unwrap();
    let base = CArmCamera::with_format(27.0, [48, 48]);
    let traj = Trajectory {
        n_frames: 24,
        ..Trajectory::default()
    };
    let grid = ReconGrid {
        dims: [32, 32, 32],
        spacing_mm: 6.0,
        fov_diameter_cm: 27.0,
    };
    let run = || {
        let r = simulate_rotational_run(
            &vol,
            &base,
            &traj,
            &DrrConfig::for_volume(&vol),
            &NoiseModel::exposure(),
            5,
        )
        .unwrap();
        fdk_reconstruct(&r.frames, &r.cameras, &grid, &FdkConfig::default()).unwrap()
    };
    let a = with_threads(1, run);
    let b = with_threads(3, run);
    assert_eq!(a.data(), b.data());
}

#[test]
fn phantom_matrix_independent_of_pool_size() {
    let plan = PhantomMatrixPlan {
        volume_formats_cm: vec![27.0],
        image_formats_cm: vec![22.0, 27.0],
        run_types: vec![RunType::Fluoroscopy],
        phantom: PhantomSpec::head(4.0),
        detector_dims: [64, 64],
        registration: small_registration(),
        seed: 3,
        ..PhantomMatrixPlan::default()
    };
    let a = with_threads(1, || run_phantom_matrix(&plan).unwrap()).without_timing();
    let b = with_threads(3, || run_phantom_matrix(&plan).unwrap()).without_timing();
    assert_eq!(a.rows.len(), 8);
    assert_eq!(a, b);
}

#[test]
fn clinical_style_independent_of_pool_size() {
    let mut plan = ClinicalPlan {
        trials_per_patient: 2,
        detector_dims: [64, 64],
        phantom: PhantomSpec::head(4.0),
        registration: small_registration(),
        seed: 8,
        ..ClinicalPlan::default()
    };
    plan.registration.space = ClinicalPlan::default().registration.space;
    plan.run.trajectory.n_frames = 30;
    plan.run.grid = ReconGrid {
        dims: [48, 48, 48],
        spacing_mm: 4.0,
        fov_diameter_cm: 27.0,
    };
    let a = with_threads(1, || run_clinical_style(&plan).unwrap()).without_timing();
    let b = with_threads(3, || run_clinical_style(&plan).unwrap()).without_timing();
    assert_eq!(a.rows.len(), 4);
    assert_eq!(a, b);
}

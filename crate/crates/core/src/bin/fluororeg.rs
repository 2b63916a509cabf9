use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use fluororeg::calibration::{
    build_calibration_grid, calibration_camera, machine_register, GridRange, MarkerAcquisition, SagModel,
};
use fluororeg::harness::{
    contrast_pass_rates, render_report, run_clinical_style, run_phantom_matrix, similarity_landscape, summarize,
    write_landscape_csv, CellFilter, ClinicalPlan, LandscapeAxis, PhantomMatrixPlan, ResultTable, RunType, SearchAxis,
};
use fluororeg::io::{export_pgm, load_image, load_json, load_volume, save_image, save_json, save_volume};
use fluororeg::noise::NoiseModel;
use fluororeg::phantom::{crop_to_fov, generate_phantom, PhantomSpec};
use fluororeg::projector::{DrrConfig, PreparedVolume};
use fluororeg::recon::{
    fdk_reconstruct, simulate_rotational_run, FdkConfig, FilterWindow, ReconGrid, RotationalRun, Trajectory,
};
use fluororeg::registration::{two_stage_register, SuccessCriteria, TwoStageConfig};
use fluororeg::{CArmCamera, RigidTransform};

#[derive(Parser, Debug)]
#[command(
    name = "fluororeg",
    version,
    about = "2D/3D registration of X-ray projections to volumes"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Global {
    /// Base seed for every stochastic step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, short, global = true)]
    verbose: bool,
    /// JSON object merged over the resolved configuration; a manifest.json
    /// from an earlier run replays that run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic head phantom.
    Phantom(PhantomArgs),
    /// Render a DRR of a volume.
    Drr(DrrArgs),
    /// Simulate a rotational acquisition of a volume.
    SimulateRun(SimulateRunArgs),
    /// FDK reconstruction of a rotational run directory.
    Reconstruct(ReconstructArgs),
    /// Build the C-arm calibration grid under a sag model.
    Calibrate(CalibrateArgs),
    /// Register an image to a volume.
    Register(RegisterArgs),
    /// Registration experiments.
    #[command(subcommand)]
    Experiment(Experiment),
    /// Similarity over a grid of displacements.
    Landscape(LandscapeArgs),
    /// Summarize a results CSV.
    Report(ReportArgs),
}

#[derive(Subcommand, Debug)]
enum Experiment {
    /// Volume format x image format x offset matrix on the phantom.
    PhantomMatrix(MatrixArgs),
    /// Random-offset registrations against reconstructed rotational runs.
    ClinicalStyle(ClinicalArgs),
}

#[derive(Args, Debug)]
struct PhantomArgs {
    #[arg(long, default_value_t = 2.0)]
    spacing_mm: f64,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    facial_structures: bool,
    #[arg(long)]
    contrast: bool,
    /// Crop to the cylinder seen by this detector format.
    #[arg(long)]
    crop_fov_cm: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
enum NoiseArg {
    None,
    Exposure,
    Fluoroscopy,
}

impl NoiseArg {
    fn model(self) -> NoiseModel {
        match self {
            NoiseArg::None => NoiseModel::None,
            NoiseArg::Exposure => NoiseModel::exposure(),
            NoiseArg::Fluoroscopy => NoiseModel::fluoroscopy(),
        }
    }
}

#[derive(Args, Debug)]
struct CameraArgs {
    /// Camera JSON; overrides the format/angle flags.
    #[arg(long)]
    camera: Option<PathBuf>,
    #[arg(long, default_value_t = 27.0)]
    fov_cm: f64,
    #[arg(long, default_value_t = 256)]
    detector: usize,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    rotation_deg: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    angulation_deg: f64,
}

impl CameraArgs {
    fn resolve(&self) -> fluororeg::Result<CArmCamera> {
        match &self.camera {
            Some(p) => load_json(p),
            None => Ok(CArmCamera::with_format(self.fov_cm, [self.detector; 2])
                .at_angles(self.rotation_deg, self.angulation_deg)),
        }
    }
}

#[derive(Args, Debug)]
struct DrrArgs {
    #[arg(long)]
    volume: Option<PathBuf>,
    #[command(flatten)]
    camera: CameraArgs,
    /// Patient transform JSON (identity when absent).
    #[arg(long)]
    pose: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    downsample: usize,
    #[arg(long)]
    step_mm: Option<f64>,
    #[arg(long, value_enum, default_value_t = NoiseArg::None)]
    noise: NoiseArg,
}

#[derive(Args, Debug)]
struct SimulateRunArgs {
    #[arg(long)]
    volume: Option<PathBuf>,
    #[command(flatten)]
    camera: CameraArgs,
    #[arg(long, default_value_t = 120)]
    frames: usize,
    #[arg(long, default_value_t = -100.0, allow_hyphen_values = true)]
    start_deg: f64,
    #[arg(long, default_value_t = 200.0)]
    arc_deg: f64,
    #[arg(long, value_enum, default_value_t = NoiseArg::Exposure)]
    noise: NoiseArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum WindowArg {
    RamLak,
    Hann,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    /// Run directory written by simulate-run.
    #[arg(long)]
    run: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    grid: usize,
    #[arg(long, default_value_t = 1.5)]
    spacing_mm: f64,
    #[arg(long, value_enum, default_value_t = WindowArg::RamLak)]
    window: WindowArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SagArg {
    Default,
    None,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[arg(long, value_enum, default_value_t = SagArg::Default)]
    sag: SagArg,
    #[arg(long, default_value_t = 0.25)]
    noise_px: f64,
    #[arg(long, default_value_t = 100.0)]
    circumradius_mm: f64,
    #[arg(long, default_value_t = 20.0)]
    spacing_deg: f64,
    /// Also report the machine-based initialization at ROTATION,ANGULATION.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    at: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct RegisterArgs {
    #[arg(long)]
    volume: Option<PathBuf>,
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    camera: Option<PathBuf>,
    /// Initial patient transform JSON.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Ground-truth transform JSON; adds residuals to the result.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
enum PlanPreset {
    /// Full format ladder, four offsets, both noise levels.
    Default,
    /// Clinically relevant cells only.
    Relevant,
    /// One 27/27 cell, exposure noise.
    Quick,
}

#[derive(Args, Debug)]
struct MatrixArgs {
    #[arg(long, value_enum, default_value_t = PlanPreset::Default)]
    plan: PlanPreset,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, value_enum, value_delimiter = ',')]
    run_types: Option<Vec<RunTypeArg>>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RunTypeArg {
    Exposure,
    Fluoroscopy,
}

#[derive(Args, Debug)]
struct ClinicalArgs {
    #[arg(long, default_value_t = 100)]
    trials_per_patient: usize,
}

#[derive(Args, Debug)]
struct LandscapeArgs {
    /// Volume to sweep; the default head phantom cropped to the format when absent.
    #[arg(long)]
    volume: Option<PathBuf>,
    #[arg(long, default_value_t = 27.0)]
    fov_cm: f64,
    #[arg(long, default_value_t = 128)]
    detector: usize,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = vec![AxisArg::Tx, AxisArg::Ty])]
    axes: Vec<AxisArg>,
    /// Half range for translation axes.
    #[arg(long, default_value_t = 15.0)]
    range_mm: f64,
    /// Half range for rotation axes.
    #[arg(long, default_value_t = 10.0)]
    range_deg: f64,
    #[arg(long, default_value_t = 33)]
    steps: usize,
    #[arg(long, default_value_t = 2)]
    downsample: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq)]
enum AxisArg {
    Tx,
    Ty,
    Rx,
    Ry,
    Rz,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    results: Option<PathBuf>,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(String),
    Domain(fluororeg::Error),
}

impl From<fluororeg::Error> for Failure {
    fn from(e: fluororeg::Error) -> Self {
        Failure::Domain(e)
    }
}

type CmdResult<T> = Result<T, Failure>;

fn flag_path(p: &Option<PathBuf>) -> PathBuf {
    p.clone().unwrap_or_default()
}

/// Path inputs may come from flags or from `--config`; either must supply them.
fn required(p: &std::path::Path, flag: &str) -> CmdResult<()> {
    if p.as_os_str().is_empty() {
        return Err(Failure::Usage(format!("missing --{flag}")));
    }
    Ok(())
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}

/// Applies `--config` on top of the flag-derived configuration.
fn resolve<T: Serialize + DeserializeOwned>(flags: T, g: &Global) -> CmdResult<T> {
    let Some(path) = &g.config else {
        return Ok(flags);
    };
    let text =
        std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut over: Value =
        serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{} is not JSON: {e}", path.display())))?;
    if let Some(inner) = over.get_mut("config") {
        over = inner.take();
    }
    let mut base = serde_json::to_value(&flags).map_err(|e| Failure::Usage(e.to_string()))?;
    merge(&mut base, over);
    serde_json::from_value(base).map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))
}

#[derive(Serialize)]
struct Manifest<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    argv: Vec<String>,
    seed: u64,
    threads: Option<usize>,
    config: &'a T,
    outputs: Vec<String>,
}

struct Ctx {
    g: Global,
    command: &'static str,
}

impl Ctx {
    fn out(&self, name: &str) -> PathBuf {
        self.g.out_dir.join(name)
    }

    fn log(&self, msg: impl AsRef<str>) {
        if self.g.verbose {
            eprintln!("[{}] {}", self.command, msg.as_ref());
        }
    }

    fn finish<T: Serialize>(&self, config: &T, outputs: &[&str]) -> CmdResult<()> {
        let m = Manifest {
            tool: "fluororeg",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            argv: std::env::args().collect(),
            seed: self.g.seed,
            threads: self.g.threads,
            config,
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
        };
        save_json(&m, &self.out("manifest.json"))?;
        for o in outputs {
            println!("{}", self.out(o).display());
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct PhantomConfig {
    spec: PhantomSpec,
    crop_fov_cm: Option<f64>,
}

fn cmd_phantom(ctx: &Ctx, a: &PhantomArgs) -> CmdResult<()> {
    let mut spec = PhantomSpec::head(a.spacing_mm)
        .with_facial_structures(a.facial_structures)
        .with_contrast(a.contrast);
    spec.seed = ctx.g.seed;
    let cfg = resolve(
        PhantomConfig {
            spec,
            crop_fov_cm: a.crop_fov_cm,
        },
        &ctx.g,
    )?;
    cfg.spec.validate()?;
    ctx.log("generating phantom");
    let mut vol = generate_phantom(&cfg.spec)?;
    if let Some(f) = cfg.crop_fov_cm {
        vol = crop_to_fov(&vol, f)?;
    }
    save_volume(&vol, &ctx.out("phantom"))?;
    save_json(&cfg.spec, &ctx.out("phantom_spec.json"))?;
    ctx.finish(&cfg, &["phantom.vol.json", "phantom.vol.raw", "phantom_spec.json"])
}

#[derive(Serialize, Deserialize)]
struct DrrCommandConfig {
    volume: PathBuf,
    camera: CArmCamera,
    pose: RigidTransform,
    drr: Option<DrrConfig>,
    downsample: usize,
    step_mm: Option<f64>,
    noise: NoiseModel,
    seed: u64,
}

fn cmd_drr(ctx: &Ctx, a: &DrrArgs) -> CmdResult<()> {
    let pose = match &a.pose {
        Some(p) => load_json(p)?,
        None => RigidTransform::identity(),
    };
    let cfg = resolve(
        DrrCommandConfig {
            volume: flag_path(&a.volume),
            camera: a.camera.resolve()?,
            pose,
            drr: None,
            downsample: a.downsample,
            step_mm: a.step_mm,
            noise: a.noise.model(),
            seed: ctx.g.seed,
        },
        &ctx.g,
    )?;
    required(&cfg.volume, "volume")?;
    cfg.camera.validate()?;
    let vol = load_volume(&cfg.volume)?;
    let drr = match cfg.drr {
        Some(d) => d,
        None => {
            let d = DrrConfig::for_volume(&vol).with_downsample(cfg.downsample);
            match cfg.step_mm {
                Some(s) => d.with_step(s),
                None => d,
            }
        }
    };
    ctx.log("rendering");
    let img = PreparedVolume::new(&vol).render(&cfg.camera, &cfg.pose, &drr, None)?;
    let img = cfg.noise.apply(&img, cfg.seed)?;
    save_image(&img, &ctx.out("drr"))?;
    export_pgm(&img, &ctx.out("drr.pgm"), None)?;
    save_json(&cfg.camera, &ctx.out("camera.json"))?;
    ctx.finish(&cfg, &["drr.img.json", "drr.img.raw", "drr.pgm", "camera.json"])
}

#[derive(Serialize, Deserialize)]
struct RunCommandConfig {
    volume: PathBuf,
    camera: CArmCamera,
    trajectory: Trajectory,
    noise: NoiseModel,
    seed: u64,
}

fn cmd_simulate_run(ctx: &Ctx, a: &SimulateRunArgs) -> CmdResult<()> {
    let cfg = resolve(
        RunCommandConfig {
            volume: flag_path(&a.volume),
            camera: a.camera.resolve()?,
            trajectory: Trajectory {
                n_frames: a.frames,
                start_deg: a.start_deg,
                arc_deg: a.arc_deg,
                angulation_deg: a.camera.angulation_deg,
            },
            noise: a.noise.model(),
            seed: ctx.g.seed,
        },
        &ctx.g,
    )?;
    required(&cfg.volume, "volume")?;
    cfg.trajectory.validate()?;
    cfg.camera.validate()?;
    let vol = load_volume(&cfg.volume)?;
    ctx.log(format!("rendering {} frames", cfg.trajectory.n_frames));
    let run = simulate_rotational_run(
        &vol,
        &cfg.camera,
        &cfg.trajectory,
        &DrrConfig::for_volume(&vol),
        &cfg.noise,
        cfg.seed,
    )?;
    run.save(&ctx.out("run"))?;
    ctx.finish(&cfg, &["run"])
}

/// Reconstruction grid; the field of view defaults to the run's format.
#[derive(Serialize, Deserialize)]
struct GridConfig {
    dims: [usize; 3],
    spacing_mm: f64,
    fov_diameter_cm: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct ReconCommandConfig {
    run: PathBuf,
    grid: GridConfig,
    fdk: FdkConfig,
}

fn cmd_reconstruct(ctx: &Ctx, a: &ReconstructArgs) -> CmdResult<()> {
    let cfg = resolve(
        ReconCommandConfig {
            run: flag_path(&a.run),
            grid: GridConfig {
                dims: [a.grid; 3],
                spacing_mm: a.spacing_mm,
                fov_diameter_cm: None,
            },
            fdk: FdkConfig {
                window: match a.window {
                    WindowArg::RamLak => FilterWindow::RamLak,
                    WindowArg::Hann => FilterWindow::Hann,
                },
            },
        },
        &ctx.g,
    )?;
    required(&cfg.run, "run")?;
    let run = RotationalRun::load(&cfg.run)?;
    let grid = ReconGrid {
        dims: cfg.grid.dims,
        spacing_mm: cfg.grid.spacing_mm,
        fov_diameter_cm: cfg
            .grid
            .fov_diameter_cm
            .unwrap_or_else(|| run.cameras.first().map_or(27.0, |c| c.fov_diameter_cm)),
    };
    ctx.log(format!("reconstructing {} frames", run.frames.len()));
    let vol = fdk_reconstruct(&run.frames, &run.cameras, &grid, &cfg.fdk)?;
    save_volume(&vol, &ctx.out("recon"))?;
    ctx.finish(&cfg, &["recon.vol.json", "recon.vol.raw"])
}

#[derive(Serialize, Deserialize)]
struct CalibrateConfig {
    sag: SagModel,
    camera: CArmCamera,
    range: GridRange,
    acquisition: MarkerAcquisition,
    at: Option<[f64; 2]>,
}

fn cmd_calibrate(ctx: &Ctx, a: &CalibrateArgs) -> CmdResult<()> {
    let cfg = resolve(
        CalibrateConfig {
            sag: match a.sag {
                SagArg::Default => SagModel::default_sag(),
                SagArg::None => SagModel::none(),
            },
            camera: calibration_camera(),
            range: GridRange {
                spacing_deg: a.spacing_deg,
                ..GridRange::default()
            },
            acquisition: MarkerAcquisition {
                circumradius_mm: a.circumradius_mm,
                noise_px: a.noise_px,
                seed: ctx.g.seed,
            },
            at: match a.at.as_deref() {
                None => None,
                Some(&[r, ang]) => Some([r, ang]),
                Some(_) => return Err(Failure::Usage("--at takes ROTATION,ANGULATION".into())),
            },
        },
        &ctx.g,
    )?;
    ctx.log("calibrating grid");
    let grid = build_calibration_grid(&cfg.sag, &cfg.camera, &cfg.range, &cfg.acquisition)?;
    save_json(&grid, &ctx.out("calibration_grid.json"))?;
    let mut outputs = vec!["calibration_grid.json"];
    if let Some([r, ang]) = cfg.at {
        save_json(&machine_register(&grid, r, ang)?, &ctx.out("machine_init.json"))?;
        save_json(&grid.interpolate_camera(r, ang)?, &ctx.out("camera.json"))?;
        outputs.extend(["machine_init.json", "camera.json"]);
    }
    ctx.finish(&cfg, &outputs)
}

#[derive(Serialize, Deserialize)]
struct RegisterConfig {
    volume: PathBuf,
    image: PathBuf,
    camera: PathBuf,
    init: PathBuf,
    truth: Option<PathBuf>,
    registration: TwoStageConfig,
    criteria: SuccessCriteria,
    seed: u64,
}

fn cmd_register(ctx: &Ctx, a: &RegisterArgs) -> CmdResult<()> {
    let cfg = resolve(
        RegisterConfig {
            volume: flag_path(&a.volume),
            image: flag_path(&a.image),
            camera: flag_path(&a.camera),
            init: flag_path(&a.init),
            truth: a.truth.clone(),
            registration: TwoStageConfig::default(),
            criteria: SuccessCriteria::default(),
            seed: ctx.g.seed,
        },
        &ctx.g,
    )?;
    required(&cfg.volume, "volume")?;
    required(&cfg.image, "image")?;
    required(&cfg.camera, "camera")?;
    required(&cfg.init, "init")?;
    let vol = load_volume(&cfg.volume)?;
    let img = load_image(&cfg.image)?;
    let camera: CArmCamera = load_json(&cfg.camera)?;
    let init: RigidTransform = load_json(&cfg.init)?;
    ctx.log("registering");
    let mut result = two_stage_register(
        &vol,
        &img,
        &camera,
        &init,
        &cfg.registration.clone().with_seed(cfg.seed),
    )?;
    if let Some(t) = &cfg.truth {
        let truth: RigidTransform = load_json(t)?;
        result = result.with_truth(&truth, &camera, &cfg.criteria);
    }
    save_json(&result, &ctx.out("result.json"))?;
    save_json(&result.recovered, &ctx.out("recovered.json"))?;
    ctx.finish(&cfg, &["result.json", "recovered.json"])
}

fn write_results(ctx: &Ctx, table: &ResultTable, extra: Option<Value>) -> CmdResult<()> {
    table.save_csv(&ctx.out("results.csv"))?;
    let summary = summarize(&table.rows)?;
    let mut json = serde_json::to_value(&summary).map_err(fluororeg::Error::from)?;
    if let (Some(Value::Object(e)), Value::Object(s)) = (extra, &mut json) {
        s.extend(e);
    }
    save_json(&json, &ctx.out("summary.json"))?;
    let report = render_report(&table.rows, &summary);
    std::fs::write(ctx.out("report.txt"), &report).map_err(|e| fluororeg::Error::Unreadable {
        path: ctx.out("report.txt"),
        source: e,
    })?;
    if ctx.g.verbose {
        eprintln!("{report}");
    }
    Ok(())
}

fn cmd_matrix(ctx: &Ctx, a: &MatrixArgs) -> CmdResult<()> {
    let mut plan = PhantomMatrixPlan {
        seed: ctx.g.seed,
        ..PhantomMatrixPlan::default()
    };
    match a.plan {
        PlanPreset::Default => {}
        PlanPreset::Relevant => plan.cells = CellFilter::ClinicallyRelevant,
        PlanPreset::Quick => {
            plan.volume_formats_cm = vec![27.0];
            plan.image_formats_cm = vec![27.0];
            plan.run_types = vec![RunType::Exposure];
        }
    }
    if let Some(t) = a.trials {
        plan.trials_per_cell = t;
    }
    if let Some(rt) = &a.run_types {
        plan.run_types = rt
            .iter()
            .map(|r| match r {
                RunTypeArg::Exposure => RunType::Exposure,
                RunTypeArg::Fluoroscopy => RunType::Fluoroscopy,
            })
            .collect();
    }
    let plan = resolve(plan, &ctx.g)?;
    plan.validate()?;
    ctx.log("running phantom matrix");
    let table = run_phantom_matrix(&plan)?;
    write_results(ctx, &table, None)?;
    ctx.finish(&plan, &["results.csv", "summary.json", "report.txt"])
}

fn cmd_clinical(ctx: &Ctx, a: &ClinicalArgs) -> CmdResult<()> {
    let plan = resolve(
        ClinicalPlan {
            trials_per_patient: a.trials_per_patient,
            seed: ctx.g.seed,
            ..ClinicalPlan::default()
        },
        &ctx.g,
    )?;
    plan.validate()?;
    ctx.log("running clinical-style experiment");
    let table = run_clinical_style(&plan)?;
    let (ct, cr, nt, nr) = contrast_pass_rates(&table);
    let extra = serde_json::json!({
        "contrast_translation_rate": ct,
        "contrast_rotation_rate": cr,
        "no_contrast_translation_rate": nt,
        "no_contrast_rotation_rate": nr,
    });
    write_results(ctx, &table, Some(extra))?;
    ctx.finish(&plan, &["results.csv", "summary.json", "report.txt"])
}

#[derive(Serialize, Deserialize)]
struct LandscapeConfig {
    volume: Option<PathBuf>,
    camera: CArmCamera,
    axes: Vec<LandscapeAxis>,
    downsample: usize,
}

fn cmd_landscape(ctx: &Ctx, a: &LandscapeArgs) -> CmdResult<()> {
    let axes = a
        .axes
        .iter()
        .map(|ax| {
            let (axis, r) = match ax {
                AxisArg::Tx => (SearchAxis::Tx, a.range_mm),
                AxisArg::Ty => (SearchAxis::Ty, a.range_mm),
                AxisArg::Rx => (SearchAxis::Rx, a.range_deg),
                AxisArg::Ry => (SearchAxis::Ry, a.range_deg),
                AxisArg::Rz => (SearchAxis::Rz, a.range_deg),
            };
            LandscapeAxis {
                axis,
                lo: -r,
                hi: r,
                steps: a.steps,
            }
        })
        .collect();
    let cfg = resolve(
        LandscapeConfig {
            volume: a.volume.clone(),
            camera: CArmCamera::with_format(a.fov_cm, [a.detector; 2]).at_angles(10.0, 10.0),
            axes,
            downsample: a.downsample,
        },
        &ctx.g,
    )?;
    let vol = match &cfg.volume {
        Some(p) => load_volume(p)?,
        None => crop_to_fov(&generate_phantom(&PhantomSpec::head(2.0))?, cfg.camera.fov_diameter_cm)?,
    };
    let prepared = PreparedVolume::new(&vol);
    let drr = DrrConfig::for_volume(&vol).with_downsample(cfg.downsample);
    let fixed = prepared.render(&cfg.camera, &RigidTransform::identity(), &drr, None)?;
    ctx.log(format!("sweeping {} axes", cfg.axes.len()));
    let rows = similarity_landscape(
        &prepared,
        &fixed,
        &cfg.camera,
        &RigidTransform::identity(),
        &cfg.axes,
        &drr,
        &Default::default(),
        None,
    )?;
    let path = ctx.out("landscape.csv");
    std::fs::create_dir_all(&ctx.g.out_dir).map_err(|e| fluororeg::Error::Unreadable {
        path: ctx.g.out_dir.clone(),
        source: e,
    })?;
    let f = std::fs::File::create(&path).map_err(|e| fluororeg::Error::Unreadable {
        path: path.clone(),
        source: e,
    })?;
    write_landscape_csv(&cfg.axes, &rows, std::io::BufWriter::new(f))?;
    ctx.finish(&cfg, &["landscape.csv"])
}

#[derive(Serialize, Deserialize)]
struct ReportConfig {
    results: PathBuf,
}

fn cmd_report(ctx: &Ctx, a: &ReportArgs) -> CmdResult<()> {
    let cfg = resolve(
        ReportConfig {
            results: flag_path(&a.results),
        },
        &ctx.g,
    )?;
    required(&cfg.results, "results")?;
    let table = ResultTable::load_csv(&cfg.results)?;
    write_results_summary_only(ctx, &table)?;
    ctx.finish(&cfg, &["summary.json", "report.txt"])
}

fn write_results_summary_only(ctx: &Ctx, table: &ResultTable) -> CmdResult<()> {
    let summary = summarize(&table.rows)?;
    save_json(&summary, &ctx.out("summary.json"))?;
    let report = render_report(&table.rows, &summary);
    std::fs::write(ctx.out("report.txt"), &report).map_err(|e| fluororeg::Error::Unreadable {
        path: ctx.out("report.txt"),
        source: e,
    })?;
    print!("{report}");
    Ok(())
}

fn run(cli: Cli) -> CmdResult<()> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let name = match &cli.command {
        Command::Phantom(_) => "phantom",
        Command::Drr(_) => "drr",
        Command::SimulateRun(_) => "simulate-run",
        Command::Reconstruct(_) => "reconstruct",
        Command::Calibrate(_) => "calibrate",
        Command::Register(_) => "register",
        Command::Experiment(Experiment::PhantomMatrix(_)) => "experiment phantom-matrix",
        Command::Experiment(Experiment::ClinicalStyle(_)) => "experiment clinical-style",
        Command::Landscape(_) => "landscape",
        Command::Report(_) => "report",
    };
    let ctx = Ctx {
        g: cli.global.clone(),
        command: name,
    };
    match &cli.command {
        Command::Phantom(a) => cmd_phantom(&ctx, a),
        Command::Drr(a) => cmd_drr(&ctx, a),
        Command::SimulateRun(a) => cmd_simulate_run(&ctx, a),
        Command::Reconstruct(a) => cmd_reconstruct(&ctx, a),
        Command::Calibrate(a) => cmd_calibrate(&ctx, a),
        Command::Register(a) => cmd_register(&ctx, a),
        Command::Experiment(Experiment::PhantomMatrix(a)) => cmd_matrix(&ctx, a),
        Command::Experiment(Experiment::ClinicalStyle(a)) => cmd_clinical(&ctx, a),
        Command::Landscape(a) => cmd_landscape(&ctx, a),
        Command::Report(a) => cmd_report(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Domain(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

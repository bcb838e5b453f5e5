use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use streetforge::conditioning::TaskId;
use streetforge::diffusion::{
    train_denoiser, Denoiser, NoiseSchedule, Objective, SampleConfig, TinyConfig, TinyDenoiser, TrainConfig,
    DEFAULT_TRAIN_STEPS,
};
use streetforge::pipeline::{
    denoiser_dataset, eval_metrics, fuse_bundle, gen_synthetic_scene, lateral_shift, oracle_views, render_views, run_feedforward_nvs,
    train_gs, write_fused, ConditionEcho, GsConfig, NvsConfig, SceneBundle, SynthSpec, SynthWorld, ViewSet,
};
use streetforge::pipeline::io::read_color_png;
use streetforge::splat::OptimConfig;
use streetforge::{Error, Result};

/// Multi-modal street view synthesis from LiDAR and Gaussian scene training.
#[derive(Parser)]
#[command(name = "streetforge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic street scene bundle.
    Gen(GenArgs),
    /// Aggregate a bundle's LiDAR into a fused scene file.
    Fuse {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate color, depth and semantics along a laterally shifted trajectory.
    Nvs(NvsArgs),
    /// Record an object removal or a reference-image swap in a bundle.
    Edit(EditArgs),
    /// Fit Gaussians to a bundle, optionally with virtual views.
    TrainGs(TrainGsArgs),
    /// Train the small conditional denoiser on a bundle's frames.
    TrainDenoiser(TrainDenoiserArgs),
    /// Score predicted views against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
}

#[derive(Args)]
struct GenArgs {
    /// JSON scene description; omitted fields take their defaults.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also render exact views along this lateral shift (meters) into
    /// `--virtual-out`.
    #[arg(long, allow_hyphen_values = true, requires = "virtual_out")]
    virtual_shift: Vec<f64>,
    #[arg(long)]
    virtual_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Color,
    Depth,
    Semantic,
    All,
}

impl TaskArg {
    fn tasks(self) -> Vec<TaskId> {
        match self {
            TaskArg::Color => vec![TaskId::Color],
            TaskArg::Depth => vec![TaskId::Depth],
            TaskArg::Semantic => vec![TaskId::Semantic],
            TaskArg::All => TaskId::ALL.to_vec(),
        }
    }
}

#[derive(Args)]
struct NvsArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Lateral offset in meters, positive to the right.
    #[arg(long, allow_hyphen_values = true)]
    shift: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    steps: usize,
    #[arg(long, value_enum, default_value_t = TaskArg::All)]
    task: TaskArg,
    #[arg(long)]
    out: PathBuf,
    /// Trained denoiser; without it the condition-echo stub is used.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    clip_len: usize,
    #[arg(long, default_value_t = 0.0)]
    eta: f64,
}

#[derive(Args)]
#[group(required = true, multiple = false, id = "edit_kind")]
struct EditKind {
    #[arg(long)]
    remove_object: Option<i32>,
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Args)]
struct EditArgs {
    #[arg(long)]
    scene: PathBuf,
    #[command(flatten)]
    kind: EditKind,
    /// Write the edited bundle here instead of in place.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainGsArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long = "virtual")]
    virtual_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    theta: f64,
    #[arg(long, default_value_t = 30_000)]
    iters: usize,
    #[arg(long)]
    out: PathBuf,
    /// Views to render and score after training; defaults to the training frames.
    #[arg(long)]
    heldout: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    densify_every: usize,
}

#[derive(Args)]
struct TrainDenoiserArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 32)]
    width: usize,
    #[arg(long, default_value_t = 4)]
    clip_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3e-3)]
    lr: f64,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read(path).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_slice(&text)?)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::InvalidArgument(format!("{}: {e}", dir.display())))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    std::fs::write(path, serde_json::to_vec_pretty(value)?)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}

fn gen(args: GenArgs) -> Result<()> {
    let spec: SynthSpec = read_json(&args.spec)?;
    let bundle = gen_synthetic_scene(&spec)?;
    bundle.save(&args.out)?;
    println!("wrote {} frames to {}", bundle.frames.len(), args.out.display());
    if let Some(dir) = args.virtual_out {
        let world = SynthWorld::new(spec)?;
        let poses: Vec<_> = args.virtual_shift.iter().flat_map(|m| lateral_shift(&bundle, *m)).collect();
        let set = oracle_views(&world, &poses)?;
        set.save(&dir)?;
        println!("wrote {} exact views to {}", set.views.len(), dir.display());
    }
    Ok(())
}

fn nvs(args: NvsArgs) -> Result<()> {
    let bundle = SceneBundle::load(&args.scene)?;
    let (denoiser, sched): (Box<dyn Denoiser + Sync>, NoiseSchedule) = match &args.model {
        Some(path) => {
            let model = TinyDenoiser::load(path)?;
            let sched = model.schedule().clone();
            (Box::new(model), sched)
        }
        None => {
            eprintln!("no --model given, using the condition-echo stub");
            let sched = NoiseSchedule::ddpm(DEFAULT_TRAIN_STEPS)?;
            (Box::new(ConditionEcho { sched: sched.clone() }), sched)
        }
    };
    let cfg = NvsConfig {
        sample: SampleConfig {
            num_steps: args.steps,
            eta: args.eta,
            seed: args.seed,
        },
        tasks: args.task.tasks(),
        clip_len: args.clip_len,
    };
    let traj = lateral_shift(&bundle, args.shift);
    let out = run_feedforward_nvs(&bundle, &traj, denoiser.as_ref(), &sched, &cfg)?;
    out.views.save(&args.out)?;
    println!("wrote {} views to {}", out.views.views.len(), args.out.display());
    Ok(())
}

fn edit(args: EditArgs) -> Result<()> {
    let mut bundle = SceneBundle::load(&args.scene)?;
    if let Some(id) = args.kind.remove_object {
        let fused = fuse_bundle(&bundle)?;
        if !fused.objects.contains_key(&id) {
            return Err(Error::UnknownObject(id));
        }
        bundle.edits.removed_objects.insert(id);
    }
    if let Some(path) = &args.kind.reference {
        let img = read_color_png(path)?;
        if (img.width, img.height) != (bundle.camera.width, bundle.camera.height) {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", bundle.camera.width, bundle.camera.height),
                actual: format!("{}x{}", img.width, img.height),
            });
        }
        bundle.edits.reference_override = Some(img);
    }
    let target = args.out.unwrap_or(args.scene);
    bundle.save(&target)?;
    println!("saved edited bundle to {}", target.display());
    Ok(())
}

fn train_gs_cmd(args: TrainGsArgs) -> Result<()> {
    let bundle = SceneBundle::load(&args.scene)?;
    let virtual_set = args.virtual_dir.as_deref().map(ViewSet::load).transpose()?;
    let heldout = args.heldout.as_deref().map(ViewSet::load).transpose()?;
    let cfg = GsConfig {
        optim: OptimConfig {
            iters: args.iters,
            theta: args.theta,
            densify_every: args.densify_every,
            ..Default::default()
        },
        seed: args.seed,
        ..Default::default()
    };
    let out = train_gs(&bundle, virtual_set.as_ref(), heldout.as_ref(), &cfg)?;
    create_dir(&args.out)?;
    out.scene.save(&args.out.join("scene.gs"))?;
    let targets = heldout.unwrap_or_else(|| ViewSet::from_bundle(&bundle));
    render_views(&out.scene, &targets, &cfg.optim.render).save(&args.out.join("renders"))?;
    write_json(&args.out.join("report.json"), &out.report)?;
    let csv: String = std::iter::once("step,loss\n".to_string())
        .chain(out.trace.losses.iter().enumerate().map(|(i, l)| format!("{i},{l}\n")))
        .collect();
    std::fs::write(args.out.join("loss.csv"), csv).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    for w in &out.trace.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "trained {} gaussians, virtual fraction {:.3}, mean PSNR {:.2} dB",
        out.scene.len(),
        out.trace.virtual_fraction(),
        out.report.mean.psnr.unwrap_or(f64::NAN)
    );
    Ok(())
}

fn train_denoiser_cmd(args: TrainDenoiserArgs) -> Result<()> {
    let bundle = SceneBundle::load(&args.scene)?;
    let data = denoiser_dataset(&bundle, args.clip_len, &TaskId::ALL)?;
    let sched = NoiseSchedule::ddpm(DEFAULT_TRAIN_STEPS)?;
    let channels = data[0].x0.c;
    let mut model = TinyDenoiser::new(
        TinyConfig {
            channels,
            width: args.width,
        },
        Objective::V,
        sched.clone(),
        args.seed,
    )?;
    let cfg = TrainConfig {
        steps: args.steps,
        seed: args.seed,
        lr: args.lr,
        ..Default::default()
    };
    let report = train_denoiser(&mut model, &data, &sched, &cfg)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    model.save(&args.out)?;
    report.write_csv(&args.out.with_extension("csv"))?;
    println!(
        "trained on {} clips, smoothed loss {:.4} -> {:.4}",
        data.len(),
        report.smoothed.first().copied().unwrap_or(f64::NAN),
        report.smoothed.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(args) => gen(args),
        Command::Fuse { scene, out } => {
            let fused = fuse_bundle(&SceneBundle::load(&scene)?)?;
            write_fused(&out, &fused)?;
            println!(
                "fused {} static points and {} objects into {}",
                fused.static_world.len(),
                fused.objects.len(),
                out.display()
            );
            Ok(())
        }
        Command::Nvs(args) => nvs(args),
        Command::Edit(args) => edit(args),
        Command::TrainGs(args) => train_gs_cmd(args),
        Command::TrainDenoiser(args) => train_denoiser_cmd(args),
        Command::Eval { pred, gt, report } => {
            let r = eval_metrics(&ViewSet::load(&pred)?, &ViewSet::load(&gt)?)?;
            write_json(&report, &r)?;
            println!("{}", serde_json::to_string(&r.mean)?);
            Ok(())
        }
    }
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(value) = std::env::var("STREETFORGE_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("STREETFORGE_THREADS must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(1);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}

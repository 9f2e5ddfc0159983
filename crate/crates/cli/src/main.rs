mod config;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dodt::metrics::AblationReport;
use dodt::pipeline::{
    ablation_variants, align_truth, read_tracks_csv, read_truth, run_ablation, write_tracks_csv, SequenceReader,
    SequenceWriter,
};
use dodt::scenegen::{render_scene, suites, DetectionJitter, NoiseModel, RenderedScene, SceneScript};
use dodt::{evaluate, run_frames, run_sequence, CameraIntrinsics, EvalReport};

use config::ConfigArgs;

#[derive(Debug, Parser)]
#[command(name = "dodt", version, about = "Dynamic obstacle detection and tracking on depth sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Process a sequence and write per-frame tracks.
    Run(RunArgs),
    /// Render a synthetic scene into a sequence directory.
    Gen(GenArgs),
    /// Score a track file against ground truth.
    Eval(EvalArgs),
    /// Compare the full pipeline with its ablated variants.
    Ablate(AblateArgs),
    /// Report per-stage compute time.
    Bench(BenchArgs),
}

/// Where frames come from: a sequence directory or a synthetic scene.
#[derive(Debug, Clone, Args)]
struct SourceArgs {
    /// Sequence directory.
    #[arg(long, conflicts_with_all = ["scene", "script"])]
    seq: Option<PathBuf>,
    #[command(flatten)]
    scene: SceneArgs,
}

#[derive(Debug, Clone, Args)]
struct SceneArgs {
    /// Built-in scene name.
    #[arg(long, conflicts_with = "script")]
    scene: Option<String>,
    /// Scene script in TOML.
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long, default_value_t = 640)]
    width: u32,
    #[arg(long, default_value_t = 480)]
    height: u32,
    /// Depth noise as a fraction of depth; replaces the scene's noise.
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Per-frame blob artifact probability; replaces the scene's rate.
    #[arg(long)]
    blob_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also synthesize 2D detections.
    #[arg(long)]
    det2d: bool,
    /// Edge jitter of synthetic 2D boxes, pixels.
    #[arg(long, default_value_t = 0.0)]
    det_sigma: f64,
    /// Probability a synthetic 2D box is dropped.
    #[arg(long, default_value_t = 0.0)]
    det_dropout: f64,
}

impl SceneArgs {
    fn is_set(&self) -> bool {
        self.scene.is_some() || self.script.is_some()
    }

    fn load(&self) -> Result<(SceneScript, NoiseModel)> {
        let (script, mut noise) = match (&self.scene, &self.script) {
            (Some(name), _) => suites::by_name(name).with_context(|| {
                format!("unknown scene {name:?}; known: {}", suites::SCENE_NAMES.join(", "))
            })?,
            (None, Some(path)) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                (SceneScript::from_toml(&text)?, NoiseModel::none())
            }
            (None, None) => bail!("give --scene or --script"),
        };
        if let Some(s) = self.noise_sigma {
            noise.depth_sigma = s;
        }
        if let Some(r) = self.blob_rate {
            noise.blob_rate = r;
        }
        if let Some(seed) = self.seed {
            noise.seed = seed;
        }
        Ok((script, noise))
    }

    fn render(&self) -> Result<RenderedScene> {
        let (script, noise) = self.load()?;
        self.render_script(&script, &noise)
    }

    fn render_script(&self, script: &SceneScript, noise: &NoiseModel) -> Result<RenderedScene> {
        let intr = CameraIntrinsics::d435_like(self.width, self.height);
        let jitter = DetectionJitter {
            pixel_sigma: self.det_sigma,
            dropout: self.det_dropout,
            seed: noise.seed,
        };
        Ok(render_scene(script, &intr, noise, self.det2d.then_some(&jitter))?)
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Sequence directory.
    #[arg(long)]
    seq: PathBuf,
    /// Directory for tracks.csv, timing.json and, with truth, report.json.
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[command(flatten)]
    scene: SceneArgs,
    /// Output sequence directory.
    #[arg(long, short)]
    out: PathBuf,
    /// Also write the resolved scene script here.
    #[arg(long)]
    write_script: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Track file written by `run`.
    #[arg(long)]
    tracks: PathBuf,
    /// Ground truth, one frame per line.
    #[arg(long, required_unless_present = "seq", conflicts_with = "seq")]
    truth: Option<PathBuf>,
    /// Sequence whose ground truth to use.
    #[arg(long)]
    seq: Option<PathBuf>,
    /// Write the report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Write all reports as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Passes over the frames.
    #[arg(long, default_value_t = 1)]
    repeat: usize,
    /// Write the timing report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = dispatch(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(a) => run(a),
        Command::Gen(a) => gen(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Bench(a) => bench(a),
    }
}

fn run(args: RunArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let result = run_sequence(&args.seq, &cfg)?;
    std::fs::create_dir_all(&args.out)?;
    write_tracks_csv(&args.out.join("tracks.csv"), &result.run.outputs)?;
    write_json(&args.out.join("timing.json"), &result.run.timing)?;
    let dynamic: usize = result
        .run
        .outputs
        .iter()
        .map(|o| o.tracks.iter().filter(|t| t.class == dodt::ObstacleClass::Dynamic).count())
        .sum();
    println!(
        "{} frames processed, {} skipped, {} dynamic track-frames",
        result.run.outputs.len(),
        result.run.skipped.len(),
        dynamic
    );
    if let Some(report) = &result.report {
        report.write_json(&args.out.join("report.json"))?;
        print_report(report);
    }
    print!("{}", result.run.timing.table());
    Ok(())
}

fn gen(args: GenArgs) -> Result<()> {
    if args.out.exists() && args.out.read_dir()?.next().is_some() {
        bail!("{} exists and is not empty", args.out.display());
    }
    let (script, noise) = args.scene.load()?;
    if let Some(path) = &args.write_script {
        std::fs::write(path, script.to_toml()?)?;
    }
    let scene = args.scene.render_script(&script, &noise)?;
    let mut writer = SequenceWriter::create(&args.out, scene.intrinsics, script.frame_rate)?;
    for (frame, truth) in scene.frames.iter().zip(&scene.truth) {
        writer.push(frame, Some(truth))?;
    }
    let meta = writer.finish()?;
    println!("wrote {} frames to {}", meta.frames, args.out.display());
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let truth = match (&args.truth, &args.seq) {
        (Some(path), _) => read_truth(path)?,
        (None, Some(dir)) => SequenceReader::open(dir)?
            .truth()?
            .with_context(|| format!("{} has no ground truth", dir.display()))?,
        (None, None) => unreachable!("clap requires one of --truth and --seq"),
    };
    let timestamps: Vec<f64> = truth.iter().map(|g| g.timestamp).collect();
    let outputs = read_tracks_csv(&args.tracks, &timestamps, cfg.eval.time_tolerance)?;
    let aligned = align_truth(&outputs, &truth, cfg.eval.time_tolerance);
    let report = evaluate(&outputs, &aligned, &cfg.eval)?;
    print_report(&report);
    if let Some(path) = &args.report {
        report.write_json(path)?;
    }
    Ok(())
}

fn ablate(args: AblateArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let variants = ablation_variants(&cfg);
    let report: AblationReport = match &args.source.seq {
        Some(dir) => {
            let reader = SequenceReader::open(dir)?;
            let truth = reader
                .truth()?
                .with_context(|| format!("{} has no ground truth", dir.display()))?;
            let frames = || (0..reader.len()).filter_map(|i| reader.frame(i).ok());
            run_ablation(frames, reader.intrinsics(), &truth, &variants)?
        }
        None => {
            let scene = args.source.scene.render()?;
            run_ablation(|| scene.frames.clone(), &scene.intrinsics, &scene.truth, &variants)?
        }
    };
    print!("{}", report.summary_table());
    if let Some(path) = &args.report {
        write_json(path, &report)?;
    }
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let (intr, frames) = match &args.source.seq {
        Some(dir) => {
            let reader = SequenceReader::open(dir)?;
            let frames = (0..reader.len()).map(|i| reader.frame(i)).collect::<dodt::Result<Vec<_>>>()?;
            (*reader.intrinsics(), frames)
        }
        None => {
            let mut scene = args.source.scene.clone();
            if !scene.is_set() {
                scene.scene = Some("bench".into());
            }
            let r = scene.render()?;
            (r.intrinsics, r.frames)
        }
    };
    if frames.is_empty() {
        bail!("no frames to time");
    }
    let span = frames.last().map_or(0.0, |f| f.timestamp) - frames[0].timestamp;
    let period = if frames.len() > 1 { span / (frames.len() - 1) as f64 } else { 1.0 };
    let repeated = (0..args.repeat.max(1)).flat_map(|pass| {
        frames.iter().cloned().map(move |mut f| {
            f.timestamp += pass as f64 * (span + period);
            f
        })
    });
    let result = run_frames(repeated, &intr, &cfg)?;
    print!("{}", result.timing.table());
    if let Some(path) = &args.report {
        write_json(path, &result.timing)?;
    }
    Ok(())
}

fn print_report(r: &EvalReport) {
    println!(
        "pos_rmse {:.4} m, vel_rmse {:.4} m/s, fp_rate {:.4} ({}/{}), matched {}, id_switches {}",
        r.pos_rmse, r.vel_rmse, r.fp_rate, r.misdetections, r.dynamic_detections, r.matched, r.id_switches
    );
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

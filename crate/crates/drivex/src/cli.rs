use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use drivex_core::camera::Pose;
use drivex_core::evaluation::{eval_novel, eval_recorded, EvalReport};
use drivex_core::imaging::{ImageRgb, LUMA};
use drivex_core::math::Vec3;
use drivex_core::restorer::restorer_by_id;
use drivex_core::scene::SceneModel;
use drivex_core::synthworld::{generate_world, render_dataset, CaptureSpec, WorldSpec, FRONT};
use drivex_core::trainer::{init_from_lidar, inspect_view, optimize, RefreshStats, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset_io::{read_dataset, write_dataset, StoredDataset};
use crate::error::{Error, Result};
use crate::formats;
use crate::report::emit_report;

pub const CHECKPOINT: &str = "checkpoint.dxgs";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const SUMMARY: &str = "summary.json";
pub const THREADS_ENV: &str = "DRIVEX_THREADS";

#[derive(Debug, Parser)]
#[command(name = "drivex", version, about = "Gaussian splatting for driving scenes with restored novel-trajectory supervision")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (falls back to DRIVEX_THREADS).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a world and write its recorded dataset.
    Synth(SynthArgs),
    /// Optimize a scene on a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint against recorded and shifted ground truth.
    Eval(EvalArgs),
    /// Write the render / warp / mask / LiDAR strip of one novel view.
    Debug(DebugArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Benchmark,
    Compact,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Dataset directory to write.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub frames: Option<usize>,
    /// Replace the configured world and capture with a preset.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Output directory for the checkpoint, log and summary.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// identity | oracle | noisy-oracle
    #[arg(long)]
    pub restorer: Option<String>,
    #[arg(long)]
    pub noise_level: Option<f64>,
    /// Recon-only baseline.
    #[arg(long)]
    pub no_novel: bool,
    #[arg(long)]
    pub novel_weight: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub refresh_interval: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub strength: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Defaults to the checkpoint in the output directory.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub shifts: Option<Vec<f64>>,
    /// Record wall-clock evaluation time in the report.
    #[arg(long)]
    pub record_runtime: bool,
}

#[derive(Debug, Args)]
pub struct DebugArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    /// Lateral offset of the front camera, in meters (positive is right).
    #[arg(long, default_value_t = 0.0)]
    pub shift: f64,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: usize,
    pub recorded_loss: f64,
    pub novel_loss: Option<f64>,
    pub novel_depth_loss: Option<f64>,
    pub primitives: usize,
    pub pruned: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refresh: Option<RefreshStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub primitives: usize,
    pub restorer: String,
    pub refreshes: Vec<RefreshStats>,
    pub mask_stats: Vec<f64>,
    pub train: TrainConfig,
    pub runtime_seconds: f64,
}

pub fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| Error::Config(format!("{THREADS_ENV}={v:?} is not a thread count"))),
        Err(_) => Ok(None),
    }
}

fn configure_threads(n: Option<usize>) -> Result<()> {
    match n {
        Some(0) => Err(Error::Config("thread count must be at least 1".into())),
        // A pool that is already built (repeated in-process runs) keeps its size.
        Some(n) => {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            Ok(())
        }
        None => Ok(()),
    }
}

fn base_config(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

pub fn run(cli: Cli) -> Result<()> {
    configure_threads(thread_count(cli.threads)?)?;
    let mut cfg = base_config(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(a) => {
            let seed = a.seed.unwrap_or(cfg.world.seed);
            match a.preset {
                Some(Preset::Benchmark) => (cfg.world, cfg.capture) = (WorldSpec::benchmark(seed), CaptureSpec::default()),
                Some(Preset::Compact) => (cfg.world, cfg.capture) = (WorldSpec::compact(seed), CaptureSpec::compact()),
                None => cfg.world.seed = seed,
            }
            if let Some(f) = a.frames {
                cfg.capture.frames = f;
                cfg.world.frames = f;
            }
            if let Some(o) = a.out {
                cfg.dataset = o;
            }
            cfg.validate()?;
            cmd_synth(&cfg).map(|_| ())
        }
        Command::Train(a) => {
            if let Some(d) = a.dataset {
                cfg.dataset = d;
            }
            if let Some(o) = a.out {
                cfg.output = o;
            }
            if let Some(r) = a.restorer {
                cfg.restorer.id = r;
            }
            if let Some(n) = a.noise_level {
                cfg.restorer.noise_level = n;
            }
            if a.no_novel {
                cfg.train.novel = false;
            }
            let t = &mut cfg.train;
            let overrides =
                [(&mut t.total_steps, a.steps), (&mut t.warmup_steps, a.warmup), (&mut t.refresh_interval, a.refresh_interval)];
            for (slot, v) in overrides {
                if let Some(v) = v {
                    *slot = v;
                }
            }
            for (slot, v) in [(&mut t.novel_loss_weight, a.novel_weight), (&mut t.tau, a.tau), (&mut t.strength, a.strength)] {
                if let Some(v) = v {
                    *slot = v;
                }
            }
            if let Some(s) = a.seed {
                t.seed = s;
            }
            cfg.validate()?;
            cmd_train(&cfg).map(|_| ())
        }
        Command::Eval(a) => {
            if let Some(d) = a.dataset {
                cfg.dataset = d;
            }
            if let Some(o) = a.out {
                cfg.output = o;
            }
            if let Some(s) = a.shifts {
                cfg.shifts = s;
            }
            cfg.validate()?;
            let ckpt = a.checkpoint.unwrap_or_else(|| cfg.output.join(CHECKPOINT));
            cmd_eval(&cfg, &ckpt, a.record_runtime).map(|_| ())
        }
        Command::Debug(a) => {
            if let Some(d) = a.dataset {
                cfg.dataset = d;
            }
            if let Some(o) = a.out {
                cfg.output = o;
            }
            cfg.validate()?;
            let ckpt = a.checkpoint.unwrap_or_else(|| cfg.output.join(CHECKPOINT));
            let path = cmd_debug(&cfg, &ckpt, a.frame, a.shift)?;
            println!("wrote {}", path.display());
            Ok(())
        }
    }
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<StoredDataset> {
    let world = generate_world(&cfg.world)?;
    let dataset = render_dataset(&world, &cfg.capture)?;
    write_dataset(&dataset, Some(&cfg.world), &cfg.dataset)?;
    cfg.echo(&cfg.dataset)?;
    let points: usize = dataset.lidar.iter().map(|l| l.points.len()).sum();
    println!(
        "wrote {}: {} frames ({} holdout), {} cameras, {} LiDAR points, {} novel sets, world of {} primitives",
        cfg.dataset.display(),
        dataset.frame_count(),
        dataset.holdout.len(),
        dataset.cameras.first().map_or(0, Vec::len),
        points,
        dataset.novel_gt.len(),
        world.primitive_count()
    );
    Ok(StoredDataset { dataset, world: Some(cfg.world.clone()) })
}

fn load_world(stored: &StoredDataset, needed: bool) -> Result<Option<SceneModel>> {
    match (&stored.world, needed) {
        (Some(spec), true) => Ok(Some(generate_world(spec)?)),
        _ => Ok(None),
    }
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    let start = Instant::now();
    let stored = read_dataset(&cfg.dataset)?;
    let truth = load_world(&stored, cfg.restorer.id != "identity")?;
    let background = stored.world.as_ref().map_or([0.0; 3], |w| w.sky);
    let restorer = restorer_by_id(&cfg.restorer.id, truth, cfg.restorer.noise_level)?;
    let scene = init_from_lidar(&stored.dataset, &cfg.init, background)?;
    let (scene, log) = optimize(scene, &stored.dataset, restorer.as_ref(), &cfg.train)?;

    formats::write_atomic(&cfg.output.join(CHECKPOINT), &formats::encode_scene(&scene))?;
    let mut lines = Vec::new();
    let mut refreshes = log.refreshes.iter().peekable();
    for s in &log.steps {
        let refresh = refreshes.next_if(|r| r.step == s.step).copied();
        let rec = LogRecord {
            iteration: s.step,
            recorded_loss: s.recorded_loss,
            novel_loss: s.novel_loss,
            novel_depth_loss: s.novel_depth_loss,
            primitives: s.primitives,
            pruned: s.pruned,
            refresh,
        };
        serde_json::to_writer(&mut lines, &rec).map_err(|e| Error::Config(format!("log record: {e}")))?;
        lines.push(b'\n');
    }
    formats::write_atomic(&cfg.output.join(TRAIN_LOG), &lines)?;
    let summary = TrainSummary {
        steps: log.steps.len(),
        primitives: scene.primitive_count(),
        restorer: if cfg.train.novel { cfg.restorer.id.clone() } else { "none".into() },
        mask_stats: log.refreshes.iter().map(|r| r.masked_fraction).collect(),
        refreshes: log.refreshes.clone(),
        train: cfg.train.clone(),
        runtime_seconds: start.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_vec_pretty(&summary).map_err(|e| Error::Config(format!("summary: {e}")))?;
    formats::write_atomic(&cfg.output.join(SUMMARY), &json)?;
    cfg.echo(&cfg.output)?;
    println!(
        "trained {} steps, {} primitives, {} refreshes; wrote {}",
        summary.steps,
        summary.primitives,
        summary.refreshes.len(),
        cfg.output.display()
    );
    Ok(summary)
}

pub fn read_checkpoint(path: &Path) -> Result<SceneModel> {
    formats::decode_scene(path, &formats::read_bytes(path)?)
}

fn read_summary(path: &Path) -> Result<Option<TrainSummary>> {
    if !path.is_file() {
        return Ok(None);
    }
    serde_json::from_slice(&formats::read_bytes(path)?).map(Some).map_err(|e| Error::schema(path, e.to_string()))
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, record_runtime: bool) -> Result<EvalReport> {
    let start = Instant::now();
    let scene = read_checkpoint(checkpoint)?;
    let stored = read_dataset(&cfg.dataset)?;
    let recorded = eval_recorded(&scene, &stored.dataset)?;
    let novel = eval_novel(&scene, &stored.dataset, &cfg.shifts)?;
    let summary = read_summary(&checkpoint.parent().unwrap_or(Path::new(".")).join(SUMMARY))?;
    let report = EvalReport {
        recorded,
        novel,
        mask_stats: summary.as_ref().map_or_else(Vec::new, |s| s.mask_stats.clone()),
        runtime_seconds: record_runtime.then(|| start.elapsed().as_secs_f64()),
        config: summary.map(|s| s.train),
    };
    emit_report(&report, &cfg.output)?;
    cfg.echo(&cfg.output)?;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "recorded psnr {:.3} ssim {:.4}", report.recorded.psnr, report.recorded.ssim);
    for n in &report.novel {
        let _ = writeln!(out, "shift {} psnr {:.3} ssim {:.4}", n.shift, n.metrics.psnr, n.metrics.ssim);
    }
    Ok(report)
}

/// Panels of the debug strip, left to right.
pub struct DebugPanels {
    pub render: ImageRgb,
    pub pseudo: ImageRgb,
    /// Gray render with unreliable pixels painted pure red.
    pub mask_overlay: ImageRgb,
    /// Inverse-depth shading of LiDAR-covered pixels, black elsewhere.
    pub lidar: ImageRgb,
}

impl DebugPanels {
    pub fn strip(&self) -> ImageRgb {
        let (w, h) = self.render.dims();
        let mut out = ImageRgb::new(4 * w, h);
        for (k, p) in [&self.render, &self.pseudo, &self.mask_overlay, &self.lidar].into_iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    out.set(k * w + x, y, p.get(x, y));
                }
            }
        }
        out
    }
}

pub fn debug_panels(
    scene: &SceneModel,
    stored: &StoredDataset,
    cfg: &TrainConfig,
    frame: usize,
    shift: f64,
) -> Result<DebugPanels> {
    let ds = &stored.dataset;
    let front = ds
        .cameras
        .get(frame)
        .map(|c| c[FRONT])
        .ok_or_else(|| Error::Config(format!("frame {frame} is outside the dataset's {} frames", ds.frame_count())))?;
    let lateral: Vec3 = front.pose.rotation.row(0).transpose();
    let cam = front.with_pose(Pose::from_center(front.pose.rotation.transpose(), front.center() + lateral * shift));
    let view = inspect_view(scene, ds, &cam, frame, cfg)?;
    let (w, h) = view.render.dims();
    let mut overlay = ImageRgb::new(w, h);
    let mut lidar = ImageRgb::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let c = view.render.get(x, y);
            let g = (0..3).map(|i| LUMA[i] * c[i]).sum::<f64>().clamp(0.0, 1.0);
            overlay.set(x, y, if view.mask.mask.get(x, y) { [1.0, 0.0, 0.0] } else { [g; 3] });
            if view.lidar.coverage.get(x, y) {
                let v = 0.2 + 0.8 / (1.0 + view.lidar.depth.get(x, y) / 10.0);
                lidar.set(x, y, [v; 3]);
            }
        }
    }
    Ok(DebugPanels { render: view.render, pseudo: view.pseudo, mask_overlay: overlay, lidar })
}

pub fn cmd_debug(cfg: &RunConfig, checkpoint: &Path, frame: usize, shift: f64) -> Result<PathBuf> {
    let scene = read_checkpoint(checkpoint)?;
    let stored = read_dataset(&cfg.dataset)?;
    let panels = debug_panels(&scene, &stored, &cfg.train, frame, shift)?;
    let path = cfg.output.join(format!("debug_frame{frame:05}_shift{shift}.png"));
    formats::write_atomic(&path, &formats::encode_png_rgb(&panels.strip()))?;
    cfg.echo(&cfg.output)?;
    Ok(path)
}

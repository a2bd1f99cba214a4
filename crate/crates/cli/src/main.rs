use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{error, info};

use spectra_core::metrics::EvalOptions;
use spectra_core::modality::Task;
use spectra_core::pipeline::{self, PipelineConfig};
use spectra_core::synth::ScenarioSpec;

/// Post-detection pipeline for dual-modality drone surveillance.
#[derive(Parser)]
#[command(name = "spectra", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fuse detection logs, track objects and write a tracking CSV.
    Pipeline(PipelineArgs),
    /// Generate a synthetic scenario: ground truth, logs and frames.
    Synth(SynthArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Time the pipeline on synthetic scenes.
    Bench(BenchArgs),
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    rgb_log: Option<PathBuf>,
    #[arg(long)]
    ir_log: Option<PathBuf>,
    #[arg(long)]
    frames_dir: Option<PathBuf>,
    #[arg(long, value_parser = parse_task)]
    task: Option<Task>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run report (JSON).
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Scenario file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Skip rendering PGM frames.
    #[arg(long)]
    no_frames: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Detection log or tracking CSV.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth file.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    #[arg(long, default_value_t = 0.0)]
    conf: f64,
    /// Report path; `.csv` writes CSV, anything else JSON.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    objects: usize,
    #[arg(long, default_value_t = 1000)]
    frames: u64,
    #[arg(long, default_value_t = 3)]
    repetitions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = parse_task)]
    task: Option<Task>,
    #[arg(long)]
    metrics: Option<PathBuf>,
}

fn parse_task(s: &str) -> Result<Task, String> {
    s.parse()
}

fn load_config(path: Option<&PathBuf>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(PipelineConfig::default()),
    }
}

fn pipeline(args: PipelineArgs) -> Result<()> {
    let mut cfg = load_config(args.config.as_ref())?;
    let overrides = [
        (&mut cfg.rgb_log, args.rgb_log),
        (&mut cfg.ir_log, args.ir_log),
        (&mut cfg.frames_dir, args.frames_dir),
        (&mut cfg.out, args.out),
        (&mut cfg.metrics, args.metrics),
    ];
    for (slot, value) in overrides {
        if value.is_some() {
            *slot = value;
        }
    }
    if let Some(t) = args.task {
        cfg.task = t;
    }
    let report = pipeline::run_pipeline(&cfg)?;
    let s = &report.stats;
    eprintln!(
        "frames {}  tracks {}  rows {}  mean latency {:.3} ms (p95 {:.3} ms)  flow {}",
        s.frames,
        s.tracks_created,
        s.rows,
        s.timings.frame.mean_ms,
        s.timings.frame.p95_ms,
        if report.flow_enabled { "on" } else { "off" }
    );
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let mut spec = ScenarioSpec::load(&args.config).with_context(|| format!("loading {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let a = pipeline::run_synth(&spec, &args.out, !args.no_frames)?;
    eprintln!(
        "ground truth boxes {}  detections {}  logs {}  frames {}",
        a.gt_boxes,
        a.detections,
        a.logs.len(),
        a.frames_written
    );
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&args.iou) || !(0.0..=1.0).contains(&args.conf) {
        bail!("--iou and --conf must lie in [0, 1]");
    }
    let opts = EvalOptions {
        iou_threshold: args.iou,
        conf_threshold: args.conf,
        ..EvalOptions::default()
    };
    let report = pipeline::run_eval(&args.pred, &args.gt, &opts)?;
    let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
    let m = &report.micro;
    println!(
        "precision {:.4}  recall {:.4}  f1 {:.4}  AP@0.5 {}  mAP@0.5:0.95 {}",
        m.precision,
        m.recall,
        m.f1,
        fmt(report.ap50),
        fmt(report.map50_95)
    );
    for c in &report.per_class {
        println!(
            "  {:<12} precision {:.4}  recall {:.4}  f1 {:.4}",
            c.class_name, c.prf.precision, c.prf.recall, c.prf.f1
        );
    }
    if let Some(sw) = report.id_switches {
        println!("id switches {sw}");
    }
    if let Some(path) = &args.metrics {
        pipeline::write_eval_report(path, &report)?;
    }
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    let mut cfg = load_config(args.config.as_ref())?;
    if let Some(t) = args.task {
        cfg.task = t;
    }
    let r = pipeline::run_bench(&cfg, args.objects, args.frames, args.repetitions, args.seed)?;
    for run in [&r.base, &r.doubled] {
        let t = &run.best;
        println!(
            "objects {:>3}  frame {:.3} ms (p95 {:.3})  fusion {:.3}  tracking {:.3}  direction {:.3}  output {:.3}",
            run.objects,
            t.frame.mean_ms,
            t.frame.p95_ms,
            t.fusion.mean_ms,
            t.tracking.mean_ms,
            t.direction.mean_ms,
            t.output.mean_ms
        );
    }
    println!(
        "direction growth x{:.2} time, x{:.2} operations",
        r.direction_time_ratio, r.direction_work_ratio
    );
    if let Some(path) = &args.metrics {
        pipeline::write_bench_report(path, &r)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SPECTRA_LOG_LEVEL", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Pipeline(a) => pipeline(a),
        Command::Synth(a) => synth(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => {
            info!("done");
            ExitCode::SUCCESS
        }
        Err(e) => {
            error!("{e:#}");
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

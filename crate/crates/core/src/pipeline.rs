//! End-to-end runs: ingest logs, fuse, track, estimate direction, write CSV.
//!
//! Fusion and frame loading run on a producer thread that may get up to
//! `queue_capacity` frames ahead of tracking. Tracking is sequential.
//! Direction updates fan out over tracks and are joined in track-id order
//! before rows are written, so output does not depend on scheduling.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;
use std::sync::Arc;
use std::time::Instant;

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detio::{
    self, read_detection_log, read_pgm, scan_frames_dir, write_detection_log, write_pgm, DetioError,
    FrameDetections, GrayImage, Modality, TrackRow, TrackingCsvWriter, TRACKING_CSV_HEADER,
};
use crate::direction::{DirectionConfig, DirectionError, DirectionEstimate, DirectionEstimator, FlowFrames};
use crate::fusion::{
    classify_payload_or, fuse_decision_layer, FusedDetection, FusionConfig, FusionError, PayloadVerdict,
};
use crate::metrics::{self, EvalOptions, EvalReport};
use crate::modality::{resolve_policy, ModalityError, ModalitySet, SurrogatePolicy, Task};
use crate::synth::{self, ObjectSpec, ScenarioSpec, SynthError};
use crate::tracker::{TrackState, Tracker, TrackerConfig, TrackerError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Config(String),
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Detio(#[from] DetioError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Direction(#[from] DirectionError),
    #[error(transparent)]
    Modality(#[from] ModalityError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{path}: {source}")]
    File { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn file_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::File {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub task: Task,
    pub rgb_log: Option<PathBuf>,
    pub ir_log: Option<PathBuf>,
    /// Directory of `<stem>_<frame>.pgm` files; enables the flow cue.
    pub frames_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    /// Frames fusion may run ahead of tracking.
    pub queue_capacity: usize,
    pub fusion: FusionConfig,
    pub tracker: TrackerConfig,
    pub direction: DirectionConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            task: Task::DroneDetection,
            rgb_log: None,
            ir_log: None,
            frames_dir: None,
            out: None,
            metrics: None,
            queue_capacity: 8,
            fusion: FusionConfig::default(),
            tracker: TrackerConfig::default(),
            direction: DirectionConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        Ok(toml::from_str(text)?)
    }

    /// Loads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(file_err(path))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.rgb_log,
            &mut cfg.ir_log,
            &mut cfg.frames_dir,
            &mut cfg.out,
            &mut cfg.metrics,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.fusion.validate()?;
        self.tracker.validate()?;
        self.direction.validate()?;
        if self.queue_capacity == 0 {
            return Err(PipelineError::Config("queue_capacity must be >= 1".into()));
        }
        Ok(())
    }

    pub fn available(&self) -> ModalitySet {
        ModalitySet {
            rgb: self.rgb_log.is_some(),
            ir: self.ir_log.is_some(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

impl LatencyStats {
    pub fn from_samples(ms: &[f64]) -> Self {
        if ms.is_empty() {
            return Self::default();
        }
        let mut sorted = ms.to_vec();
        sorted.sort_by(f64::total_cmp);
        let rank = ((0.95 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
        Self {
            mean_ms: ms.iter().sum::<f64>() / ms.len() as f64,
            p95_ms: sorted[rank - 1],
            max_ms: sorted[sorted.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub fusion: LatencyStats,
    pub tracking: LatencyStats,
    pub direction: LatencyStats,
    pub output: LatencyStats,
    /// Sum of the stages for each frame.
    pub frame: LatencyStats,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunStats {
    pub frames: u64,
    pub rows: u64,
    pub tracks_created: u64,
    pub tracks_lost: u64,
    /// Frames on which the flow cue had a consecutive image pair.
    pub flow_frames: u64,
    /// Direction-stage operations summed over the run.
    pub direction_work: u64,
    /// Largest single per-track update.
    pub max_update_work: u64,
    /// Per-track update bound implied by the direction config.
    pub update_work_bound: u64,
    /// Frames on which some modality confidently reported a harmful payload.
    pub harmful_frames: u64,
    pub timings: StageTimings,
}

/// Fused detections for one frame plus the images the flow cue needs.
struct Prepared {
    frame_index: u64,
    fused: Vec<FusedDetection>,
    image: Option<(u64, Arc<GrayImage>)>,
    prev_image: Option<(u64, Arc<GrayImage>)>,
    fusion_ms: f64,
}

/// Image lookup for a frame index; `Ok(None)` means no image exists.
pub type ImageSource<'a> = dyn Fn(u64) -> Result<Option<Arc<GrayImage>>, PipelineError> + Sync + 'a;

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Runs fusion, tracking and direction over `frames`, handing each frame's
/// rows to `sink` in order.
pub fn run_frames(
    cfg: &PipelineConfig,
    policy: Option<&SurrogatePolicy>,
    frames: Vec<FrameDetections>,
    images: Option<&ImageSource<'_>>,
    sink: &mut dyn FnMut(&[TrackRow]) -> io::Result<()>,
) -> Result<RunStats, PipelineError> {
    cfg.validate()?;
    let mut tracker = Tracker::new(cfg.tracker.clone())?;
    let mut estimators: HashMap<u64, DirectionEstimator> = HashMap::new();
    let probe = DirectionEstimator::new(cfg.direction.clone());
    let mut stats = RunStats {
        update_work_bound: probe.work_bound(),
        ..RunStats::default()
    };
    let mut samples: [Vec<f64>; 5] = Default::default();
    let (tx, rx) = sync_channel::<Result<Prepared, PipelineError>>(cfg.queue_capacity);
    let fusion_cfg = &cfg.fusion;

    std::thread::scope(|scope| -> Result<(), PipelineError> {
        scope.spawn(move || {
            let mut last: Option<(u64, Arc<GrayImage>)> = None;
            for frame in frames {
                let t0 = Instant::now();
                let result = fuse_decision_layer(&frame, fusion_cfg, policy)
                    .map_err(PipelineError::from)
                    .map(|fused| (fused, ms_since(t0)))
                    .and_then(|(fused, fusion_ms)| {
                        let Some(load) = images else {
                            return Ok((fused, fusion_ms, None, None));
                        };
                        let f = frame.frame_index;
                        let prev = match (&last, f.checked_sub(1)) {
                            (Some((i, img)), Some(p)) if *i == p => Some((p, img.clone())),
                            (_, Some(p)) => load(p)?.map(|img| (p, img)),
                            _ => None,
                        };
                        let cur = load(f)?.map(|img| (f, img));
                        Ok((fused, fusion_ms, cur, prev))
                    });
                let msg = result.map(|(fused, fusion_ms, image, prev_image)| {
                    last.clone_from(&image);
                    Prepared {
                        frame_index: frame.frame_index,
                        fused,
                        image,
                        prev_image,
                        fusion_ms,
                    }
                });
                let failed = msg.is_err();
                if tx.send(msg).is_err() || failed {
                    break;
                }
            }
        });

        let mut rows: Vec<TrackRow> = Vec::new();
        for msg in rx {
            let p = msg?;
            if classify_payload_or(&p.fused, cfg.fusion.harmful_conf_threshold) == PayloadVerdict::Harmful {
                stats.harmful_frames += 1;
            }
            let t_track = Instant::now();
            let step = tracker.step(p.frame_index, &p.fused)?;
            for id in &step.lost {
                estimators.remove(id);
            }
            let tracking_ms = ms_since(t_track);

            let t_dir = Instant::now();
            let flow = match (&p.prev_image, &p.image) {
                (Some((pi, prev)), Some((_, cur))) => Some(FlowFrames {
                    prev_index: *pi,
                    prev: prev.as_ref(),
                    cur: cur.as_ref(),
                }),
                _ => None,
            };
            if flow.is_some() {
                stats.flow_frames += 1;
            }
            for s in &step.snapshots {
                estimators
                    .entry(s.track_id)
                    .or_insert_with(|| DirectionEstimator::new(cfg.direction.clone()));
            }
            let mut jobs: Vec<(&mut DirectionEstimator, usize)> = Vec::with_capacity(step.snapshots.len());
            {
                let index: HashMap<u64, usize> = step
                    .snapshots
                    .iter()
                    .enumerate()
                    .map(|(i, s)| (s.track_id, i))
                    .collect();
                for (id, est) in estimators.iter_mut() {
                    if let Some(&i) = index.get(id) {
                        jobs.push((est, i));
                    }
                }
            }
            jobs.sort_by_key(|(_, i)| *i);
            let results: Vec<(Result<DirectionEstimate, DirectionError>, u64)> = jobs
                .into_par_iter()
                .map(|(est, i)| {
                    let s = &step.snapshots[i];
                    let r = est.update(s.frame_index, s.bbox, flow);
                    (r, est.last_work())
                })
                .collect();
            let direction_ms = ms_since(t_dir);

            let t_out = Instant::now();
            rows.clear();
            for (s, (est, work)) in step.snapshots.iter().zip(results) {
                let est = est?;
                stats.direction_work += work;
                stats.max_update_work = stats.max_update_work.max(work);
                if s.state != TrackState::Active {
                    continue;
                }
                rows.push(TrackRow {
                    frame_index: s.frame_index,
                    track_id: s.track_id,
                    class_name: s.class_name.clone(),
                    bbox: s.bbox,
                    confidence: s.confidence,
                    direction: est.label(),
                    direction_confidence: est.confidence,
                });
            }
            sink(&rows)?;
            stats.rows += rows.len() as u64;
            stats.frames += 1;
            let output_ms = ms_since(t_out);
            let frame_ms = p.fusion_ms + tracking_ms + direction_ms + output_ms;
            for (v, buf) in [p.fusion_ms, tracking_ms, direction_ms, output_ms, frame_ms]
                .into_iter()
                .zip(samples.iter_mut())
            {
                buf.push(v);
            }
        }
        Ok(())
    })?;

    stats.tracks_created = tracker.tracks_created();
    stats.tracks_lost = tracker.tracks_lost();
    let [fusion, tracking, direction, output, frame] = samples.map(|s| LatencyStats::from_samples(&s));
    stats.timings = StageTimings {
        fusion,
        tracking,
        direction,
        output,
        frame,
    };
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub task: Task,
    pub available: Vec<Modality>,
    pub policy: SurrogatePolicy,
    pub fusion_mode: crate::fusion::FusionMode,
    pub cross_modality_nms: bool,
    pub flow_enabled: bool,
    pub stats: RunStats,
}

/// Reads a log and checks every record belongs to `expected`.
pub fn read_modality_log(path: &Path, expected: Modality) -> Result<Vec<FrameDetections>, PipelineError> {
    let frames = read_detection_log(path)?;
    for f in &frames {
        if f.get(expected.other()).is_some() {
            return Err(PipelineError::Config(format!(
                "{}: frame {} holds {} records in the {} log",
                path.display(),
                f.frame_index,
                expected.other(),
                expected
            )));
        }
    }
    Ok(frames)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), PipelineError> {
    let mut f = BufWriter::new(File::create(path).map_err(file_err(path))?);
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

/// Full run from files. The CSV appears only if the whole run succeeds.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    let available = cfg.available();
    if available.is_empty() {
        return Err(PipelineError::Config("at least one of rgb_log / ir_log is required".into()));
    }
    for p in [&cfg.rgb_log, &cfg.ir_log].into_iter().flatten() {
        if !p.is_file() {
            return Err(PipelineError::Config(format!("input log {} does not exist", p.display())));
        }
    }
    if !available.iter().any(|m| cfg.fusion.mode.uses(m)) {
        return Err(PipelineError::Config(format!(
            "fusion mode {:?} uses none of the supplied logs",
            cfg.fusion.mode
        )));
    }
    let policy = resolve_policy(cfg.task, available)?;
    info!("task {}; stand-ins: RGB {}, IR {}", cfg.task, policy.rgb, policy.ir);

    let mut logs = Vec::new();
    if let Some(p) = &cfg.rgb_log {
        logs.push(read_modality_log(p, Modality::Rgb)?);
    }
    if let Some(p) = &cfg.ir_log {
        logs.push(read_modality_log(p, Modality::Ir)?);
    }
    let present: Vec<Modality> = available.iter().collect();
    let frames = detio::merge_logs(&logs, &present);
    debug!("{} frames with detections", frames.len());

    let frame_files = match &cfg.frames_dir {
        Some(dir) if dir.is_dir() => Some(scan_frames_dir(dir)?),
        Some(dir) => {
            warn!("frames dir {} not found; flow cue disabled", dir.display());
            None
        }
        None => None,
    };
    let loader = frame_files.as_ref().map(|files| {
        move |i: u64| -> Result<Option<Arc<GrayImage>>, PipelineError> {
            files
                .get(&i)
                .map(|p| read_pgm(p).map(Arc::new))
                .transpose()
                .map_err(PipelineError::from)
        }
    });
    let images: Option<&ImageSource<'_>> = loader.as_ref().map(|l| l as &ImageSource<'_>);

    let stats = match &cfg.out {
        Some(out) => {
            let dir = match out.parent() {
                Some(d) if !d.as_os_str().is_empty() => d,
                _ => Path::new("."),
            };
            let tmp = tempfile::NamedTempFile::new_in(dir).map_err(file_err(out))?;
            let mut w = TrackingCsvWriter::new(BufWriter::new(tmp))?;
            let stats = run_frames(cfg, Some(&policy), frames, images, &mut |rows| {
                rows.iter().try_for_each(|r| w.write_row(r))
            })?;
            let tmp = w.into_inner()?.into_inner().map_err(|e| e.into_error())?;
            tmp.persist(out).map_err(|e| PipelineError::File {
                path: out.clone(),
                source: e.error,
            })?;
            stats
        }
        None => {
            let stdout = io::stdout();
            let mut w = TrackingCsvWriter::new(BufWriter::new(stdout.lock()))?;
            let stats = run_frames(cfg, Some(&policy), frames, images, &mut |rows| {
                rows.iter().try_for_each(|r| w.write_row(r))
            })?;
            w.into_inner()?.flush()?;
            stats
        }
    };

    let report = RunReport {
        task: cfg.task,
        available: present,
        policy,
        fusion_mode: cfg.fusion.mode,
        cross_modality_nms: cfg.fusion.cross_modality_nms,
        flow_enabled: images.is_some(),
        stats,
    };
    if let Some(path) = &cfg.metrics {
        write_json(path, &report)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthArtifacts {
    pub ground_truth: PathBuf,
    pub logs: Vec<PathBuf>,
    pub frames_dir: Option<PathBuf>,
    pub frames_written: u64,
    pub gt_boxes: usize,
    pub detections: usize,
}

pub const GROUND_TRUTH_FILE: &str = "ground_truth.tsv";
pub const FRAMES_SUBDIR: &str = "frames";
pub const FRAME_STEM: &str = "frame";

pub fn log_file_name(m: Modality) -> String {
    format!("{}.log", m.as_str().to_ascii_lowercase())
}

/// Writes ground truth, one log per modality and optionally rendered frames.
pub fn run_synth(spec: &ScenarioSpec, out_dir: &Path, render: bool) -> Result<SynthArtifacts, PipelineError> {
    let scenario = synth::generate(spec)?;
    std::fs::create_dir_all(out_dir).map_err(file_err(out_dir))?;
    let gt_path = out_dir.join(GROUND_TRUTH_FILE);
    let mut w = BufWriter::new(File::create(&gt_path).map_err(file_err(&gt_path))?);
    synth::write_ground_truth(&mut w, &scenario.truth)?;

    let mut logs = Vec::new();
    let mut detections = 0;
    for (m, frames) in &scenario.logs {
        let path = out_dir.join(log_file_name(*m));
        let f = BufWriter::new(File::create(&path).map_err(file_err(&path))?);
        write_detection_log(f, frames)?;
        detections += frames.iter().map(|f| f.records().count()).sum::<usize>();
        logs.push(path);
    }

    let mut frames_dir = None;
    let mut frames_written = 0;
    if render {
        let dir = out_dir.join(FRAMES_SUBDIR);
        std::fs::create_dir_all(&dir).map_err(file_err(&dir))?;
        let dims = spec.dims();
        scenario.truth.frames.par_iter().try_for_each(|gt| {
            let img = synth::render_frame(&gt.objects, dims, spec.seed);
            write_pgm(&dir.join(detio::frame_file_name(FRAME_STEM, gt.frame_index)), &img)
        })?;
        frames_written = scenario.truth.frames.len() as u64;
        frames_dir = Some(dir);
    }
    Ok(SynthArtifacts {
        ground_truth: gt_path,
        logs,
        frames_dir,
        frames_written,
        gt_boxes: scenario.truth.box_count(),
        detections,
    })
}

/// Loads predictions from a detection log or a tracking CSV.
pub fn read_predictions(path: &Path) -> Result<Vec<metrics::EvalDet>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(file_err(path))?;
    if text.lines().next().map(str::trim_end) == Some(TRACKING_CSV_HEADER) {
        let rows = detio::parse_tracking_csv(text.as_bytes())?;
        Ok(metrics::dets_from_tracks(&rows))
    } else {
        let frames = detio::parse_detection_log(text.as_bytes())?;
        Ok(metrics::dets_from_log(&frames))
    }
}

pub fn run_eval(pred: &Path, gt: &Path, opts: &EvalOptions) -> Result<EvalReport, PipelineError> {
    let preds = read_predictions(pred)?;
    let truth = synth::read_ground_truth(gt)?;
    Ok(metrics::evaluate(&preds, &metrics::gts_from_truth(&truth), opts))
}

/// Writes an eval report as CSV when the path ends in `.csv`, else JSON.
pub fn write_eval_report(path: &Path, report: &EvalReport) -> Result<(), PipelineError> {
    if path.extension().and_then(|e| e.to_str()) == Some("csv") {
        let f = BufWriter::new(File::create(path).map_err(file_err(path))?);
        metrics::write_report_csv(f, report)?;
        Ok(())
    } else {
        write_json(path, report)
    }
}

/// Scenario of `objects` simultaneous targets in a grid of lanes. Each lane
/// runs a relay of objects sweeping back and forth so the lane stays busy for
/// the whole run.
pub fn bench_scenario(objects: usize, frames: u64, seed: u64) -> ScenarioSpec {
    let dims = crate::geometry::FrameDims::NATIVE;
    let mut spec = ScenarioSpec {
        seed,
        frame_count: frames,
        width: dims.width,
        height: dims.height,
        modalities: vec![Modality::Rgb, Modality::Ir],
        ..ScenarioSpec::default()
    };
    if objects == 0 {
        return spec;
    }
    let cols = ((objects as f64 * 1.25).sqrt().ceil() as usize).max(1);
    let rows = objects.div_ceil(cols);
    let (cw, ch) = (f64::from(dims.width) / cols as f64, f64::from(dims.height) / rows as f64);
    let side = 16f64.min(ch - 4.0).max(8.0);
    let speed = 1.5;
    let travel = (cw - side - 8.0).max(speed * 4.0);
    let life = ((travel / speed).floor() as u64).max(2);
    for lane in 0..objects {
        let (col, row) = (lane % cols, lane / cols);
        let cy = ch * (row as f64 + 0.5);
        let left = cw * col as f64 + 4.0 + side / 2.0;
        let mut k = 0u64;
        while k * life < frames {
            let east = k.is_multiple_of(2);
            let x = if east { left } else { left + life as f64 * speed };
            spec.objects.push(ObjectSpec {
                class_name: "drone".into(),
                class_id: 0,
                start: [x, cy],
                velocity: [if east { speed } else { -speed }, 0.0],
                area: side * side,
                growth: 0.0,
                aspect: 1.0,
                spawn: k * life,
                despawn: Some(((k + 1) * life).min(frames)),
            });
            k += 1;
        }
    }
    spec
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRun {
    pub objects: usize,
    pub frames: u64,
    pub repetitions: usize,
    pub flow: bool,
    /// Timings of the repetition with the lowest mean frame latency.
    pub best: StageTimings,
    /// Lowest mean direction-stage time over all repetitions.
    pub direction_min_mean_ms: f64,
    /// Direction-stage operations per frame (deterministic).
    pub direction_work_per_frame: f64,
    pub rows: u64,
    pub tracks_created: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub base: BenchRun,
    pub doubled: BenchRun,
    /// Lowest direction-stage mean time, doubled over base.
    pub direction_time_ratio: f64,
    pub direction_work_ratio: f64,
}

/// Times the in-memory pipeline on a synthetic scenario with pre-rendered
/// frames. Rendering is excluded from the measurement.
pub fn bench_run(
    cfg: &PipelineConfig,
    spec: &ScenarioSpec,
    repetitions: usize,
    flow: bool,
) -> Result<BenchRun, PipelineError> {
    let scenario = synth::generate(spec)?;
    let present: Vec<Modality> = scenario.logs.keys().copied().collect();
    let available: ModalitySet = present.iter().copied().collect();
    let logs: Vec<Vec<FrameDetections>> = scenario.logs.into_values().collect();
    let frames = detio::merge_logs(&logs, &present);
    let policy = if available.is_empty() {
        None
    } else {
        Some(resolve_policy(cfg.task, available)?)
    };
    let rendered: Vec<Arc<GrayImage>> = if flow {
        scenario
            .truth
            .frames
            .par_iter()
            .map(|gt| Arc::new(synth::render_frame(&gt.objects, spec.dims(), spec.seed)))
            .collect()
    } else {
        Vec::new()
    };
    let lookup = |i: u64| -> Result<Option<Arc<GrayImage>>, PipelineError> { Ok(rendered.get(i as usize).cloned()) };
    let images: Option<&ImageSource<'_>> = flow.then_some(&lookup as &ImageSource<'_>);

    let mut best: Option<RunStats> = None;
    let mut direction_min = f64::INFINITY;
    for _ in 0..repetitions.max(1) {
        let stats = run_frames(cfg, policy.as_ref(), frames.clone(), images, &mut |_| Ok(()))?;
        direction_min = direction_min.min(stats.timings.direction.mean_ms);
        if best
            .as_ref()
            .is_none_or(|b| stats.timings.frame.mean_ms < b.timings.frame.mean_ms)
        {
            best = Some(stats);
        }
    }
    let best = best.expect("at least one repetition");
    Ok(BenchRun {
        objects: count_lanes(spec),
        frames: spec.frame_count,
        repetitions: repetitions.max(1),
        flow,
        direction_work_per_frame: if best.frames == 0 {
            0.0
        } else {
            best.direction_work as f64 / best.frames as f64
        },
        rows: best.rows,
        tracks_created: best.tracks_created,
        best: best.timings,
        direction_min_mean_ms: direction_min,
    })
}

fn count_lanes(spec: &ScenarioSpec) -> usize {
    spec.objects.iter().filter(|o| o.spawn == 0).count()
}

/// Benchmarks `objects` and `2 * objects` targets and reports the
/// direction-stage growth.
pub fn run_bench(
    cfg: &PipelineConfig,
    objects: usize,
    frames: u64,
    repetitions: usize,
    seed: u64,
) -> Result<BenchReport, PipelineError> {
    let base = bench_run(cfg, &bench_scenario(objects, frames, seed), repetitions, true)?;
    let doubled = bench_run(cfg, &bench_scenario(2 * objects, frames, seed), repetitions, true)?;
    let ratio = |a: f64, b: f64| if a > 0.0 { b / a } else { 0.0 };
    Ok(BenchReport {
        direction_time_ratio: ratio(base.direction_min_mean_ms, doubled.direction_min_mean_ms),
        direction_work_ratio: ratio(base.direction_work_per_frame, doubled.direction_work_per_frame),
        base,
        doubled,
    })
}

pub fn write_bench_report(path: &Path, report: &BenchReport) -> Result<(), PipelineError> {
    write_json(path, report)
}

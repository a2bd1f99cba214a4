//! Synthetic scenarios: parametric trajectories, noisy detection logs and
//! rendered grayscale frames.
//!
//! All randomness comes from [`SplitMix64`] streams keyed by
//! `(seed, stream tag, frame)`, so every frame can be generated independently
//! and the output depends on nothing but the scenario.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detio::{DetectionRecord, FrameDetections, GrayImage, Modality};
use crate::geometry::{BBox, FrameDims, Point};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    Spec(String),
    #[error("scenario parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("ground truth line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// SplitMix64: a 64-bit counter passed through a fixed mixing function.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// The SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Independent stream derived from a seed and a list of keys.
    pub fn keyed(seed: u64, keys: &[u64]) -> Self {
        let mut s = mix64(seed);
        for &k in keys {
            s = mix64(s ^ k.wrapping_mul(GOLDEN));
        }
        Self { state: s }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box-Muller (one draw per call).
    pub fn gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Poisson by Knuth's multiplication method.
    pub fn poisson(&mut self, lambda: f64) -> u32 {
        if lambda <= 0.0 {
            return 0;
        }
        let limit = (-lambda).exp();
        let mut k = 0;
        let mut p = self.uniform();
        while p > limit {
            k += 1;
            p *= self.uniform();
        }
        k
    }
}

fn default_aspect() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    #[serde(default = "default_class_name")]
    pub class_name: String,
    #[serde(default)]
    pub class_id: i32,
    /// Box center at the spawn frame.
    pub start: [f64; 2],
    /// Pixels per frame.
    #[serde(default)]
    pub velocity: [f64; 2],
    /// Box area at the spawn frame, px^2.
    pub area: f64,
    /// Relative area change per frame; negative values shrink the box.
    #[serde(default)]
    pub growth: f64,
    /// Width over height.
    #[serde(default = "default_aspect")]
    pub aspect: f64,
    #[serde(default)]
    pub spawn: u64,
    /// First frame without the object; defaults to the end of the scenario.
    #[serde(default)]
    pub despawn: Option<u64>,
}

fn default_class_name() -> String {
    "drone".to_string()
}

impl ObjectSpec {
    pub fn alive(&self, frame: u64, frame_count: u64) -> bool {
        frame >= self.spawn && frame < self.despawn.unwrap_or(frame_count)
    }

    pub fn center_at(&self, frame: u64) -> Point {
        let t = frame as f64 - self.spawn as f64;
        Point::new(self.start[0] + self.velocity[0] * t, self.start[1] + self.velocity[1] * t)
    }

    pub fn area_at(&self, frame: u64) -> f64 {
        let t = frame as f64 - self.spawn as f64;
        self.area * (1.0 + self.growth * t)
    }

    pub fn bbox_at(&self, frame: u64) -> Option<BBox> {
        let a = self.area_at(frame);
        if !(a > 0.0) {
            return None;
        }
        let w = (a * self.aspect).sqrt();
        BBox::from_center(self.center_at(frame), w, a / w).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Std of the center offset, px.
    pub center_jitter: f64,
    /// Std of the relative size change.
    pub size_jitter: f64,
    pub dropout: f64,
    /// Mean false positives per frame and modality.
    pub false_positive_rate: f64,
    pub confidence: [f64; 2],
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            center_jitter: 0.0,
            size_jitter: 0.0,
            dropout: 0.0,
            false_positive_rate: 0.0,
            confidence: [0.9, 0.9],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub frame_count: u64,
    pub width: u32,
    pub height: u32,
    /// Minimum distance between any live box and the frame border.
    pub margin: f64,
    /// Logs to emit; each gets its own noise draw.
    pub modalities: Vec<Modality>,
    pub noise: NoiseSpec,
    pub objects: Vec<ObjectSpec>,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            frame_count: 100,
            width: FrameDims::NATIVE.width,
            height: FrameDims::NATIVE.height,
            margin: 0.0,
            modalities: vec![Modality::Rgb, Modality::Ir],
            noise: NoiseSpec::default(),
            objects: Vec::new(),
        }
    }
}

const MAX_FALSE_POSITIVE_RATE: f64 = 50.0;

impl ScenarioSpec {
    pub fn from_toml_str(text: &str) -> Result<Self, SynthError> {
        let spec: ScenarioSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn dims(&self) -> FrameDims {
        FrameDims {
            width: self.width,
            height: self.height,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Spec(m));
        if self.width == 0 || self.height == 0 {
            return bad("frame dims must be positive".into());
        }
        let n = &self.noise;
        let rates = [n.center_jitter, n.size_jitter, n.false_positive_rate, self.margin];
        if rates.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return bad("noise rates and margin must be finite and >= 0".into());
        }
        if n.false_positive_rate > MAX_FALSE_POSITIVE_RATE {
            return bad(format!("false_positive_rate above {MAX_FALSE_POSITIVE_RATE}"));
        }
        if !(0.0..=1.0).contains(&n.dropout) {
            return bad("dropout must lie in [0, 1]".into());
        }
        let [lo, hi] = n.confidence;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return bad("confidence range must satisfy 0 <= lo <= hi <= 1".into());
        }
        let (w, h) = (f64::from(self.width), f64::from(self.height));
        for (i, o) in self.objects.iter().enumerate() {
            let id = i + 1;
            if o.class_name.is_empty() || o.class_name.contains(char::is_whitespace) {
                return bad(format!("object {id}: class_name must be a non-empty token"));
            }
            let vals = [o.start[0], o.start[1], o.velocity[0], o.velocity[1], o.growth];
            if vals.iter().any(|v| !v.is_finite()) {
                return bad(format!("object {id}: non-finite parameter"));
            }
            if !(o.area > 0.0) || !(o.aspect > 0.0) {
                return bad(format!("object {id}: area and aspect must be positive"));
            }
            let end = o.despawn.unwrap_or(self.frame_count).min(self.frame_count);
            if o.despawn.is_some_and(|d| d < o.spawn) {
                return bad(format!("object {id}: despawn before spawn"));
            }
            for f in o.spawn..end {
                let Some(b) = o.bbox_at(f) else {
                    return bad(format!("object {id}: area not positive at frame {f}"));
                };
                let m = self.margin;
                if b.x1() < m || b.y1() < m || b.x2() > w - m || b.y2() > h - m {
                    return bad(format!("object {id} leaves the frame at frame {f}"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtBox {
    pub object_id: u64,
    pub class_id: i32,
    pub class_name: String,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GtFrame {
    pub frame_index: u64,
    pub objects: Vec<GtBox>,
}

/// Ground truth for every frame of a scenario, including empty ones.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub frames: Vec<GtFrame>,
}

impl GroundTruth {
    pub fn box_count(&self) -> usize {
        self.frames.iter().map(|f| f.objects.len()).sum()
    }

    pub fn frame(&self, index: u64) -> Option<&GtFrame> {
        self.frames
            .binary_search_by_key(&index, |f| f.frame_index)
            .ok()
            .map(|i| &self.frames[i])
    }
}

pub fn ground_truth(spec: &ScenarioSpec) -> GroundTruth {
    let frames = (0..spec.frame_count)
        .map(|f| GtFrame {
            frame_index: f,
            objects: spec
                .objects
                .iter()
                .enumerate()
                .filter(|(_, o)| o.alive(f, spec.frame_count))
                .filter_map(|(i, o)| {
                    Some(GtBox {
                        object_id: i as u64 + 1,
                        class_id: o.class_id,
                        class_name: o.class_name.clone(),
                        bbox: o.bbox_at(f)?,
                    })
                })
                .collect(),
        })
        .collect();
    GroundTruth { frames }
}

const STREAM_DETECTIONS: u64 = 0x10;
const STREAM_DITHER: u64 = 0x20;
const STREAM_TEXTURE: u64 = 0x30;

fn modality_tag(m: Modality) -> u64 {
    match m {
        Modality::Rgb => 1,
        Modality::Ir => 2,
    }
}

/// Observed detections of one modality on one frame.
pub fn observe_frame(spec: &ScenarioSpec, truth: &GtFrame, m: Modality) -> Vec<DetectionRecord> {
    let n = &spec.noise;
    let dims = spec.dims();
    let mut rng = SplitMix64::keyed(spec.seed, &[STREAM_DETECTIONS, modality_tag(m), truth.frame_index]);
    let mut out = Vec::new();
    for gt in &truth.objects {
        // Draws happen in a fixed order whether or not the box survives.
        let drop = rng.uniform() < n.dropout;
        let (jx, jy, js) = (rng.gaussian(), rng.gaussian(), rng.gaussian());
        let conf = rng.range(n.confidence[0], n.confidence[1]);
        if drop {
            continue;
        }
        let bbox = if n.center_jitter == 0.0 && n.size_jitter == 0.0 {
            Some(gt.bbox)
        } else {
            let c = gt.bbox.centroid();
            let scale = (1.0 + n.size_jitter * js).max(0.1);
            BBox::from_center(
                Point::new(c.x + n.center_jitter * jx, c.y + n.center_jitter * jy),
                gt.bbox.width() * scale,
                gt.bbox.height() * scale,
            )
            .ok()
            .and_then(|b| b.clip_to(dims))
        };
        if let Some(bbox) = bbox {
            out.push(DetectionRecord {
                frame_index: truth.frame_index,
                modality: m,
                class_id: gt.class_id,
                class_name: gt.class_name.clone(),
                confidence: conf,
                bbox,
            });
        }
    }
    let fp = rng.poisson(n.false_positive_rate);
    let (class_id, class_name) = spec
        .objects
        .first()
        .map_or((0, default_class_name()), |o| (o.class_id, o.class_name.clone()));
    let (w, h) = (f64::from(dims.width), f64::from(dims.height));
    for _ in 0..fp {
        let side = rng.range(6.0, 24.0).min(w).min(h);
        let x = rng.range(0.0, w - side);
        let y = rng.range(0.0, h - side);
        let conf = rng.range(n.confidence[0], n.confidence[1]);
        out.push(DetectionRecord {
            frame_index: truth.frame_index,
            modality: m,
            class_id,
            class_name: class_name.clone(),
            confidence: conf,
            bbox: BBox::new(x, y, x + side, y + side).expect("positive side"),
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub truth: GroundTruth,
    /// One log per requested modality; frames without detections are omitted.
    pub logs: BTreeMap<Modality, Vec<FrameDetections>>,
}

pub fn generate(spec: &ScenarioSpec) -> Result<Scenario, SynthError> {
    spec.validate()?;
    let truth = ground_truth(spec);
    let mut logs = BTreeMap::new();
    for &m in &spec.modalities {
        let frames = truth
            .frames
            .iter()
            .filter_map(|gt| {
                let recs = observe_frame(spec, gt, m);
                if recs.is_empty() {
                    return None;
                }
                let mut fd = FrameDetections::empty(gt.frame_index);
                *fd.slot_mut(m) = Some(recs);
                Some(fd)
            })
            .collect();
        logs.insert(m, frames);
    }
    Ok(Scenario { truth, logs })
}

pub const BACKGROUND: u8 = 16;
pub const BLOB_PEAK: f64 = 240.0;
const DITHER_SPAN: u64 = 5;
const TEXTURE_AMPLITUDE: i64 = 24;

/// Renders one frame: dark dithered background plus a textured Gaussian blob
/// per object. The texture is anchored to the rounded object center, so it
/// moves with the object in whole pixels.
pub fn render_frame(objects: &[GtBox], dims: FrameDims, seed: u64) -> GrayImage {
    let (w, h) = (dims.width as usize, dims.height as usize);
    let dither = SplitMix64::keyed(seed, &[STREAM_DITHER]).next_u64();
    let mut field: Vec<f64> = (0..w * h)
        .map(|i| {
            let d = (mix64(dither ^ i as u64) % DITHER_SPAN) as f64 - (DITHER_SPAN / 2) as f64;
            f64::from(BACKGROUND) + d
        })
        .collect();
    let amplitude = BLOB_PEAK - f64::from(BACKGROUND);
    for obj in objects {
        let c = obj.bbox.centroid();
        let sigma = obj.bbox.width() / 4.0;
        let reach = (4.0 * sigma).ceil();
        let (ax, ay) = (c.x.round() as i64, c.y.round() as i64);
        let tex_key = SplitMix64::keyed(seed, &[STREAM_TEXTURE, obj.object_id]).next_u64();
        let x0 = ((c.x - reach).floor().max(0.0)) as usize;
        let y0 = ((c.y - reach).floor().max(0.0)) as usize;
        let x1 = ((c.x + reach).ceil() as usize).min(w.saturating_sub(1));
        let y1 = ((c.y + reach).ceil() as usize).min(h.saturating_sub(1));
        let inv = 1.0 / (2.0 * sigma * sigma);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dx, dy) = (x as f64 + 0.5 - c.x, y as f64 + 0.5 - c.y);
                let g = (-(dx * dx + dy * dy) * inv).exp();
                let (rx, ry) = (x as i64 - ax, y as i64 - ay);
                let key = mix64(tex_key ^ (rx as u64).wrapping_mul(0x1_0000_0001) ^ (ry as u64).rotate_left(32));
                let t = (key % (2 * TEXTURE_AMPLITUDE as u64 + 1)) as i64 - TEXTURE_AMPLITUDE;
                field[y * w + x] += amplitude * g + t as f64 * g * (1.0 - g) * 4.0;
            }
        }
    }
    let data = field.into_iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    GrayImage::new(dims.width, dims.height, data).expect("dims are positive")
}

pub const GT_HEADER: &str = "# frame\tobject_id\tclass_id\tclass_name\tx1\ty1\tx2\ty2";

pub fn write_ground_truth<W: Write>(mut out: W, truth: &GroundTruth) -> io::Result<()> {
    writeln!(out, "{GT_HEADER}")?;
    for f in &truth.frames {
        for o in &f.objects {
            let b = o.bbox;
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                f.frame_index,
                o.object_id,
                o.class_id,
                o.class_name,
                b.x1(),
                b.y1(),
                b.x2(),
                b.y2()
            )?;
        }
    }
    out.flush()
}

/// Reads a ground-truth file. Frames without objects are not represented.
pub fn parse_ground_truth<R: BufRead>(input: R) -> Result<GroundTruth, SynthError> {
    let mut frames: Vec<GtFrame> = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let text = line.trim_end_matches('\r');
        if text.trim().is_empty() || text.starts_with('#') {
            continue;
        }
        let err = |msg: String| SynthError::Parse { line: lineno, msg };
        let f: Vec<&str> = text.split('\t').collect();
        if f.len() != 8 {
            return Err(err(format!("expected 8 tab-separated fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("invalid number {s:?}")));
        let frame_index: u64 = f[0].parse().map_err(|_| err(format!("invalid frame {:?}", f[0])))?;
        let object_id: u64 = f[1].parse().map_err(|_| err(format!("invalid object_id {:?}", f[1])))?;
        let class_id: i32 = f[2].parse().map_err(|_| err(format!("invalid class_id {:?}", f[2])))?;
        let bbox = BBox::new(num(f[4])?, num(f[5])?, num(f[6])?, num(f[7])?).map_err(|e| err(e.to_string()))?;
        match frames.last() {
            Some(last) if frame_index < last.frame_index => {
                return Err(err(format!("frame {frame_index} decreases")));
            }
            Some(last) if frame_index == last.frame_index => {}
            _ => frames.push(GtFrame {
                frame_index,
                objects: Vec::new(),
            }),
        }
        frames.last_mut().expect("pushed").objects.push(GtBox {
            object_id,
            class_id,
            class_name: f[3].to_string(),
            bbox,
        });
    }
    Ok(GroundTruth { frames })
}

pub fn read_ground_truth(path: &Path) -> Result<GroundTruth, SynthError> {
    let f = std::fs::File::open(path)?;
    parse_ground_truth(io::BufReader::new(f))
}

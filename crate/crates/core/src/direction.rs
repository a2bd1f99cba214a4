//! Multi-cue direction estimation for a single tracked object.
//!
//! Four cues vote on where an object is heading:
//!
//! * area trend: least-squares slope of box area over the cue window;
//! * centroid velocity: mean per-frame centroid displacement;
//! * scale variation: `sqrt(area_last / area_first)`;
//! * sparse flow: SAD block matching of a uniform `G x G` grid of patches
//!   between consecutive frames.
//!
//! Planar cues (centroid, flow) produce a compass heading in image
//! coordinates (+x = E, +y = S). Size cues produce a radial label. Per-frame
//! estimates are then smoothed by majority vote over a short window.
//!
//! Each [`DirectionEstimator`] keeps a bounded history, so per-frame work is
//! capped regardless of how long the track lives.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detio::GrayImage;
use crate::geometry::{BBox, Point};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DirectionError {
    #[error("sample frame {got} is not after {previous}")]
    OutOfOrder { previous: u64, got: u64 },
    #[error("invalid direction config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DirectionConfig {
    /// Samples kept per track.
    pub history_length: usize,
    /// Frames looked back by the area, centroid and scale cues.
    pub cue_window: u64,
    /// Instantaneous estimates folded into the smoothed output.
    pub smoothing_window: usize,
    pub grid: usize,
    /// Block side in pixels; must be odd.
    pub block: usize,
    pub search_radius: usize,
    pub area_epsilon: f64,
    pub scale_epsilon: f64,
    pub velocity_epsilon: f64,
    pub velocity_saturation: f64,
    pub texture_floor: f64,
    pub min_valid_points: usize,
    pub min_area: f64,
    pub flow_weight: f64,
    pub centroid_weight: f64,
    pub area_weight: f64,
    pub scale_weight: f64,
}

impl Default for DirectionConfig {
    fn default() -> Self {
        Self {
            history_length: 16,
            cue_window: 10,
            smoothing_window: 5,
            grid: 4,
            block: 9,
            search_radius: 7,
            area_epsilon: 0.02,
            scale_epsilon: 0.05,
            velocity_epsilon: 0.5,
            velocity_saturation: 8.0,
            texture_floor: 4.0,
            min_valid_points: 4,
            min_area: 64.0,
            flow_weight: 2.0,
            centroid_weight: 1.0,
            area_weight: 1.0,
            scale_weight: 1.0,
        }
    }
}

impl DirectionConfig {
    pub fn validate(&self) -> Result<(), DirectionError> {
        let err = |m: &str| Err(DirectionError::Config(m.to_string()));
        if self.history_length < 2 {
            return err("history_length must be >= 2");
        }
        if self.cue_window < 2 {
            return err("cue_window must be >= 2");
        }
        if self.smoothing_window < 1 {
            return err("smoothing_window must be >= 1");
        }
        if self.grid < 1 {
            return err("grid must be >= 1");
        }
        if self.block.is_multiple_of(2) {
            return err("block must be odd");
        }
        if self.min_valid_points < 1 || self.min_valid_points > self.grid * self.grid {
            return err("min_valid_points must lie in 1..=grid*grid");
        }
        let positive = [
            self.area_epsilon,
            self.scale_epsilon,
            self.velocity_epsilon,
            self.velocity_saturation,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return err("epsilons and velocity_saturation must be positive");
        }
        let weights = [
            self.flow_weight,
            self.centroid_weight,
            self.area_weight,
            self.scale_weight,
            self.texture_floor,
            self.min_area,
        ];
        if weights.iter().any(|v| !(*v >= 0.0)) {
            return err("weights, texture_floor and min_area must be non-negative");
        }
        Ok(())
    }

    pub fn flow_params(&self) -> FlowParams {
        FlowParams {
            grid: self.grid,
            block: self.block,
            search_radius: self.search_radius,
            texture_floor: self.texture_floor,
            min_valid_points: self.min_valid_points,
            velocity_epsilon: self.velocity_epsilon,
            velocity_saturation: self.velocity_saturation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistorySample {
    pub frame_index: u64,
    pub bbox: BBox,
    pub area: f64,
    pub centroid: Point,
}

/// Fixed-capacity ring of per-frame box samples.
#[derive(Debug, Clone)]
pub struct TrackHistory {
    capacity: usize,
    samples: VecDeque<HistorySample>,
}

impl TrackHistory {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            samples: VecDeque::with_capacity(capacity.max(1)),
        }
    }

    pub fn push(&mut self, frame_index: u64, bbox: BBox) -> Result<(), DirectionError> {
        if let Some(last) = self.samples.back() {
            if frame_index <= last.frame_index {
                return Err(DirectionError::OutOfOrder {
                    previous: last.frame_index,
                    got: frame_index,
                });
            }
        }
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(HistorySample {
            frame_index,
            bbox,
            area: bbox.area(),
            centroid: bbox.centroid(),
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn last(&self) -> Option<&HistorySample> {
        self.samples.back()
    }

    pub fn samples(&self) -> &VecDeque<HistorySample> {
        &self.samples
    }

    /// Samples within the last `frames` frames, oldest first.
    pub fn window(&self, frames: u64) -> impl Iterator<Item = &HistorySample> {
        let newest = self.samples.back().map_or(0, |s| s.frame_index);
        let oldest = newest.saturating_sub(frames.saturating_sub(1));
        self.samples.iter().filter(move |s| s.frame_index >= oldest)
    }

    pub fn from_boxes(capacity: usize, boxes: impl IntoIterator<Item = (u64, BBox)>) -> Result<Self, DirectionError> {
        let mut h = TrackHistory::new(capacity);
        for (f, b) in boxes {
            h.push(f, b)?;
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cue {
    AreaTrend,
    CentroidVelocity,
    ScaleVariation,
    SparseFlow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Radial {
    Approaching,
    Receding,
    Stationary,
}

impl Radial {
    pub fn as_str(self) -> &'static str {
        match self {
            Radial::Approaching => "approaching",
            Radial::Receding => "receding",
            Radial::Stationary => "stationary",
        }
    }
}

/// Eight-way compass in image coordinates; north is up (-y).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Compass {
    N,
    NE,
    E,
    SE,
    S,
    SW,
    W,
    NW,
}

impl Compass {
    pub const ALL: [Compass; 8] = [
        Compass::N,
        Compass::NE,
        Compass::E,
        Compass::SE,
        Compass::S,
        Compass::SW,
        Compass::W,
        Compass::NW,
    ];

    pub fn index(self) -> usize {
        Compass::ALL.iter().position(|c| *c == self).expect("listed")
    }

    /// Nearest compass point to a bearing (degrees clockwise from north).
    pub fn from_bearing(deg: f64) -> Compass {
        let sector = (deg.rem_euclid(360.0) / 45.0).round() as usize % 8;
        Compass::ALL[sector]
    }

    /// Compass label of an image-space displacement.
    pub fn from_vector(dx: f64, dy: f64) -> Compass {
        Compass::from_bearing(bearing_deg(dx, dy))
    }

    pub fn bearing(self) -> f64 {
        self.index() as f64 * 45.0
    }

    /// Label after rotating the scene by `quarter_turns` x 90 degrees clockwise.
    pub fn rotated_cw(self, quarter_turns: usize) -> Compass {
        Compass::ALL[(self.index() + 2 * quarter_turns) % 8]
    }

    /// Label after a left-right mirror of the scene.
    pub fn mirrored_horizontal(self) -> Compass {
        Compass::ALL[(8 - self.index()) % 8]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Compass::N => "N",
            Compass::NE => "NE",
            Compass::E => "E",
            Compass::SE => "SE",
            Compass::S => "S",
            Compass::SW => "SW",
            Compass::W => "W",
            Compass::NW => "NW",
        }
    }
}

/// Bearing of an image-space vector: 0 = north (-y), 90 = east (+x).
pub fn bearing_deg(dx: f64, dy: f64) -> f64 {
    dx.atan2(-dy).to_degrees().rem_euclid(360.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Abstain {
    InsufficientHistory,
    DimensionMismatch,
    OutOfBounds,
    InsufficientTexture,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CueResult {
    pub cue: Cue,
    /// Unit vector in image coordinates.
    pub planar_vote: Option<Point>,
    pub radial_vote: Option<Radial>,
    pub strength: f64,
    pub abstained: Option<Abstain>,
}

impl CueResult {
    pub fn abstain(cue: Cue, why: Abstain) -> Self {
        Self {
            cue,
            planar_vote: None,
            radial_vote: None,
            strength: 0.0,
            abstained: Some(why),
        }
    }

    fn radial(cue: Cue, vote: Radial, strength: f64) -> Self {
        Self {
            cue,
            planar_vote: None,
            radial_vote: Some(vote),
            strength,
            abstained: None,
        }
    }

    fn planar(cue: Cue, motion: Point, epsilon: f64, saturation: f64, scale: f64) -> Self {
        let magnitude = motion.norm();
        let (planar_vote, strength) = if magnitude < epsilon {
            (None, 0.0)
        } else {
            let unit = Point::new(motion.x / magnitude, motion.y / magnitude);
            (Some(unit), scale * (magnitude / saturation).min(1.0))
        };
        Self {
            cue,
            planar_vote,
            radial_vote: None,
            strength,
            abstained: None,
        }
    }
}

fn classify_radial(value: f64, epsilon: f64) -> Radial {
    if value > epsilon {
        Radial::Approaching
    } else if value < -epsilon {
        Radial::Receding
    } else {
        Radial::Stationary
    }
}

/// Relative least-squares slope of area against frame index.
pub fn area_trend(h: &TrackHistory, window: u64, epsilon: f64) -> CueResult {
    let pts: Vec<(f64, f64)> = h.window(window).map(|s| (s.frame_index as f64, s.area)).collect();
    if pts.len() < 3 {
        return CueResult::abstain(Cue::AreaTrend, Abstain::InsufficientHistory);
    }
    let n = pts.len() as f64;
    let x0 = pts[0].0;
    let mean_x = pts.iter().map(|p| p.0 - x0).sum::<f64>() / n;
    let mean_a = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(x, a) in &pts {
        let dx = x - x0 - mean_x;
        sxy += dx * (a - mean_a);
        sxx += dx * dx;
    }
    let relative = sxy / sxx / mean_a;
    let strength = (relative.abs() / (4.0 * epsilon)).min(1.0);
    CueResult::radial(Cue::AreaTrend, classify_radial(relative, epsilon), strength)
}

/// Mean per-frame centroid displacement over the window.
pub fn centroid_velocity(h: &TrackHistory, window: u64, epsilon: f64, saturation: f64) -> CueResult {
    let mut it = h.window(window);
    let (Some(first), Some(last)) = (it.next(), h.last()) else {
        return CueResult::abstain(Cue::CentroidVelocity, Abstain::InsufficientHistory);
    };
    if first.frame_index == last.frame_index {
        return CueResult::abstain(Cue::CentroidVelocity, Abstain::InsufficientHistory);
    }
    let frames = (last.frame_index - first.frame_index) as f64;
    let d = last.centroid - first.centroid;
    let v = Point::new(d.x / frames, d.y / frames);
    CueResult::planar(Cue::CentroidVelocity, v, epsilon, saturation, 1.0)
}

/// Linear size ratio between the oldest and newest sample in the window.
pub fn scale_variation(h: &TrackHistory, window: u64, epsilon: f64) -> CueResult {
    let mut it = h.window(window);
    let (Some(first), Some(last)) = (it.next(), h.last()) else {
        return CueResult::abstain(Cue::ScaleVariation, Abstain::InsufficientHistory);
    };
    if first.frame_index == last.frame_index {
        return CueResult::abstain(Cue::ScaleVariation, Abstain::InsufficientHistory);
    }
    let r = (last.area / first.area).sqrt();
    let strength = ((r - 1.0).abs() / (4.0 * epsilon)).min(1.0);
    CueResult::radial(Cue::ScaleVariation, classify_radial(r - 1.0, epsilon), strength)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowParams {
    pub grid: usize,
    pub block: usize,
    pub search_radius: usize,
    pub texture_floor: f64,
    pub min_valid_points: usize,
    pub velocity_epsilon: f64,
    pub velocity_saturation: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        DirectionConfig::default().flow_params()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowResult {
    pub cue: CueResult,
    /// Component-wise median of surviving point displacements.
    pub displacement: Option<Point>,
    /// Per-point integer displacements that passed the texture floor.
    pub point_displacements: Vec<(i32, i32)>,
    pub in_bounds_points: usize,
    /// SAD candidates evaluated; bounded by `grid^2 * (2R + 1)^2`.
    pub candidates_evaluated: u64,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Search offsets ordered so the first strict minimum is the preferred tie.
fn search_order(radius: i32) -> Vec<(i32, i32)> {
    let mut v: Vec<(i32, i32)> = (-radius..=radius)
        .flat_map(|dx| (-radius..=radius).map(move |dy| (dx, dy)))
        .collect();
    v.sort_by_key(|&(dx, dy)| (dx * dx + dy * dy, dx, dy));
    v
}

/// Grid block matching of `bbox` (placed in `prev`) into `cur`.
pub fn sparse_flow(prev: &GrayImage, cur: &GrayImage, bbox: &BBox, p: &FlowParams) -> FlowResult {
    let mut result = FlowResult {
        cue: CueResult::abstain(Cue::SparseFlow, Abstain::DimensionMismatch),
        displacement: None,
        point_displacements: Vec::new(),
        in_bounds_points: 0,
        candidates_evaluated: 0,
    };
    if prev.dims() != cur.dims() {
        return result;
    }
    let (w, h) = (prev.width() as i64, prev.height() as i64);
    let half = (p.block / 2) as i64;
    let r = p.search_radius as i64;
    let reach = half + r;
    let bw = p.block;
    let offsets = search_order(p.search_radius as i32);
    let mut patch = vec![0i32; bw * bw];
    let prev_px = prev.pixels();
    let cur_px = cur.pixels();
    let stride = w as usize;

    for gy in 0..p.grid {
        for gx in 0..p.grid {
            let fx = bbox.x1() + (gx as f64 + 0.5) * bbox.width() / p.grid as f64;
            let fy = bbox.y1() + (gy as f64 + 0.5) * bbox.height() / p.grid as f64;
            let (cx, cy) = (fx.floor() as i64, fy.floor() as i64);
            if cx - reach < 0 || cy - reach < 0 || cx + reach >= w || cy + reach >= h {
                continue;
            }
            result.in_bounds_points += 1;

            let (ox, oy) = ((cx - half) as usize, (cy - half) as usize);
            let (mut sum, mut sum_sq) = (0f64, 0f64);
            for row in 0..bw {
                let base = (oy + row) * stride + ox;
                for col in 0..bw {
                    let v = i32::from(prev_px[base + col]);
                    patch[row * bw + col] = v;
                    sum += f64::from(v);
                    sum_sq += f64::from(v * v);
                }
            }
            let n = (bw * bw) as f64;
            let var = (sum_sq / n - (sum / n).powi(2)).max(0.0);
            if var.sqrt() < p.texture_floor {
                continue;
            }

            let mut best = i32::MAX;
            let mut best_off = (0, 0);
            for &(dx, dy) in &offsets {
                result.candidates_evaluated += 1;
                let tx = (ox as i64 + i64::from(dx)) as usize;
                let ty = (oy as i64 + i64::from(dy)) as usize;
                let mut sad = 0i32;
                'rows: for row in 0..bw {
                    let base = (ty + row) * stride + tx;
                    let target = &cur_px[base..base + bw];
                    let src = &patch[row * bw..(row + 1) * bw];
                    for (a, b) in src.iter().zip(target) {
                        sad += (a - i32::from(*b)).abs();
                    }
                    if sad >= best {
                        break 'rows;
                    }
                }
                if sad < best {
                    best = sad;
                    best_off = (dx, dy);
                }
            }
            result.point_displacements.push(best_off);
        }
    }

    let valid = result.point_displacements.len();
    if result.in_bounds_points == 0 {
        result.cue = CueResult::abstain(Cue::SparseFlow, Abstain::OutOfBounds);
        return result;
    }
    if valid < p.min_valid_points {
        result.cue = CueResult::abstain(Cue::SparseFlow, Abstain::InsufficientTexture);
        return result;
    }
    let mut xs: Vec<f64> = result.point_displacements.iter().map(|d| f64::from(d.0)).collect();
    let mut ys: Vec<f64> = result.point_displacements.iter().map(|d| f64::from(d.1)).collect();
    let disp = Point::new(median(&mut xs), median(&mut ys));
    result.displacement = Some(disp);
    let fraction = valid as f64 / (p.grid * p.grid) as f64;
    result.cue = CueResult::planar(
        Cue::SparseFlow,
        disp,
        p.velocity_epsilon,
        p.velocity_saturation,
        fraction,
    );
    result
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionEstimate {
    pub planar: Option<Compass>,
    pub radial: Radial,
    /// Bearing in degrees, clockwise from north; absent iff `planar` is.
    pub heading_deg: Option<f64>,
    pub confidence: f64,
}

impl DirectionEstimate {
    pub const NONE: DirectionEstimate = DirectionEstimate {
        planar: None,
        radial: Radial::Stationary,
        heading_deg: None,
        confidence: 0.0,
    };

    /// Combined label such as `NE/approaching` or `none/stationary`.
    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl Default for DirectionEstimate {
    fn default() -> Self {
        Self::NONE
    }
}

impl fmt::Display for DirectionEstimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let planar = self.planar.map_or("none", Compass::as_str);
        write!(f, "{planar}/{}", self.radial.as_str())
    }
}

/// Collapses one frame's cue results into an instantaneous estimate.
pub fn fuse_cues(cues: &[CueResult], box_area: f64, cfg: &DirectionConfig) -> DirectionEstimate {
    if box_area < cfg.min_area {
        return DirectionEstimate::NONE;
    }
    let cue_weight = |c: Cue| match c {
        Cue::SparseFlow => cfg.flow_weight,
        Cue::CentroidVelocity => cfg.centroid_weight,
        Cue::AreaTrend => cfg.area_weight,
        Cue::ScaleVariation => cfg.scale_weight,
    };

    let mut sum = Point::default();
    let mut planar_total = 0.0;
    let mut radial_weights = [0.0f64; 3];
    for c in cues.iter().filter(|c| c.abstained.is_none()) {
        let w = cue_weight(c.cue) * c.strength;
        if let Some(u) = c.planar_vote {
            sum = sum + Point::new(u.x * w, u.y * w);
            planar_total += w;
        }
        if let Some(r) = c.radial_vote {
            radial_weights[r as usize] += w;
        }
    }

    let mut fractions = Vec::with_capacity(2);
    let (planar, heading_deg) = if planar_total > 0.0 && sum.norm() > 1e-12 * planar_total {
        fractions.push(sum.norm() / planar_total);
        let bearing = bearing_deg(sum.x, sum.y);
        (Some(Compass::from_bearing(bearing)), Some(bearing))
    } else {
        (None, None)
    };

    let radial_total: f64 = radial_weights.iter().sum();
    let radial = if radial_total > 0.0 {
        // Ties fall to the later entry: Stationary, then Receding.
        let order = [Radial::Approaching, Radial::Receding, Radial::Stationary];
        let mut win = order[0];
        for r in order {
            if radial_weights[r as usize] >= radial_weights[win as usize] {
                win = r;
            }
        }
        fractions.push(radial_weights[win as usize] / radial_total);
        win
    } else {
        Radial::Stationary
    };

    let strengths: Vec<f64> = cues
        .iter()
        .filter(|c| c.abstained.is_none() && c.strength > 0.0)
        .map(|c| c.strength)
        .collect();
    let confidence = if strengths.is_empty() || fractions.is_empty() {
        0.0
    } else {
        let fraction = fractions.iter().sum::<f64>() / fractions.len() as f64;
        let mean_strength = strengths.iter().sum::<f64>() / strengths.len() as f64;
        (fraction * mean_strength).clamp(0.0, 1.0)
    };
    DirectionEstimate {
        planar,
        radial,
        heading_deg,
        confidence,
    }
}

// Most frequent value; ties go to the value seen most recently.
fn majority<T: PartialEq + Copy>(values: &[T]) -> (T, usize) {
    let count = |v: T| values.iter().filter(|x| **x == v).count();
    let best = values.iter().map(|v| count(*v)).max().expect("non-empty");
    let winner = *values
        .iter()
        .rev()
        .find(|v| count(**v) == best)
        .expect("non-empty");
    (winner, best)
}

fn circular_mean_deg(angles: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut c, mut n) = (0.0, 0.0, 0);
    for a in angles {
        let r = a.to_radians();
        s += r.sin();
        c += r.cos();
        n += 1;
    }
    if n == 0 || (s.abs() < 1e-12 && c.abs() < 1e-12) {
        return None;
    }
    Some(s.atan2(c).to_degrees().rem_euclid(360.0))
}

/// Majority vote over recent instantaneous estimates, oldest first.
pub fn smooth(recent: &[DirectionEstimate]) -> DirectionEstimate {
    if recent.is_empty() {
        return DirectionEstimate::NONE;
    }
    let n = recent.len() as f64;
    let planars: Vec<Option<Compass>> = recent.iter().map(|e| e.planar).collect();
    let radials: Vec<Radial> = recent.iter().map(|e| e.radial).collect();
    let (planar, planar_votes) = majority(&planars);
    let (radial, radial_votes) = majority(&radials);

    let (agreeing, votes): (Vec<&DirectionEstimate>, usize) = if planar.is_some() {
        (recent.iter().filter(|e| e.planar == planar).collect(), planar_votes)
    } else {
        (recent.iter().filter(|e| e.radial == radial).collect(), radial_votes)
    };
    let mean_conf = agreeing.iter().map(|e| e.confidence).sum::<f64>() / agreeing.len() as f64;
    let confidence = (votes as f64 / n * mean_conf).clamp(0.0, 1.0);
    let heading_deg = planar.map(|c| {
        circular_mean_deg(agreeing.iter().filter_map(|e| e.heading_deg)).unwrap_or(c.bearing())
    });
    DirectionEstimate {
        planar,
        radial,
        heading_deg,
        confidence,
    }
}

/// Pair of consecutive frames for the flow cue.
#[derive(Debug, Clone, Copy)]
pub struct FlowFrames<'a> {
    pub prev_index: u64,
    pub prev: &'a GrayImage,
    pub cur: &'a GrayImage,
}

/// Per-track estimator state.
#[derive(Debug, Clone)]
pub struct DirectionEstimator {
    cfg: DirectionConfig,
    history: TrackHistory,
    recent: VecDeque<DirectionEstimate>,
    last_instant: DirectionEstimate,
    last_work: u64,
}

impl DirectionEstimator {
    pub fn new(cfg: DirectionConfig) -> Self {
        Self {
            history: TrackHistory::new(cfg.history_length),
            recent: VecDeque::with_capacity(cfg.smoothing_window),
            last_instant: DirectionEstimate::NONE,
            last_work: 0,
            cfg,
        }
    }

    pub fn history(&self) -> &TrackHistory {
        &self.history
    }

    pub fn recent(&self) -> &VecDeque<DirectionEstimate> {
        &self.recent
    }

    pub fn last_instant(&self) -> DirectionEstimate {
        self.last_instant
    }

    /// Elementary operations spent on the last update (flow candidates plus
    /// windowed arithmetic).
    pub fn last_work(&self) -> u64 {
        self.last_work
    }

    /// Upper bound on [`last_work`](Self::last_work) for this config.
    pub fn work_bound(&self) -> u64 {
        let side = 2 * self.cfg.search_radius as u64 + 1;
        let flow = (self.cfg.grid * self.cfg.grid) as u64 * side * side;
        flow + 3 * self.cfg.history_length as u64 + self.cfg.smoothing_window as u64
    }

    /// Records the track's box on `frame_index` and returns the smoothed estimate.
    ///
    /// Flow runs only when `frames` pairs the previous sample's frame with
    /// this one.
    pub fn update(
        &mut self,
        frame_index: u64,
        bbox: BBox,
        frames: Option<FlowFrames<'_>>,
    ) -> Result<DirectionEstimate, DirectionError> {
        let prev_box = self.history.last().map(|s| (s.frame_index, s.bbox));
        self.history.push(frame_index, bbox)?;
        let area = bbox.area();
        let mut work = 0u64;

        let instant = if area < self.cfg.min_area {
            DirectionEstimate::NONE
        } else {
            let window = self.cfg.cue_window;
            let mut cues = vec![
                area_trend(&self.history, window, self.cfg.area_epsilon),
                centroid_velocity(
                    &self.history,
                    window,
                    self.cfg.velocity_epsilon,
                    self.cfg.velocity_saturation,
                ),
                scale_variation(&self.history, window, self.cfg.scale_epsilon),
            ];
            work += 3 * self.history.window(window).count() as u64;
            if let (Some(fr), Some((pf, pb))) = (frames, prev_box) {
                if fr.prev_index == pf && pf + 1 == frame_index {
                    let flow = sparse_flow(fr.prev, fr.cur, &pb, &self.cfg.flow_params());
                    work += flow.candidates_evaluated;
                    cues.push(flow.cue);
                }
            }
            fuse_cues(&cues, area, &self.cfg)
        };

        if self.recent.len() == self.cfg.smoothing_window {
            self.recent.pop_front();
        }
        self.recent.push_back(instant);
        work += self.recent.len() as u64;
        self.last_instant = instant;
        self.last_work = work;
        Ok(smooth(self.recent.make_contiguous()))
    }
}

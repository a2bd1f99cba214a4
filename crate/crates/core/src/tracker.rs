//! Greedy IoU tracker with bounded gap tolerance.
//!
//! Detections are linked to live tracks of the same class by descending IoU.
//! A track that goes unmatched keeps its last box (no motion model) and is
//! dropped for good once it has missed more than `max_gap` frames.

use std::cmp::Ordering;
use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::Scored;
use crate::geometry::BBox;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrackerError {
    #[error("frame {got} is not after previous frame {previous}")]
    OutOfOrder { previous: u64, got: u64 },
    #[error("invalid tracker config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub iou_match_threshold: f64,
    pub max_gap: u64,
    pub min_hits: u32,
    pub history_length: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            iou_match_threshold: 0.3,
            max_gap: 15,
            min_hits: 1,
            history_length: 32,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackerError> {
        if !(self.iou_match_threshold > 0.0 && self.iou_match_threshold < 1.0) {
            return Err(TrackerError::Config(format!(
                "iou_match_threshold = {} outside (0, 1)",
                self.iou_match_threshold
            )));
        }
        if self.max_gap < 1 {
            return Err(TrackerError::Config("max_gap must be >= 1".into()));
        }
        if self.min_hits < 1 {
            return Err(TrackerError::Config("min_hits must be >= 1".into()));
        }
        if self.history_length < 2 {
            return Err(TrackerError::Config("history_length must be >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackState {
    Tentative,
    Active,
    Lost,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackSample {
    pub frame_index: u64,
    pub bbox: BBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub class_name: String,
    history: VecDeque<TrackSample>,
    pub last_seen: u64,
    pub misses: u64,
    /// Consecutive matched frames, counting the spawning detection.
    pub hits: u32,
    pub state: TrackState,
}

impl Track {
    pub fn history(&self) -> &VecDeque<TrackSample> {
        &self.history
    }

    pub fn last(&self) -> &TrackSample {
        self.history.back().expect("tracks are created with one sample")
    }

    pub fn bbox(&self) -> &BBox {
        &self.last().bbox
    }
}

/// A track as it stands after one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackSnapshot {
    pub frame_index: u64,
    pub track_id: u64,
    pub class_name: String,
    pub bbox: BBox,
    pub confidence: f64,
    pub state: TrackState,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Association {
    /// `(track index, detection index, iou)` in acceptance order.
    pub matches: Vec<(usize, usize, f64)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_dets: Vec<usize>,
}

/// Greedy same-class matching by descending IoU.
///
/// Ties go to the lower track id, then to the earlier detection.
pub fn associate<D: Scored>(tracks: &[Track], dets: &[D], iou_match_threshold: f64) -> Association {
    let mut pairs = Vec::new();
    for (ti, t) in tracks.iter().enumerate() {
        for (di, d) in dets.iter().enumerate() {
            if d.class_name() != t.class_name {
                continue;
            }
            let v = t.bbox().iou(d.bbox());
            if v >= iou_match_threshold && v > 0.0 {
                pairs.push((ti, di, v));
            }
        }
    }
    pairs.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .unwrap_or(Ordering::Equal)
            .then(tracks[a.0].id.cmp(&tracks[b.0].id))
            .then(a.1.cmp(&b.1))
    });
    let mut track_used = vec![false; tracks.len()];
    let mut det_used = vec![false; dets.len()];
    let mut matches = Vec::new();
    for (ti, di, v) in pairs {
        if !track_used[ti] && !det_used[di] {
            track_used[ti] = true;
            det_used[di] = true;
            matches.push((ti, di, v));
        }
    }
    Association {
        matches,
        unmatched_tracks: (0..tracks.len()).filter(|&i| !track_used[i]).collect(),
        unmatched_dets: (0..dets.len()).filter(|&i| !det_used[i]).collect(),
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOutput {
    /// Tentative and active tracks updated this frame, by id.
    pub snapshots: Vec<TrackSnapshot>,
    /// Ids retired during this step.
    pub lost: Vec<u64>,
    /// Candidate pairs scored during association.
    pub pairs_evaluated: usize,
}

#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    tracks: Vec<Track>,
    next_id: u64,
    last_frame: Option<u64>,
    lost_count: u64,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self, TrackerError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            tracks: Vec::new(),
            next_id: 1,
            last_frame: None,
            lost_count: 0,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    /// Live (tentative or active) tracks, ordered by id.
    pub fn live_tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn active_tracks(&self) -> Vec<&Track> {
        self.tracks
            .iter()
            .filter(|t| t.state == TrackState::Active)
            .collect()
    }

    pub fn tracks_created(&self) -> u64 {
        self.next_id - 1
    }

    pub fn tracks_lost(&self) -> u64 {
        self.lost_count
    }

    fn retire(&mut self, keep: impl Fn(&Track) -> bool, lost: &mut Vec<u64>) {
        let before = self.tracks.len();
        self.tracks.retain(|t| {
            if keep(t) {
                true
            } else {
                lost.push(t.id);
                false
            }
        });
        self.lost_count += (before - self.tracks.len()) as u64;
    }

    pub fn step<D: Scored>(&mut self, frame_index: u64, dets: &[D]) -> Result<StepOutput, TrackerError> {
        if let Some(prev) = self.last_frame {
            if frame_index <= prev {
                return Err(TrackerError::OutOfOrder {
                    previous: prev,
                    got: frame_index,
                });
            }
        }
        self.last_frame = Some(frame_index);
        let max_gap = self.cfg.max_gap;
        let mut lost = Vec::new();

        // Frames skipped since the last step count as misses.
        self.retire(|t| frame_index - t.last_seen - 1 <= max_gap, &mut lost);

        let assoc = associate(&self.tracks, dets, self.cfg.iou_match_threshold);
        let pairs_evaluated = self.tracks.len() * dets.len();
        let mut updated = vec![false; self.tracks.len()];
        for &(ti, di, _) in &assoc.matches {
            let d = &dets[di];
            let t = &mut self.tracks[ti];
            if t.history.len() == self.cfg.history_length {
                t.history.pop_front();
            }
            t.history.push_back(TrackSample {
                frame_index,
                bbox: *d.bbox(),
                confidence: d.score(),
            });
            t.last_seen = frame_index;
            t.misses = 0;
            t.hits = t.hits.saturating_add(1);
            if t.state == TrackState::Tentative && t.hits >= self.cfg.min_hits {
                t.state = TrackState::Active;
            }
            updated[ti] = true;
        }
        for &ti in &assoc.unmatched_tracks {
            let t = &mut self.tracks[ti];
            t.misses = frame_index - t.last_seen;
            t.hits = 0;
            if t.misses > max_gap {
                t.state = TrackState::Lost;
            }
        }
        for &di in &assoc.unmatched_dets {
            let d = &dets[di];
            let mut history = VecDeque::with_capacity(self.cfg.history_length);
            history.push_back(TrackSample {
                frame_index,
                bbox: *d.bbox(),
                confidence: d.score(),
            });
            let state = if self.cfg.min_hits <= 1 {
                TrackState::Active
            } else {
                TrackState::Tentative
            };
            self.tracks.push(Track {
                id: self.next_id,
                class_name: d.class_name().to_string(),
                history,
                last_seen: frame_index,
                misses: 0,
                hits: 1,
                state,
            });
            updated.push(true);
            self.next_id += 1;
        }

        let snapshots = self
            .tracks
            .iter()
            .zip(&updated)
            .filter(|(t, &u)| u && t.state != TrackState::Lost)
            .map(|(t, _)| TrackSnapshot {
                frame_index,
                track_id: t.id,
                class_name: t.class_name.clone(),
                bbox: t.last().bbox,
                confidence: t.last().confidence,
                state: t.state,
            })
            .collect();
        self.retire(|t| t.state != TrackState::Lost, &mut lost);
        Ok(StepOutput {
            snapshots,
            lost,
            pairs_evaluated,
        })
    }
}

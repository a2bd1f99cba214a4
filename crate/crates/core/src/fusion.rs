//! Decision-layer late fusion.
//!
//! Each modality is confidence-gated on its own threshold. RGB output is then
//! thinned by greedy NMS; IR output passes on gating alone unless
//! `ir_nms` is set. With `cross_modality_nms` the gated records of both
//! streams are pooled, rescored by their modality weight and run through a
//! single NMS pass, so the stronger modality wins each overlap.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detio::{DetectionRecord, FrameDetections, Modality};
use crate::geometry::BBox;
use crate::modality::{ModalitySet, SurrogatePolicy};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FusionError {
    #[error("frame {frame}: {modality} detections missing in dual-modality mode and no surrogate covers it")]
    MissingModality { frame: u64, modality: Modality },
    #[error("invalid fusion config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    Both,
    RgbOnly,
    IrOnly,
}

impl FusionMode {
    pub fn for_available(set: ModalitySet) -> Option<FusionMode> {
        match (set.rgb, set.ir) {
            (true, true) => Some(FusionMode::Both),
            (true, false) => Some(FusionMode::RgbOnly),
            (false, true) => Some(FusionMode::IrOnly),
            (false, false) => None,
        }
    }

    pub fn uses(self, m: Modality) -> bool {
        match self {
            FusionMode::Both => true,
            FusionMode::RgbOnly => m == Modality::Rgb,
            FusionMode::IrOnly => m == Modality::Ir,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub mode: FusionMode,
    pub conf_threshold_rgb: f64,
    pub conf_threshold_ir: f64,
    pub weight_rgb: f64,
    pub weight_ir: f64,
    pub nms_iou_threshold: f64,
    pub cross_modality_nms: bool,
    /// Run NMS on IR output when it is not pooled with RGB.
    pub ir_nms: bool,
    pub harmful_conf_threshold: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            mode: FusionMode::Both,
            conf_threshold_rgb: 0.25,
            conf_threshold_ir: 0.25,
            weight_rgb: 1.0,
            weight_ir: 1.0,
            nms_iou_threshold: 0.45,
            cross_modality_nms: true,
            ir_nms: false,
            harmful_conf_threshold: 0.5,
        }
    }
}

impl FusionConfig {
    pub fn weight(&self, m: Modality) -> f64 {
        match m {
            Modality::Rgb => self.weight_rgb,
            Modality::Ir => self.weight_ir,
        }
    }

    pub fn threshold(&self, m: Modality) -> f64 {
        match m {
            Modality::Rgb => self.conf_threshold_rgb,
            Modality::Ir => self.conf_threshold_ir,
        }
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(FusionError::Config(format!("{name} = {v} outside [0, 1]")))
            }
        };
        unit("conf_threshold_rgb", self.conf_threshold_rgb)?;
        unit("conf_threshold_ir", self.conf_threshold_ir)?;
        unit("harmful_conf_threshold", self.harmful_conf_threshold)?;
        if !(self.nms_iou_threshold > 0.0 && self.nms_iou_threshold < 1.0) {
            return Err(FusionError::Config(format!(
                "nms_iou_threshold = {} outside (0, 1)",
                self.nms_iou_threshold
            )));
        }
        if !(self.weight_rgb >= 0.0 && self.weight_ir >= 0.0)
            || !(self.weight_rgb + self.weight_ir > 0.0)
            || !(self.weight_rgb + self.weight_ir).is_finite()
        {
            return Err(FusionError::Config(format!(
                "weights must be non-negative with positive sum, got {} / {}",
                self.weight_rgb, self.weight_ir
            )));
        }
        Ok(())
    }
}

/// Anything NMS can rank and compare.
pub trait Scored {
    fn score(&self) -> f64;
    fn class_name(&self) -> &str;
    fn bbox(&self) -> &BBox;
}

impl Scored for DetectionRecord {
    fn score(&self) -> f64 {
        self.confidence
    }
    fn class_name(&self) -> &str {
        &self.class_name
    }
    fn bbox(&self) -> &BBox {
        &self.bbox
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedDetection {
    pub record: DetectionRecord,
    /// Modality whose detector produced `record`.
    pub source: Modality,
    /// `min(1, weight(source) * confidence)`.
    pub effective_confidence: f64,
    /// Set when pooled NMS suppressed an overlapping detection from the other
    /// modality in favour of this one.
    pub corroborated: bool,
}

impl FusedDetection {
    pub fn new(record: DetectionRecord, cfg: &FusionConfig) -> Self {
        let effective_confidence = (cfg.weight(record.modality) * record.confidence).min(1.0);
        Self {
            source: record.modality,
            record,
            effective_confidence,
            corroborated: false,
        }
    }
}

impl Scored for FusedDetection {
    fn score(&self) -> f64 {
        self.effective_confidence
    }
    fn class_name(&self) -> &str {
        &self.record.class_name
    }
    fn bbox(&self) -> &BBox {
        &self.record.bbox
    }
}

pub fn confidence_gate(dets: &[DetectionRecord], threshold: f64) -> Vec<DetectionRecord> {
    dets.iter()
        .filter(|d| d.confidence >= threshold)
        .cloned()
        .collect()
}

/// Outcome of a greedy NMS pass, in input indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Suppression {
    /// Survivors, highest score first.
    pub kept: Vec<usize>,
    /// For each input, the survivor that removed it (if any).
    pub suppressed_by: Vec<Option<usize>>,
}

/// Class-aware greedy NMS. Equal scores keep input order.
pub fn nms_suppression<T: Scored>(dets: &[T], iou_threshold: f64) -> Suppression {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    // Stable sort: ties stay in input order.
    order.sort_by(|&a, &b| {
        dets[b]
            .score()
            .partial_cmp(&dets[a].score())
            .unwrap_or(Ordering::Equal)
    });
    let mut suppressed_by = vec![None; dets.len()];
    let mut kept = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed_by[i].is_some() {
            continue;
        }
        kept.push(i);
        for &j in &order[pos + 1..] {
            if suppressed_by[j].is_none()
                && dets[j].class_name() == dets[i].class_name()
                && dets[i].bbox().iou(dets[j].bbox()) > iou_threshold
            {
                suppressed_by[j] = Some(i);
            }
        }
    }
    Suppression {
        kept,
        suppressed_by,
    }
}

pub fn nms<T: Scored + Clone>(dets: &[T], iou_threshold: f64) -> Vec<T> {
    nms_suppression(dets, iou_threshold)
        .kept
        .into_iter()
        .map(|i| dets[i].clone())
        .collect()
}

fn gated(frame: &FrameDetections, m: Modality, cfg: &FusionConfig) -> Vec<DetectionRecord> {
    frame
        .get(m)
        .map(|recs| confidence_gate(recs, cfg.threshold(m)))
        .unwrap_or_default()
}

fn single_stream(frame: &FrameDetections, m: Modality, cfg: &FusionConfig) -> Vec<FusedDetection> {
    let mut recs = gated(frame, m, cfg);
    if m == Modality::Rgb || cfg.ir_nms {
        recs = nms(&recs, cfg.nms_iou_threshold);
    }
    recs.into_iter().map(|r| FusedDetection::new(r, cfg)).collect()
}

/// Combines one frame's per-modality detections into the final list.
///
/// In [`FusionMode::Both`] a modality absent from the frame is an error
/// unless `policy` says a surrogate stood in for it, in which case it counts
/// as an empty list.
pub fn fuse_decision_layer(
    frame: &FrameDetections,
    cfg: &FusionConfig,
    policy: Option<&SurrogatePolicy>,
) -> Result<Vec<FusedDetection>, FusionError> {
    match cfg.mode {
        FusionMode::RgbOnly => Ok(single_stream(frame, Modality::Rgb, cfg)),
        FusionMode::IrOnly => Ok(single_stream(frame, Modality::Ir, cfg)),
        FusionMode::Both => {
            for m in Modality::ALL {
                if frame.get(m).is_none() && !policy.is_some_and(|p| p.covers(m)) {
                    return Err(FusionError::MissingModality {
                        frame: frame.frame_index,
                        modality: m,
                    });
                }
            }
            if !cfg.cross_modality_nms {
                let mut out = single_stream(frame, Modality::Rgb, cfg);
                out.extend(single_stream(frame, Modality::Ir, cfg));
                return Ok(out);
            }
            let pool: Vec<FusedDetection> = Modality::ALL
                .into_iter()
                .flat_map(|m| gated(frame, m, cfg))
                .map(|r| FusedDetection::new(r, cfg))
                .collect();
            let sup = nms_suppression(&pool, cfg.nms_iou_threshold);
            let mut out: Vec<FusedDetection> =
                sup.kept.iter().map(|&i| pool[i].clone()).collect();
            for (j, by) in sup.suppressed_by.iter().enumerate() {
                if let Some(i) = by {
                    if pool[j].source != pool[*i].source {
                        let k = sup.kept.iter().position(|k| k == i).expect("suppressor kept");
                        out[k].corroborated = true;
                    }
                }
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadVerdict {
    Harmful,
    Normal,
}

pub const HARMFUL_CLASS: &str = "harmful";

/// Flags the payload if any modality is confident it is harmful.
pub fn classify_payload_or(dets: &[FusedDetection], harmful_conf_threshold: f64) -> PayloadVerdict {
    let harmful = dets.iter().any(|d| {
        d.record.class_name == HARMFUL_CLASS && d.effective_confidence >= harmful_conf_threshold
    });
    if harmful {
        PayloadVerdict::Harmful
    } else {
        PayloadVerdict::Normal
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modality::{resolve_policy, Task};

    fn det(m: Modality, class: &str, conf: f64, b: [f64; 4]) -> DetectionRecord {
        DetectionRecord {
            frame_index: 0,
            modality: m,
            class_id: 0,
            class_name: class.into(),
            confidence: conf,
            bbox: BBox::new(b[0], b[1], b[2], b[3]).unwrap(),
        }
    }

    fn frame(rgb: Option<Vec<DetectionRecord>>, ir: Option<Vec<DetectionRecord>>) -> FrameDetections {
        FrameDetections {
            frame_index: 0,
            rgb,
            ir,
        }
    }

    fn confs(v: &[DetectionRecord]) -> Vec<f64> {
        v.iter().map(|d| d.confidence).collect()
    }

    #[test]
    fn gate_thresholds() {
        let dets: Vec<_> = [0.2, 0.5, 0.9, 1.0]
            .iter()
            .map(|&c| det(Modality::Rgb, "drone", c, [0.0, 0.0, 1.0, 1.0]))
            .collect();
        assert_eq!(confidence_gate(&dets, 0.0).len(), 4);
        assert_eq!(confs(&confidence_gate(&dets, 1.0)), vec![1.0]);
        assert_eq!(confs(&confidence_gate(&dets[..3], 0.5)), vec![0.5, 0.9]);
    }

    #[test]
    fn nms_basics() {
        let one = vec![det(Modality::Rgb, "drone", 0.3, [0.0, 0.0, 10.0, 10.0])];
        assert_eq!(nms(&one, 0.5), one);

        // IoU of these two is 80/100 = 0.8.
        let a = det(Modality::Rgb, "drone", 0.7, [0.0, 0.0, 10.0, 10.0]);
        let b = det(Modality::Rgb, "drone", 0.9, [0.0, 0.0, 10.0, 8.0]);
        assert!((a.bbox.iou(&b.bbox) - 0.8).abs() < 1e-12);
        assert_eq!(confs(&nms(&[a.clone(), b.clone()], 0.5)), vec![0.9]);

        let far = det(Modality::Rgb, "drone", 0.1, [50.0, 50.0, 60.0, 60.0]);
        assert_eq!(confs(&nms(&[far.clone(), a.clone()], 0.5)), vec![0.7, 0.1]);
    }

    #[test]
    fn nms_is_class_aware_and_breaks_ties_by_order() {
        let a = det(Modality::Rgb, "drone", 0.9, [0.0, 0.0, 10.0, 10.0]);
        let b = det(Modality::Rgb, "bird", 0.8, [0.0, 0.0, 10.0, 10.0]);
        assert_eq!(nms(&[a.clone(), b.clone()], 0.5).len(), 2);

        let mut first = det(Modality::Rgb, "drone", 0.5, [0.0, 0.0, 10.0, 10.0]);
        first.class_id = 1;
        let second = det(Modality::Rgb, "drone", 0.5, [1.0, 0.0, 11.0, 10.0]);
        let kept = nms(&[first.clone(), second], 0.5);
        assert_eq!(kept, vec![first]);
    }

    #[test]
    fn ir_only_passthrough() {
        let cfg = FusionConfig {
            mode: FusionMode::IrOnly,
            conf_threshold_ir: 0.5,
            ..Default::default()
        };
        let f = frame(None, Some(vec![det(Modality::Ir, "drone", 0.8, [0.0, 0.0, 5.0, 5.0])]));
        let out = fuse_decision_layer(&f, &cfg, None).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].source, Modality::Ir);
        assert_eq!(out[0].effective_confidence, 0.8);
    }

    #[test]
    fn ir_only_skips_nms_unless_asked() {
        let twins = vec![
            det(Modality::Ir, "drone", 0.8, [0.0, 0.0, 10.0, 10.0]),
            det(Modality::Ir, "drone", 0.7, [0.0, 0.0, 10.0, 9.0]),
        ];
        let f = frame(None, Some(twins));
        let mut cfg = FusionConfig {
            mode: FusionMode::IrOnly,
            ..Default::default()
        };
        assert_eq!(fuse_decision_layer(&f, &cfg, None).unwrap().len(), 2);
        cfg.ir_nms = true;
        assert_eq!(fuse_decision_layer(&f, &cfg, None).unwrap().len(), 1);
    }

    #[test]
    fn single_modes_ignore_the_other_stream() {
        let f = frame(
            Some(vec![det(Modality::Rgb, "drone", 0.9, [0.0, 0.0, 10.0, 10.0])]),
            Some(vec![det(Modality::Ir, "drone", 0.9, [30.0, 0.0, 40.0, 10.0])]),
        );
        for (mode, m) in [(FusionMode::RgbOnly, Modality::Rgb), (FusionMode::IrOnly, Modality::Ir)] {
            let cfg = FusionConfig {
                mode,
                ..Default::default()
            };
            let out = fuse_decision_layer(&f, &cfg, None).unwrap();
            assert!(out.iter().all(|d| d.source == m));
            assert_eq!(out.len(), 1);
        }
    }

    #[test]
    fn pooled_nms_prefers_higher_effective_confidence() {
        // IoU 0.85: 85/100.
        let rgb = det(Modality::Rgb, "harmful", 0.6, [0.0, 0.0, 10.0, 10.0]);
        let ir = det(Modality::Ir, "harmful", 0.9, [0.0, 0.0, 10.0, 8.5]);
        assert!((rgb.bbox.iou(&ir.bbox) - 0.85).abs() < 1e-12);
        let f = frame(Some(vec![rgb.clone()]), Some(vec![ir.clone()]));
        let cfg = FusionConfig {
            nms_iou_threshold: 0.5,
            ..Default::default()
        };
        let out = fuse_decision_layer(&f, &cfg, None).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].source, Modality::Ir);
        assert!(out[0].corroborated);

        let cfg = FusionConfig {
            weight_rgb: 2.0,
            weight_ir: 1.0,
            nms_iou_threshold: 0.5,
            ..Default::default()
        };
        let rgb = det(Modality::Rgb, "harmful", 0.5, [0.0, 0.0, 10.0, 10.0]);
        let f = frame(Some(vec![rgb]), Some(vec![ir]));
        let out = fuse_decision_layer(&f, &cfg, None).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].source, Modality::Rgb);
        assert_eq!(out[0].effective_confidence, 1.0);
    }

    #[test]
    fn independent_streams_concatenate() {
        let rgb = det(Modality::Rgb, "drone", 0.6, [0.0, 0.0, 10.0, 10.0]);
        let ir = det(Modality::Ir, "drone", 0.9, [0.0, 0.0, 10.0, 10.0]);
        let f = frame(Some(vec![rgb]), Some(vec![ir]));
        let cfg = FusionConfig {
            cross_modality_nms: false,
            ..Default::default()
        };
        let out = fuse_decision_layer(&f, &cfg, None).unwrap();
        let sources: Vec<_> = out.iter().map(|d| d.source).collect();
        assert_eq!(sources, vec![Modality::Rgb, Modality::Ir]);
    }

    #[test]
    fn missing_stream_needs_a_surrogate() {
        let f = frame(None, Some(vec![]));
        let cfg = FusionConfig::default();
        assert_eq!(
            fuse_decision_layer(&f, &cfg, None),
            Err(FusionError::MissingModality {
                frame: 0,
                modality: Modality::Rgb
            })
        );
        let p = resolve_policy(Task::DroneDetection, ModalitySet::IR).unwrap();
        assert!(fuse_decision_layer(&f, &cfg, Some(&p)).unwrap().is_empty());
    }

    #[test]
    fn payload_or() {
        let mk = |m, class: &str, c| {
            FusedDetection::new(det(m, class, c, [0.0, 0.0, 5.0, 5.0]), &FusionConfig::default())
        };
        assert_eq!(
            classify_payload_or(&[mk(Modality::Ir, "harmful", 0.9)], 0.5),
            PayloadVerdict::Harmful
        );
        assert_eq!(classify_payload_or(&[], 0.5), PayloadVerdict::Normal);
        assert_eq!(
            classify_payload_or(&[mk(Modality::Rgb, "harmful", 0.3)], 0.5),
            PayloadVerdict::Normal
        );
        assert_eq!(
            classify_payload_or(&[mk(Modality::Rgb, "normal", 0.99)], 0.5),
            PayloadVerdict::Normal
        );
    }

    #[test]
    fn config_validation() {
        assert!(FusionConfig::default().validate().is_ok());
        let bad = FusionConfig {
            weight_rgb: 0.0,
            weight_ir: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = FusionConfig {
            nms_iou_threshold: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = FusionConfig {
            conf_threshold_ir: 1.2,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn dets() -> impl Strategy<Value = Vec<DetectionRecord>> {
            prop::collection::vec(
                (0u8..3, 0u32..20, 0.0f64..100.0, 0.0f64..100.0, 2.0f64..40.0, 2.0f64..40.0),
                0..30,
            )
            .prop_map(|v| {
                v.into_iter()
                    .map(|(cls, conf, x, y, w, h)| {
                        // Coarse confidences so ties actually happen.
                        det(Modality::Rgb, ["drone", "bird", "x"][cls as usize], f64::from(conf) / 20.0, [x, y, x + w, y + h])
                    })
                    .collect()
            })
        }

        proptest! {
            #[test]
            fn nms_idempotent_and_shrinking(d in dets(), thr in 0.05f64..0.95) {
                let once = nms(&d, thr);
                prop_assert!(once.len() <= d.len());
                for k in &once {
                    prop_assert!(d.contains(k));
                }
                prop_assert!(once.windows(2).all(|w| w[0].confidence >= w[1].confidence));
                prop_assert_eq!(nms(&once, thr), once);
            }

            #[test]
            fn nms_scale_invariant(d in dets(), thr in 0.05f64..0.95, k in 0u32..4) {
                let factor = [1.0, 0.5, 0.25, 0.125][k as usize];
                let scaled: Vec<_> = d.iter().cloned().map(|mut r| { r.confidence *= factor; r }).collect();
                let a = nms_suppression(&d, thr).kept;
                let b = nms_suppression(&scaled, thr).kept;
                prop_assert_eq!(a, b);
            }

            #[test]
            fn payload_or_is_monotone(confs in prop::collection::vec((any::<bool>(), 0.0f64..1.0), 0..8), extra in (any::<bool>(), 0.0f64..1.0), thr in 0.0f64..1.0) {
                let cfg = FusionConfig::default();
                let mk = |(h, c): (bool, f64)| FusedDetection::new(det(Modality::Rgb, if h { "harmful" } else { "normal" }, c, [0.0, 0.0, 1.0, 1.0]), &cfg);
                let mut v: Vec<_> = confs.into_iter().map(mk).collect();
                let before = classify_payload_or(&v, thr);
                v.push(mk(extra));
                let after = classify_payload_or(&v, thr);
                prop_assert!(!(before == PayloadVerdict::Harmful && after == PayloadVerdict::Normal));
            }
        }
    }
}

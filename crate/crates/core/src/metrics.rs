//! Detection and tracking metrics.
//!
//! Matching is greedy in confidence order. Precision with no predictions is
//! 1, recall with no ground truth is 1, and F1 is 0 when both are 0.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::detio::{FrameDetections, TrackRow};
use crate::geometry::BBox;
use crate::synth::GroundTruth;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl std::ops::AddAssign for MatchCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

/// A prediction for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalDet {
    pub frame_index: u64,
    pub class_name: String,
    pub confidence: f64,
    pub bbox: BBox,
    pub track_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalGt {
    pub frame_index: u64,
    pub class_name: String,
    pub object_id: u64,
    pub bbox: BBox,
}

pub fn dets_from_log(frames: &[FrameDetections]) -> Vec<EvalDet> {
    frames
        .iter()
        .flat_map(FrameDetections::records)
        .map(|r| EvalDet {
            frame_index: r.frame_index,
            class_name: r.class_name.clone(),
            confidence: r.confidence,
            bbox: r.bbox,
            track_id: None,
        })
        .collect()
}

pub fn dets_from_tracks(rows: &[TrackRow]) -> Vec<EvalDet> {
    rows.iter()
        .map(|r| EvalDet {
            frame_index: r.frame_index,
            class_name: r.class_name.clone(),
            confidence: r.confidence,
            bbox: r.bbox,
            track_id: Some(r.track_id),
        })
        .collect()
}

pub fn gts_from_truth(truth: &GroundTruth) -> Vec<EvalGt> {
    truth
        .frames
        .iter()
        .flat_map(|f| {
            f.objects.iter().map(move |o| EvalGt {
                frame_index: f.frame_index,
                class_name: o.class_name.clone(),
                object_id: o.object_id,
                bbox: o.bbox,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameMatch {
    pub counts: MatchCounts,
    /// Matched gt index per prediction, in prediction order.
    pub assignment: Vec<Option<usize>>,
}

/// Greedy matching of predictions (already in descending confidence) to
/// ground-truth boxes of one frame and class.
pub fn match_detections(preds: &[BBox], gts: &[BBox], iou_threshold: f64) -> FrameMatch {
    let mut taken = vec![false; gts.len()];
    let mut assignment = Vec::with_capacity(preds.len());
    let mut counts = MatchCounts::default();
    for p in preds {
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gts.iter().enumerate() {
            if taken[gi] {
                continue;
            }
            let v = p.iou(g);
            if v >= iou_threshold && v > 0.0 && best.is_none_or(|(_, b)| v > b) {
                best = Some((gi, v));
            }
        }
        match best {
            Some((gi, _)) => {
                taken[gi] = true;
                counts.tp += 1;
                assignment.push(Some(gi));
            }
            None => {
                counts.fp += 1;
                assignment.push(None);
            }
        }
    }
    counts.fn_ = taken.iter().filter(|t| !**t).count() as u64;
    FrameMatch { counts, assignment }
}

pub fn precision_recall_f1(c: MatchCounts) -> (f64, f64, f64) {
    let p = if c.tp + c.fp == 0 {
        1.0
    } else {
        c.tp as f64 / (c.tp + c.fp) as f64
    };
    let r = if c.tp + c.fn_ == 0 {
        1.0
    } else {
        c.tp as f64 / (c.tp + c.fn_) as f64
    };
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1)
}

type Key<'a> = (u64, &'a str);

fn group_gts(gts: &[EvalGt]) -> HashMap<Key<'_>, Vec<BBox>> {
    let mut m: HashMap<Key<'_>, Vec<BBox>> = HashMap::new();
    for g in gts {
        m.entry((g.frame_index, g.class_name.as_str())).or_default().push(g.bbox);
    }
    m
}

// Per (frame, class) prediction indices in descending confidence, stable.
fn group_preds(preds: &[EvalDet]) -> BTreeMap<Key<'_>, Vec<usize>> {
    let mut m: BTreeMap<Key<'_>, Vec<usize>> = BTreeMap::new();
    for (i, p) in preds.iter().enumerate() {
        m.entry((p.frame_index, p.class_name.as_str())).or_default().push(i);
    }
    for v in m.values_mut() {
        v.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence));
    }
    m
}

/// Match outcome for every prediction: `true` if it is a true positive.
fn label_predictions(preds: &[EvalDet], gts: &[EvalGt], iou_threshold: f64) -> Vec<bool> {
    let by_gt = group_gts(gts);
    let mut is_tp = vec![false; preds.len()];
    for (key, idx) in group_preds(preds) {
        let boxes: Vec<BBox> = idx.iter().map(|&i| preds[i].bbox).collect();
        let empty = Vec::new();
        let m = match_detections(&boxes, by_gt.get(&key).unwrap_or(&empty), iou_threshold);
        for (&i, a) in idx.iter().zip(&m.assignment) {
            is_tp[i] = a.is_some();
        }
    }
    is_tp
}

/// Counts per class at an operating point; predictions below
/// `conf_threshold` are ignored.
pub fn counts_by_class(
    preds: &[EvalDet],
    gts: &[EvalGt],
    iou_threshold: f64,
    conf_threshold: f64,
) -> BTreeMap<String, MatchCounts> {
    let kept: Vec<EvalDet> = preds.iter().filter(|p| p.confidence >= conf_threshold).cloned().collect();
    let by_gt = group_gts(gts);
    let mut out: BTreeMap<String, MatchCounts> = BTreeMap::new();
    for g in gts {
        out.entry(g.class_name.clone()).or_default();
    }
    let grouped = group_preds(&kept);
    for (&(frame, class), idx) in &grouped {
        let boxes: Vec<BBox> = idx.iter().map(|&i| kept[i].bbox).collect();
        let empty = Vec::new();
        let m = match_detections(&boxes, by_gt.get(&(frame, class)).unwrap_or(&empty), iou_threshold);
        *out.entry(class.to_string()).or_default() += m.counts;
    }
    for ((frame, class), boxes) in &by_gt {
        if !grouped.contains_key(&(*frame, *class)) {
            out.get_mut(*class).expect("seeded above").fn_ += boxes.len() as u64;
        }
    }
    out
}

/// All-point interpolated AP for one class; `None` if the class has no
/// ground truth. Equal confidences form a single cut point.
pub fn class_average_precision(preds: &[EvalDet], gts: &[EvalGt], class: &str, iou_threshold: f64) -> Option<f64> {
    let gts: Vec<EvalGt> = gts.iter().filter(|g| g.class_name == class).cloned().collect();
    if gts.is_empty() {
        return None;
    }
    let preds: Vec<EvalDet> = preds.iter().filter(|p| p.class_name == class).cloned().collect();
    let is_tp = label_predictions(&preds, &gts, iou_threshold);
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence));

    let total = gts.len() as f64;
    let mut points: Vec<(f64, f64)> = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    for (k, &i) in order.iter().enumerate() {
        if is_tp[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_tie = order
            .get(k + 1)
            .is_none_or(|&j| preds[j].confidence != preds[i].confidence);
        if last_of_tie {
            points.push((tp as f64 / total, tp as f64 / (tp + fp) as f64));
        }
    }
    // High to low recall, so the running max is the monotone envelope.
    let mut envelope = 0.0f64;
    let mut ap = 0.0;
    for k in (0..points.len()).rev() {
        let (r, p) = points[k];
        envelope = envelope.max(p);
        let prev_r = if k == 0 { 0.0 } else { points[k - 1].0 };
        ap += (r - prev_r) * envelope;
    }
    Some(ap.clamp(0.0, 1.0))
}

fn classes(gts: &[EvalGt]) -> BTreeSet<&str> {
    gts.iter().map(|g| g.class_name.as_str()).collect()
}

/// Mean AP over classes with ground truth; `None` if there are none.
pub fn average_precision(preds: &[EvalDet], gts: &[EvalGt], iou_threshold: f64) -> Option<f64> {
    let aps: Vec<f64> = classes(gts)
        .into_iter()
        .filter_map(|c| class_average_precision(preds, gts, c, iou_threshold))
        .collect();
    if aps.is_empty() {
        None
    } else {
        Some(aps.iter().sum::<f64>() / aps.len() as f64)
    }
}

pub fn coco_thresholds() -> [f64; 10] {
    std::array::from_fn(|k| 0.5 + 0.05 * k as f64)
}

/// Mean of [`average_precision`] over IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn map_range(preds: &[EvalDet], gts: &[EvalGt]) -> Option<f64> {
    let aps: Option<Vec<f64>> = coco_thresholds()
        .iter()
        .map(|&t| average_precision(preds, gts, t))
        .collect();
    aps.map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

/// Frames where a ground-truth object's best-overlapping track differs from
/// the track it was last matched to. Frames without a match are skipped.
pub fn id_switches(tracks: &[EvalDet], gts: &[EvalGt], min_iou: f64) -> u64 {
    let mut by_frame: HashMap<u64, Vec<&EvalDet>> = HashMap::new();
    for t in tracks.iter().filter(|t| t.track_id.is_some()) {
        by_frame.entry(t.frame_index).or_default().push(t);
    }
    let mut gts_sorted: Vec<&EvalGt> = gts.iter().collect();
    gts_sorted.sort_by_key(|g| (g.frame_index, g.object_id));
    let mut last: HashMap<u64, u64> = HashMap::new();
    let mut switches = 0;
    for g in gts_sorted {
        let Some(cands) = by_frame.get(&g.frame_index) else {
            continue;
        };
        let mut best: Option<(u64, f64)> = None;
        for t in cands {
            let v = t.bbox.iou(&g.bbox);
            let id = t.track_id.expect("filtered");
            let better = match best {
                None => true,
                Some((bid, bv)) => v > bv || (v == bv && id < bid),
            };
            if v >= min_iou && v > 0.0 && better {
                best = Some((id, v));
            }
        }
        if let Some((id, _)) = best {
            if let Some(prev) = last.insert(g.object_id, id) {
                if prev != id {
                    switches += 1;
                }
            }
        }
    }
    switches
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfSummary {
    #[serde(flatten)]
    pub counts: MatchCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl From<MatchCounts> for PrfSummary {
    fn from(counts: MatchCounts) -> Self {
        let (precision, recall, f1) = precision_recall_f1(counts);
        Self {
            counts,
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class_name: String,
    #[serde(flatten)]
    pub prf: PrfSummary,
    pub ap50: Option<f64>,
    pub map50_95: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_threshold: f64,
    pub conf_threshold: f64,
    pub predictions: usize,
    pub ground_truth: usize,
    /// Counts pooled over all classes.
    pub micro: PrfSummary,
    /// Unweighted mean of per-class precision, recall and F1.
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassReport>,
    pub ap50: Option<f64>,
    pub map50_95: Option<f64>,
    /// Present when predictions carry track ids.
    pub id_switches: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub iou_threshold: f64,
    pub conf_threshold: f64,
    pub switch_min_iou: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            conf_threshold: 0.0,
            switch_min_iou: 0.5,
        }
    }
}

pub fn evaluate(preds: &[EvalDet], gts: &[EvalGt], opts: &EvalOptions) -> EvalReport {
    let by_class = counts_by_class(preds, gts, opts.iou_threshold, opts.conf_threshold);
    let mut micro = MatchCounts::default();
    let mut per_class = Vec::new();
    for (class, counts) in &by_class {
        micro += *counts;
        let ap50 = class_average_precision(preds, gts, class, 0.5);
        let map50_95 = ap50.map(|_| {
            coco_thresholds()
                .iter()
                .map(|&t| class_average_precision(preds, gts, class, t).unwrap_or(0.0))
                .sum::<f64>()
                / 10.0
        });
        per_class.push(ClassReport {
            class_name: class.clone(),
            prf: PrfSummary::from(*counts),
            ap50,
            map50_95,
        });
    }
    let mean = |f: fn(&ClassReport) -> f64| {
        if per_class.is_empty() {
            1.0
        } else {
            per_class.iter().map(f).sum::<f64>() / per_class.len() as f64
        }
    };
    let has_tracks = preds.iter().any(|p| p.track_id.is_some());
    EvalReport {
        iou_threshold: opts.iou_threshold,
        conf_threshold: opts.conf_threshold,
        predictions: preds.len(),
        ground_truth: gts.len(),
        micro: micro.into(),
        macro_precision: mean(|c| c.prf.precision),
        macro_recall: mean(|c| c.prf.recall),
        macro_f1: mean(|c| c.prf.f1),
        ap50: average_precision(preds, gts, 0.5),
        map50_95: map_range(preds, gts),
        id_switches: has_tracks.then(|| id_switches(preds, gts, opts.switch_min_iou)),
        per_class,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

/// Writes the report as CSV, one row for the micro totals and one per class.
pub fn write_report_csv<W: Write>(out: W, r: &EvalReport) -> io::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record([
        "scope", "class", "tp", "fp", "fn", "precision", "recall", "f1", "ap50", "map50_95", "id_switches",
    ])?;
    let mut row = |scope: &str, class: &str, p: &PrfSummary, ap: Option<f64>, map: Option<f64>, sw: String| {
        w.write_record([
            scope.to_string(),
            class.to_string(),
            p.counts.tp.to_string(),
            p.counts.fp.to_string(),
            p.counts.fn_.to_string(),
            format!("{:.6}", p.precision),
            format!("{:.6}", p.recall),
            format!("{:.6}", p.f1),
            opt(ap),
            opt(map),
            sw,
        ])
    };
    let sw = r.id_switches.map_or_else(String::new, |s| s.to_string());
    row("micro", "*", &r.micro, r.ap50, r.map50_95, sw)?;
    for c in &r.per_class {
        row("class", &c.class_name, &c.prf, c.ap50, c.map50_95, String::new())?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x: f64, y: f64, s: f64) -> BBox {
        BBox::new(x, y, x + s, y + s).unwrap()
    }

    fn det(frame: u64, conf: f64, bbox: BBox) -> EvalDet {
        EvalDet {
            frame_index: frame,
            class_name: "drone".into(),
            confidence: conf,
            bbox,
            track_id: None,
        }
    }

    fn gt(frame: u64, id: u64, bbox: BBox) -> EvalGt {
        EvalGt {
            frame_index: frame,
            class_name: "drone".into(),
            object_id: id,
            bbox,
        }
    }

    #[test]
    fn matching_examples() {
        let gts = [b(0.0, 0.0, 10.0), b(20.0, 20.0, 10.0)];
        let m = match_detections(&gts, &gts, 0.5);
        assert_eq!(m.counts, MatchCounts { tp: 2, fp: 0, fn_: 0 });
        let m = match_detections(&[], &gts, 0.5);
        assert_eq!(m.counts, MatchCounts { tp: 0, fp: 0, fn_: 2 });
        let m = match_detections(&[b(0.0, 0.0, 10.0), b(0.5, 0.0, 10.0)], &gts[..1], 0.5);
        assert_eq!(m.counts, MatchCounts { tp: 1, fp: 1, fn_: 0 });
        assert_eq!(m.assignment, vec![Some(0), None]);
    }

    #[test]
    fn prf_examples() {
        let (p, r, f) = precision_recall_f1(MatchCounts { tp: 9, fp: 1, fn_: 1 });
        assert!((p - 0.9).abs() < 1e-12 && (r - 0.9).abs() < 1e-12 && (f - 0.9).abs() < 1e-12);
        assert_eq!(precision_recall_f1(MatchCounts::default()), (1.0, 1.0, 1.0));
        assert_eq!(precision_recall_f1(MatchCounts { tp: 0, fp: 5, fn_: 5 }), (0.0, 0.0, 0.0));
    }

    #[test]
    fn ap_examples() {
        let gts = vec![gt(0, 1, b(0.0, 0.0, 10.0)), gt(0, 2, b(50.0, 50.0, 10.0))];
        let perfect: Vec<EvalDet> = gts.iter().map(|g| det(0, 0.9, g.bbox)).collect();
        assert_eq!(average_precision(&perfect, &gts, 0.5), Some(1.0));
        assert_eq!(map_range(&perfect, &gts), Some(1.0));
        let wrong = vec![det(0, 0.9, b(100.0, 100.0, 10.0))];
        assert_eq!(average_precision(&wrong, &gts, 0.5), Some(0.0));
        assert_eq!(map_range(&[], &gts), Some(0.0));
        assert_eq!(average_precision(&perfect, &[], 0.5), None);

        // tp@0.9, fp@0.8, tp@0.7 over 2 gts: points (0.5, 1), (0.5, 0.5), (1, 2/3).
        let preds = vec![
            det(0, 0.9, gts[0].bbox),
            det(0, 0.8, b(200.0, 200.0, 10.0)),
            det(0, 0.7, gts[1].bbox),
        ];
        let ap = average_precision(&preds, &gts, 0.5).unwrap();
        assert!((ap - (0.5 * 1.0 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn id_switch_examples() {
        let gts: Vec<EvalGt> = (0..6).map(|f| gt(f, 1, b(10.0 + f as f64, 10.0, 10.0))).collect();
        let track = |id: u64, g: &EvalGt| EvalDet {
            track_id: Some(id),
            ..det(g.frame_index, 0.9, g.bbox)
        };
        let perfect: Vec<EvalDet> = gts.iter().map(|g| track(7, g)).collect();
        assert_eq!(id_switches(&perfect, &gts, 0.5), 0);
        let switched: Vec<EvalDet> = gts
            .iter()
            .map(|g| track(if g.frame_index < 3 { 7 } else { 8 }, g))
            .collect();
        assert_eq!(id_switches(&switched, &gts, 0.5), 1);
        // A gap in coverage alone is not a switch.
        let gappy: Vec<EvalDet> = gts.iter().filter(|g| g.frame_index != 2).map(|g| track(7, g)).collect();
        assert_eq!(id_switches(&gappy, &gts, 0.5), 0);
        assert_eq!(id_switches(&[], &gts, 0.5), 0);
    }

    #[test]
    fn report_shapes() {
        let gts = vec![gt(0, 1, b(0.0, 0.0, 10.0))];
        let preds = vec![det(0, 0.9, b(0.0, 0.0, 10.0))];
        let r = evaluate(&preds, &gts, &EvalOptions::default());
        assert_eq!(r.micro.f1, 1.0);
        assert_eq!(r.map50_95, Some(1.0));
        assert_eq!(r.id_switches, None);
        let r = evaluate(&[], &gts, &EvalOptions::default());
        assert_eq!(r.micro.recall, 0.0);
        let mut buf = Vec::new();
        write_report_csv(&mut buf, &r).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn prf_bounded(tp in 0u64..50, fp in 0u64..50, fn_ in 0u64..50) {
                let (p, r, f) = precision_recall_f1(MatchCounts { tp, fp, fn_ });
                for v in [p, r, f] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }

            #[test]
            fn tp_plus_fn_is_gt_count(
                preds in prop::collection::vec((0u8..40, 0u8..40, 4u8..16), 0..8),
                gts in prop::collection::vec((0u8..40, 0u8..40, 4u8..16), 0..8),
            ) {
                let pb: Vec<BBox> = preds.iter().map(|&(x, y, s)| b(x.into(), y.into(), s.into())).collect();
                let gb: Vec<BBox> = gts.iter().map(|&(x, y, s)| b(x.into(), y.into(), s.into())).collect();
                let m = match_detections(&pb, &gb, 0.5);
                prop_assert_eq!(m.counts.tp + m.counts.fn_, gb.len() as u64);
                prop_assert_eq!(m.counts.tp + m.counts.fp, pb.len() as u64);
            }
        }
    }
}

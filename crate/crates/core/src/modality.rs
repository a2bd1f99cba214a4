//! Stand-in inputs for a missing sensor stream.
//!
//! Drone detection feeds a white frame to the idle backbone. Payload
//! identification derives the stand-in from the stream that is present: a
//! BT.601 grayscale of the RGB frame for the IR side, or the IR frame copied
//! into three channels for the RGB side.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detio::{GrayImage, Modality};
use crate::geometry::FrameDims;

#[derive(Debug, Error, PartialEq)]
pub enum ModalityError {
    #[error("no modality available")]
    NothingAvailable,
    #[error("RGB buffer holds {found} values, {width}x{height}x3 needs {expected}")]
    DimensionMismatch {
        width: u32,
        height: u32,
        expected: usize,
        found: usize,
    },
    #[error("policy expects a {0} frame but none was supplied")]
    MissingInput(Modality),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[serde(alias = "drone")]
    DroneDetection,
    #[serde(alias = "payload")]
    PayloadIdentification,
}

impl FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "drone" | "drone_detection" => Ok(Task::DroneDetection),
            "payload" | "payload_identification" => Ok(Task::PayloadIdentification),
            other => Err(format!("unknown task {other:?} (expected drone or payload)")),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::DroneDetection => "drone_detection",
            Task::PayloadIdentification => "payload_identification",
        })
    }
}

/// Interleaved 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, ModalityError> {
        let expected = 3 * width as usize * height as usize;
        if data.len() != expected || expected == 0 {
            return Err(ModalityError::DimensionMismatch {
                width,
                height,
                expected,
                found: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> FrameDims {
        FrameDims {
            width: self.width,
            height: self.height,
        }
    }

    pub fn raw(&self) -> &[u8] {
        &self.data
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }
}

pub fn white_placeholder(dims: FrameDims) -> RgbImage {
    RgbImage {
        width: dims.width,
        height: dims.height,
        data: vec![255; 3 * dims.pixel_count()],
    }
}

pub fn replicate_gray_to_triplet(g: &GrayImage) -> RgbImage {
    let data = g.pixels().iter().flat_map(|&v| [v, v, v]).collect();
    RgbImage {
        width: g.width(),
        height: g.height(),
        data,
    }
}

/// BT.601 luma in fixed point, rounded half-up.
#[inline]
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    let weighted = 299 * u32::from(r) + 587 * u32::from(g) + 114 * u32::from(b);
    ((weighted + 500) / 1000).min(255) as u8
}

pub fn rgb_to_gray_surrogate(img: &RgbImage) -> GrayImage {
    let data = img.pixels().map(|[r, g, b]| luma(r, g, b)).collect();
    GrayImage::new(img.width, img.height, data).expect("dimensions carried over")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateAction {
    None,
    WhitePlaceholder,
    GraySurrogate,
    TripletReplicate,
}

impl fmt::Display for SurrogateAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SurrogateAction::None => "none",
            SurrogateAction::WhitePlaceholder => "white_placeholder",
            SurrogateAction::GraySurrogate => "gray_surrogate",
            SurrogateAction::TripletReplicate => "triplet_replicate",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ModalitySet {
    pub rgb: bool,
    pub ir: bool,
}

impl ModalitySet {
    pub const RGB: ModalitySet = ModalitySet {
        rgb: true,
        ir: false,
    };
    pub const IR: ModalitySet = ModalitySet {
        rgb: false,
        ir: true,
    };
    pub const BOTH: ModalitySet = ModalitySet { rgb: true, ir: true };

    pub fn contains(&self, m: Modality) -> bool {
        match m {
            Modality::Rgb => self.rgb,
            Modality::Ir => self.ir,
        }
    }

    pub fn is_empty(&self) -> bool {
        !self.rgb && !self.ir
    }

    pub fn iter(&self) -> impl Iterator<Item = Modality> + '_ {
        Modality::ALL.into_iter().filter(|m| self.contains(*m))
    }
}

impl FromIterator<Modality> for ModalitySet {
    fn from_iter<I: IntoIterator<Item = Modality>>(iter: I) -> Self {
        let mut set = ModalitySet::default();
        for m in iter {
            match m {
                Modality::Rgb => set.rgb = true,
                Modality::Ir => set.ir = true,
            }
        }
        set
    }
}

/// What each backbone receives in place of its own frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurrogatePolicy {
    pub task: Task,
    pub available: ModalitySet,
    pub rgb: SurrogateAction,
    pub ir: SurrogateAction,
}

impl SurrogatePolicy {
    pub fn action(&self, m: Modality) -> SurrogateAction {
        match m {
            Modality::Rgb => self.rgb,
            Modality::Ir => self.ir,
        }
    }

    /// True if `m` is absent and something stands in for it.
    pub fn covers(&self, m: Modality) -> bool {
        !self.available.contains(m) && self.action(m) != SurrogateAction::None
    }

    /// Builds the pair of detector inputs, synthesizing the missing one.
    pub fn materialize(
        &self,
        rgb: Option<&RgbImage>,
        ir: Option<&GrayImage>,
    ) -> Result<(RgbImage, GrayImage), ModalityError> {
        let rgb_in = if self.available.rgb {
            Some(rgb.ok_or(ModalityError::MissingInput(Modality::Rgb))?)
        } else {
            None
        };
        let ir_in = if self.available.ir {
            Some(ir.ok_or(ModalityError::MissingInput(Modality::Ir))?)
        } else {
            None
        };
        let rgb_out = match (rgb_in, self.rgb) {
            (Some(img), _) => img.clone(),
            (None, SurrogateAction::TripletReplicate) => {
                replicate_gray_to_triplet(ir_in.ok_or(ModalityError::MissingInput(Modality::Ir))?)
            }
            (None, _) => white_placeholder(
                ir_in
                    .map(GrayImage::dims)
                    .ok_or(ModalityError::MissingInput(Modality::Ir))?,
            ),
        };
        let ir_out = match (ir_in, self.ir) {
            (Some(img), _) => img.clone(),
            (None, SurrogateAction::GraySurrogate) => rgb_to_gray_surrogate(&rgb_out),
            (None, _) => GrayImage::filled(rgb_out.dims(), 255),
        };
        Ok((rgb_out, ir_out))
    }
}

pub fn resolve_policy(task: Task, available: ModalitySet) -> Result<SurrogatePolicy, ModalityError> {
    if available.is_empty() {
        return Err(ModalityError::NothingAvailable);
    }
    let stand_in = |m: Modality| {
        if available.contains(m) {
            return SurrogateAction::None;
        }
        match (task, m) {
            (Task::DroneDetection, _) => SurrogateAction::WhitePlaceholder,
            (Task::PayloadIdentification, Modality::Ir) => SurrogateAction::GraySurrogate,
            (Task::PayloadIdentification, Modality::Rgb) => SurrogateAction::TripletReplicate,
        }
    };
    Ok(SurrogatePolicy {
        task,
        available,
        rgb: stand_in(Modality::Rgb),
        ir: stand_in(Modality::Ir),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(w: u32, h: u32) -> FrameDims {
        FrameDims::new(w, h).unwrap()
    }

    #[test]
    fn white_placeholder_sizes() {
        let img = white_placeholder(dims(2, 2));
        assert_eq!(img.pixels().collect::<Vec<_>>(), vec![[255, 255, 255]; 4]);
        assert_eq!(white_placeholder(dims(1, 1)).pixels().count(), 1);
        let native = white_placeholder(FrameDims::NATIVE);
        assert_eq!(native.pixels().count(), 81_920);
        assert!(native.raw().iter().all(|&v| v == 255));
    }

    #[test]
    fn triplet_replication() {
        let g = GrayImage::new(1, 1, vec![77]).unwrap();
        assert_eq!(replicate_gray_to_triplet(&g).raw(), &[77, 77, 77]);
        let black = GrayImage::filled(dims(3, 2), 0);
        assert!(replicate_gray_to_triplet(&black).raw().iter().all(|&v| v == 0));

        let g = GrayImage::new(4, 4, (0..16).map(|i| (i * 17) as u8).collect()).unwrap();
        let rgb = replicate_gray_to_triplet(&g);
        assert_eq!(rgb.dims(), g.dims());
        for (p, &v) in rgb.pixels().zip(g.pixels()) {
            assert_eq!(p, [v, v, v]);
        }
    }

    #[test]
    fn luma_values() {
        assert_eq!(luma(255, 255, 255), 255);
        assert_eq!(luma(0, 0, 0), 0);
        // 0.299*100 + 0.587*150 + 0.114*200 = 140.75
        assert_eq!(luma(100, 150, 200), 141);
        // 0.114 * 250 = 28.5, half rounds up
        assert_eq!(luma(0, 0, 250), 29);
        assert_eq!(luma(5, 0, 0), 1);
    }

    #[test]
    fn gray_round_trip_exhaustive() {
        for v in 0..=255u8 {
            assert_eq!(luma(v, v, v), v);
        }
    }

    #[test]
    fn policy_table() {
        use SurrogateAction::*;
        let cases = [
            (Task::DroneDetection, ModalitySet::BOTH, None, None),
            (Task::DroneDetection, ModalitySet::IR, WhitePlaceholder, None),
            (Task::DroneDetection, ModalitySet::RGB, None, WhitePlaceholder),
            (Task::PayloadIdentification, ModalitySet::BOTH, None, None),
            (Task::PayloadIdentification, ModalitySet::RGB, None, GraySurrogate),
            (Task::PayloadIdentification, ModalitySet::IR, TripletReplicate, None),
        ];
        for (task, avail, rgb, ir) in cases {
            let p = resolve_policy(task, avail).unwrap();
            assert_eq!((p.rgb, p.ir), (rgb, ir), "{task} {avail:?}");
            for m in Modality::ALL {
                assert_eq!(p.covers(m), !avail.contains(m));
            }
        }
        assert_eq!(
            resolve_policy(Task::DroneDetection, ModalitySet::default()),
            Err(ModalityError::NothingAvailable)
        );
    }

    #[test]
    fn materialize_inputs() {
        let ir = GrayImage::new(2, 1, vec![10, 200]).unwrap();
        let p = resolve_policy(Task::PayloadIdentification, ModalitySet::IR).unwrap();
        let (rgb, ir_out) = p.materialize(None, Some(&ir)).unwrap();
        assert_eq!(rgb.raw(), &[10, 10, 10, 200, 200, 200]);
        assert_eq!(ir_out, ir);

        let p = resolve_policy(Task::DroneDetection, ModalitySet::IR).unwrap();
        let (rgb, _) = p.materialize(None, Some(&ir)).unwrap();
        assert_eq!(rgb, white_placeholder(ir.dims()));

        let color = RgbImage::new(1, 1, vec![100, 150, 200]).unwrap();
        let p = resolve_policy(Task::PayloadIdentification, ModalitySet::RGB).unwrap();
        let (_, gray) = p.materialize(Some(&color), None).unwrap();
        assert_eq!(gray.pixels(), &[141]);

        let p = resolve_policy(Task::DroneDetection, ModalitySet::RGB).unwrap();
        let (_, gray) = p.materialize(Some(&color), None).unwrap();
        assert_eq!(gray.pixels(), &[255]);
        assert!(p.materialize(None, None).is_err());
    }

    #[test]
    fn white_is_fixed_point() {
        let w = white_placeholder(dims(5, 3));
        assert_eq!(replicate_gray_to_triplet(&rgb_to_gray_surrogate(&w)), w);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn gray_triplet_gray_identity(w in 1u32..12, h in 1u32..12, px in prop::collection::vec(any::<u8>(), 144)) {
                let n = (w * h) as usize;
                let g = GrayImage::new(w, h, px[..n].to_vec()).unwrap();
                prop_assert_eq!(rgb_to_gray_surrogate(&replicate_gray_to_triplet(&g)), g);
            }
        }
    }
}

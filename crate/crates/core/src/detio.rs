//! Detection-log ingest, PGM frame I/O and tracking CSV output.
//!
//! Detection log: one tab-separated record per line,
//! `frame_index modality class_id class_name confidence x1 y1 x2 y2`.
//! Blank lines and lines starting with `#` are skipped.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, BufRead, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, FrameDims};

#[derive(Debug, Error)]
pub enum DetioError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("malformed PGM header: {0}")]
    BadHeader(String),
    #[error("PGM payload truncated: expected {expected} samples, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("PGM sample {value} exceeds maxval {maxval}")]
    SampleRange { value: u32, maxval: u32 },
    #[error("image buffer holds {found} values, {width}x{height} needs {expected}")]
    DimensionMismatch {
        width: u32,
        height: u32,
        expected: usize,
        found: usize,
    },
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn parse_err(line: usize, msg: impl Into<String>) -> DetioError {
    DetioError::Parse {
        line,
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "RGB")]
    Rgb,
    #[serde(rename = "IR")]
    Ir,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Rgb, Modality::Ir];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Rgb => "RGB",
            Modality::Ir => "IR",
        }
    }

    pub fn other(self) -> Modality {
        match self {
            Modality::Rgb => Modality::Ir,
            Modality::Ir => Modality::Rgb,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "RGB" => Ok(Modality::Rgb),
            "IR" => Ok(Modality::Ir),
            other => Err(format!("unknown modality {other:?} (expected RGB or IR)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame_index: u64,
    pub modality: Modality,
    pub class_id: i32,
    pub class_name: String,
    pub confidence: f64,
    pub bbox: BBox,
}

/// All detections observed on one frame, split by modality.
///
/// `None` means the modality produced no list for this frame; `Some(vec![])`
/// means the stream was present and the detector found nothing.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameDetections {
    pub frame_index: u64,
    pub rgb: Option<Vec<DetectionRecord>>,
    pub ir: Option<Vec<DetectionRecord>>,
}

impl FrameDetections {
    pub fn empty(frame_index: u64) -> Self {
        Self {
            frame_index,
            rgb: None,
            ir: None,
        }
    }

    pub fn get(&self, m: Modality) -> Option<&[DetectionRecord]> {
        match m {
            Modality::Rgb => self.rgb.as_deref(),
            Modality::Ir => self.ir.as_deref(),
        }
    }

    pub fn slot_mut(&mut self, m: Modality) -> &mut Option<Vec<DetectionRecord>> {
        match m {
            Modality::Rgb => &mut self.rgb,
            Modality::Ir => &mut self.ir,
        }
    }

    pub fn records(&self) -> impl Iterator<Item = &DetectionRecord> {
        self.rgb.iter().chain(self.ir.iter()).flatten()
    }

    pub fn is_empty(&self) -> bool {
        self.records().next().is_none()
    }
}

fn parse_field<T: FromStr>(line: usize, name: &str, s: &str) -> Result<T, DetioError> {
    s.parse()
        .map_err(|_| parse_err(line, format!("invalid {name} {s:?}")))
}

fn parse_record(line: usize, text: &str) -> Result<DetectionRecord, DetioError> {
    let fields: Vec<&str> = text.split('\t').collect();
    if fields.len() != 9 {
        return Err(parse_err(
            line,
            format!("expected 9 tab-separated fields, found {}", fields.len()),
        ));
    }
    let frame_index: u64 = parse_field(line, "frame_index", fields[0])?;
    let modality = Modality::from_str(fields[1]).map_err(|m| parse_err(line, m))?;
    let class_id: i32 = parse_field(line, "class_id", fields[2])?;
    let class_name = fields[3].to_string();
    if class_name.is_empty() {
        return Err(parse_err(line, "empty class_name"));
    }
    let confidence: f64 = parse_field(line, "confidence", fields[4])?;
    if !(0.0..=1.0).contains(&confidence) {
        return Err(parse_err(
            line,
            format!("confidence {confidence} outside [0, 1]"),
        ));
    }
    let mut c = [0.0f64; 4];
    for (i, name) in ["x1", "y1", "x2", "y2"].iter().enumerate() {
        c[i] = parse_field(line, name, fields[5 + i])?;
    }
    let bbox = BBox::new(c[0], c[1], c[2], c[3]).map_err(|e| parse_err(line, e.to_string()))?;
    Ok(DetectionRecord {
        frame_index,
        modality,
        class_id,
        class_name,
        confidence,
        bbox,
    })
}

/// Reads a detection log, grouping records by frame and modality.
///
/// Records of one frame must be contiguous and frame indices non-decreasing.
pub fn parse_detection_log<R: BufRead>(input: R) -> Result<Vec<FrameDetections>, DetioError> {
    let mut frames: Vec<FrameDetections> = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let text = line.strip_suffix('\r').unwrap_or(&line);
        if text.trim().is_empty() || text.starts_with('#') {
            continue;
        }
        let rec = parse_record(lineno, text)?;
        match frames.last() {
            Some(last) if rec.frame_index < last.frame_index => {
                return Err(parse_err(
                    lineno,
                    format!(
                        "frame_index {} decreases (previous {})",
                        rec.frame_index, last.frame_index
                    ),
                ));
            }
            Some(last) if rec.frame_index == last.frame_index => {}
            _ => frames.push(FrameDetections::empty(rec.frame_index)),
        }
        let frame = frames.last_mut().expect("frame pushed above");
        frame.slot_mut(rec.modality).get_or_insert_with(Vec::new).push(rec);
    }
    Ok(frames)
}

pub fn read_detection_log(path: &Path) -> Result<Vec<FrameDetections>, DetioError> {
    let f = std::fs::File::open(path).map_err(|source| DetioError::File {
        path: path.to_path_buf(),
        source,
    })?;
    parse_detection_log(io::BufReader::new(f))
}

/// Writes frames in log format, RGB records before IR within a frame.
///
/// Empty per-modality lists produce no lines, so they read back as absent.
pub fn write_detection_log<W: Write>(
    mut out: W,
    frames: &[FrameDetections],
) -> Result<(), DetioError> {
    for frame in frames {
        for rec in frame.records() {
            let b = rec.bbox;
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                rec.frame_index,
                rec.modality,
                rec.class_id,
                rec.class_name,
                rec.confidence,
                b.x1(),
                b.y1(),
                b.x2(),
                b.y2()
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Merges independently parsed logs into one frame sequence.
///
/// Every modality in `present` gets `Some(..)` on every frame (possibly
/// empty), since a frame missing from a log means the detector saw nothing.
pub fn merge_logs(
    logs: &[Vec<FrameDetections>],
    present: &[Modality],
) -> Vec<FrameDetections> {
    let mut by_frame: BTreeMap<u64, FrameDetections> = BTreeMap::new();
    for log in logs {
        for frame in log {
            let slot = by_frame
                .entry(frame.frame_index)
                .or_insert_with(|| FrameDetections::empty(frame.frame_index));
            for m in Modality::ALL {
                if let Some(recs) = frame.get(m) {
                    slot.slot_mut(m)
                        .get_or_insert_with(Vec::new)
                        .extend_from_slice(recs);
                }
            }
        }
    }
    let mut merged: Vec<FrameDetections> = by_frame.into_values().collect();
    for frame in &mut merged {
        for &m in present {
            frame.slot_mut(m).get_or_insert_with(Vec::new);
        }
    }
    merged
}

/// 8-bit single-channel image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, DetioError> {
        let expected = width as usize * height as usize;
        if data.len() != expected || expected == 0 {
            return Err(DetioError::DimensionMismatch {
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

    pub fn filled(dims: FrameDims, value: u8) -> Self {
        Self {
            width: dims.width,
            height: dims.height,
            data: vec![value; dims.pixel_count()],
        }
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

    pub fn pixels(&self) -> &[u8] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    /// Pixel-exact 90 degree clockwise rotation; width and height swap.
    pub fn rotate90_cw(&self) -> GrayImage {
        let (w, h) = (self.width as usize, self.height as usize);
        let mut out = vec![0u8; w * h];
        // Source (x, y) lands at (h - 1 - y, x) in an h-wide image.
        for y in 0..h {
            for x in 0..w {
                out[x * h + (h - 1 - y)] = self.data[y * w + x];
            }
        }
        GrayImage {
            width: self.height,
            height: self.width,
            data: out,
        }
    }

    pub fn mirror_horizontal(&self) -> GrayImage {
        let w = self.width as usize;
        let mut data = self.data.clone();
        for row in data.chunks_exact_mut(w) {
            row.reverse();
        }
        GrayImage {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

// Header tokenizer shared by P2 and P5: whitespace-separated tokens with
// `#` comments running to end of line.
struct PnmCursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> PnmCursor<'a> {
    fn skip_ws_and_comments(&mut self) {
        while self.pos < self.buf.len() {
            match self.buf[self.pos] {
                b'#' => {
                    while self.pos < self.buf.len() && self.buf[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn next_uint(&mut self, what: &str) -> Result<Option<u32>, DetioError> {
        self.skip_ws_and_comments();
        let start = self.pos;
        while self.pos < self.buf.len() && self.buf[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            if self.pos >= self.buf.len() {
                return Ok(None);
            }
            return Err(DetioError::BadHeader(format!("expected {what}")));
        }
        let s = std::str::from_utf8(&self.buf[start..self.pos]).expect("ascii digits");
        s.parse()
            .map(Some)
            .map_err(|_| DetioError::BadHeader(format!("{what} {s} out of range")))
    }

    fn header_uint(&mut self, what: &str) -> Result<u32, DetioError> {
        self.next_uint(what)?
            .ok_or_else(|| DetioError::BadHeader(format!("missing {what}")))
    }
}

/// Decodes a P5 (binary) or P2 (ASCII) PGM with maxval 255.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage, DetioError> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(DetioError::UnsupportedFormat("missing P magic".into()));
    }
    let binary = match bytes[1] {
        b'5' => true,
        b'2' => false,
        other => {
            return Err(DetioError::UnsupportedFormat(format!(
                "magic P{} is not a grayscale PGM",
                other as char
            )))
        }
    };
    let mut cur = PnmCursor { buf: bytes, pos: 2 };
    let width = cur.header_uint("width")?;
    let height = cur.header_uint("height")?;
    let maxval = cur.header_uint("maxval")?;
    if width == 0 || height == 0 {
        return Err(DetioError::BadHeader(format!("zero dimension {width}x{height}")));
    }
    if maxval != 255 {
        return Err(DetioError::UnsupportedFormat(format!(
            "maxval {maxval}, only 255 is accepted"
        )));
    }
    let expected = width as usize * height as usize;
    let data = if binary {
        // Exactly one whitespace byte separates the header from the raster.
        let start = cur.pos + 1;
        if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
            return Err(DetioError::Truncated { expected, found: 0 });
        }
        let payload = &bytes[start..];
        if payload.len() < expected {
            return Err(DetioError::Truncated {
                expected,
                found: payload.len(),
            });
        }
        payload[..expected].to_vec()
    } else {
        let mut data = Vec::with_capacity(expected);
        while data.len() < expected {
            match cur.next_uint("sample")? {
                Some(v) if v <= maxval => data.push(v as u8),
                Some(v) => return Err(DetioError::SampleRange { value: v, maxval }),
                None => {
                    return Err(DetioError::Truncated {
                        expected,
                        found: data.len(),
                    })
                }
            }
        }
        data
    };
    GrayImage::new(width, height, data)
}

pub fn read_pgm(path: &Path) -> Result<GrayImage, DetioError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| DetioError::File {
            path: path.to_path_buf(),
            source,
        })?;
    decode_pgm(&bytes)
}

/// Binary P5 encoding.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<(), DetioError> {
    std::fs::write(path, encode_pgm(img)).map_err(|source| DetioError::File {
        path: path.to_path_buf(),
        source,
    })
}

pub fn frame_file_name(stem: &str, frame_index: u64) -> String {
    format!("{stem}_{frame_index:06}.pgm")
}

/// Indexes `<stem>_<frame_index>.pgm` files in `dir` by frame index.
pub fn scan_frames_dir(dir: &Path) -> Result<BTreeMap<u64, PathBuf>, DetioError> {
    let mut frames = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|source| DetioError::File {
        path: dir.to_path_buf(),
        source,
    })?;
    for entry in entries {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("pgm") {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        let Some((_, idx)) = stem.rsplit_once('_') else {
            continue;
        };
        if let Ok(i) = idx.parse::<u64>() {
            frames.insert(i, path);
        }
    }
    Ok(frames)
}

pub const TRACKING_CSV_HEADER: &str = "frame,track_id,class,x1,y1,x2,y2,conf,direction,dir_conf";

/// One output row: a track's state on one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackRow {
    pub frame_index: u64,
    pub track_id: u64,
    pub class_name: String,
    pub bbox: BBox,
    pub confidence: f64,
    /// Combined label such as `NE/approaching`.
    pub direction: String,
    pub direction_confidence: f64,
}

/// Streams tracking rows as CSV, header first.
pub struct TrackingCsvWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> TrackingCsvWriter<W> {
    pub fn new(out: W) -> io::Result<Self> {
        let mut inner = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        inner.write_record(TRACKING_CSV_HEADER.split(','))?;
        Ok(Self { inner })
    }

    pub fn write_row(&mut self, r: &TrackRow) -> io::Result<()> {
        let f3 = |v: f64| format!("{v:.3}");
        self.inner.write_record([
            r.frame_index.to_string(),
            r.track_id.to_string(),
            r.class_name.clone(),
            f3(r.bbox.x1()),
            f3(r.bbox.y1()),
            f3(r.bbox.x2()),
            f3(r.bbox.y2()),
            f3(r.confidence),
            r.direction.clone(),
            f3(r.direction_confidence),
        ])?;
        Ok(())
    }

    /// Flushes and hands back the underlying writer.
    pub fn into_inner(self) -> io::Result<W> {
        self.inner.into_inner().map_err(|e| e.into_error())
    }
}

pub fn write_tracking_csv<W: Write>(out: W, rows: &[TrackRow]) -> Result<(), DetioError> {
    let mut w = TrackingCsvWriter::new(out)?;
    for r in rows {
        w.write_row(r)?;
    }
    w.into_inner()?.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> DetioError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    parse_err(line, e.to_string())
}

/// Reads rows written by [`write_tracking_csv`]. Values keep their 3-decimal rounding.
pub fn parse_tracking_csv<R: Read>(input: R) -> Result<Vec<TrackRow>, DetioError> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader.headers().map_err(csv_err)?;
    if !header.iter().eq(TRACKING_CSV_HEADER.split(',')) {
        return Err(parse_err(1, "missing tracking CSV header"));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let f = record.map_err(csv_err)?;
        let lineno = f.position().map_or(0, |p| p.line() as usize);
        let c: Vec<f64> = (3..8)
            .map(|i| parse_field(lineno, "number", &f[i]))
            .collect::<Result<_, _>>()?;
        rows.push(TrackRow {
            frame_index: parse_field(lineno, "frame", &f[0])?,
            track_id: parse_field(lineno, "track_id", &f[1])?,
            class_name: f[2].to_string(),
            bbox: BBox::new(c[0], c[1], c[2], c[3])
                .map_err(|e| parse_err(lineno, e.to_string()))?,
            confidence: c[4],
            direction: f[8].to_string(),
            direction_confidence: parse_field(lineno, "dir_conf", &f[9])?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(frame: u64, m: Modality, conf: f64) -> DetectionRecord {
        DetectionRecord {
            frame_index: frame,
            modality: m,
            class_id: 0,
            class_name: "drone".into(),
            confidence: conf,
            bbox: BBox::new(1.0, 2.0, 11.5, 12.25).unwrap(),
        }
    }

    fn round_trip(frames: &[FrameDetections]) -> Vec<FrameDetections> {
        let mut buf = Vec::new();
        write_detection_log(&mut buf, frames).unwrap();
        parse_detection_log(buf.as_slice()).unwrap()
    }

    #[test]
    fn empty_log() {
        assert!(parse_detection_log(&b""[..]).unwrap().is_empty());
        let mut buf = Vec::new();
        write_detection_log(&mut buf, &[]).unwrap();
        assert!(buf.is_empty());
    }

    #[test]
    fn two_frames_round_trip() {
        let frames = vec![
            FrameDetections {
                frame_index: 0,
                rgb: Some(vec![rec(0, Modality::Rgb, 0.5)]),
                ir: None,
            },
            FrameDetections {
                frame_index: 1,
                rgb: Some(vec![rec(1, Modality::Rgb, 0.75)]),
                ir: None,
            },
        ];
        let back = round_trip(&frames);
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].records().count(), 1);
        assert_eq!(back, frames);
    }

    #[test]
    fn both_modalities_share_frame_index() {
        let frames = vec![FrameDetections {
            frame_index: 7,
            rgb: Some(vec![rec(7, Modality::Rgb, 0.5)]),
            ir: Some(vec![rec(7, Modality::Ir, 0.6)]),
        }];
        let mut buf = Vec::new();
        write_detection_log(&mut buf, &frames).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("7\tRGB\t"));
        assert!(lines[1].starts_with("7\tIR\t"));
    }

    #[test]
    fn comments_and_blank_lines_skipped() {
        let log = "# header\n\n3\tIR\t1\tbird\t0.4\t0\t0\t4\t4\n";
        let frames = parse_detection_log(log.as_bytes()).unwrap();
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].ir.as_ref().unwrap()[0].class_name, "bird");
    }

    #[test]
    fn parse_errors_name_the_line() {
        let bad_conf = "0\tRGB\t0\tdrone\t0.5\t0\t0\t4\t4\n1\tRGB\t0\tdrone\t1.5\t0\t0\t4\t4\n";
        match parse_detection_log(bad_conf.as_bytes()) {
            Err(DetioError::Parse { line: 2, msg }) => assert!(msg.contains("confidence")),
            other => panic!("unexpected {other:?}"),
        }
        let inverted = "0\tRGB\t0\tdrone\t0.5\t5\t0\t4\t4\n";
        assert!(matches!(
            parse_detection_log(inverted.as_bytes()),
            Err(DetioError::Parse { line: 1, .. })
        ));
        let decreasing = "5\tRGB\t0\tdrone\t0.5\t0\t0\t4\t4\n4\tRGB\t0\tdrone\t0.5\t0\t0\t4\t4\n";
        assert!(matches!(
            parse_detection_log(decreasing.as_bytes()),
            Err(DetioError::Parse { line: 2, .. })
        ));
        let short = "0\tRGB\t0\tdrone\t0.5\n";
        assert!(matches!(
            parse_detection_log(short.as_bytes()),
            Err(DetioError::Parse { line: 1, .. })
        ));
        let bad_mod = "0\tUV\t0\tdrone\t0.5\t0\t0\t4\t4\n";
        assert!(parse_detection_log(bad_mod.as_bytes()).is_err());
        let no_class = "0\tRGB\t0\t\t0.5\t0\t0\t4\t4\n";
        assert!(parse_detection_log(no_class.as_bytes()).is_err());
    }

    #[test]
    fn merge_fills_present_modalities() {
        let rgb = vec![FrameDetections {
            frame_index: 2,
            rgb: Some(vec![rec(2, Modality::Rgb, 0.5)]),
            ir: None,
        }];
        let ir = vec![FrameDetections {
            frame_index: 0,
            rgb: None,
            ir: Some(vec![rec(0, Modality::Ir, 0.5)]),
        }];
        let merged = merge_logs(&[rgb, ir], &[Modality::Rgb, Modality::Ir]);
        assert_eq!(merged.len(), 2);
        assert_eq!(merged[0].frame_index, 0);
        assert_eq!(merged[0].rgb.as_deref(), Some(&[][..]));
        assert_eq!(merged[1].ir.as_deref(), Some(&[][..]));
    }

    #[test]
    fn pgm_binary_fixture() {
        let bytes = b"P5\n2 2\n255\n\x00\x55\xaa\xff";
        let img = decode_pgm(bytes).unwrap();
        assert_eq!((img.width(), img.height()), (2, 2));
        assert_eq!(img.pixels(), &[0, 85, 170, 255]);
        assert_eq!(encode_pgm(&img), bytes.to_vec());
    }

    #[test]
    fn pgm_ascii_with_comments() {
        let img = decode_pgm(b"P2\n# made by hand\n2 2\n255\n0 85\n170 255\n").unwrap();
        assert_eq!(img.pixels(), &[0, 85, 170, 255]);
        let one = decode_pgm(b"P2 1 1 255 0").unwrap();
        assert_eq!(one.pixels(), &[0]);
    }

    #[test]
    fn pgm_errors() {
        assert!(matches!(
            decode_pgm(b"P7\n1 1\n255\n\x00"),
            Err(DetioError::UnsupportedFormat(_))
        ));
        assert!(matches!(
            decode_pgm(b"P5\n2 2\n255\n\x00\x01"),
            Err(DetioError::Truncated {
                expected: 4,
                found: 2
            })
        ));
        assert!(matches!(
            decode_pgm(b"P2\n2 2\n255\n0 1 2"),
            Err(DetioError::Truncated { .. })
        ));
        assert!(matches!(
            decode_pgm(b"P2\n1 1\n255\n300"),
            Err(DetioError::SampleRange { .. })
        ));
        assert!(matches!(
            decode_pgm(b"P5\n1 1\n65535\n\x00\x00"),
            Err(DetioError::UnsupportedFormat(_))
        ));
        assert!(matches!(
            decode_pgm(b"P5\nx 1\n255\n\x00"),
            Err(DetioError::BadHeader(_))
        ));
        assert!(GrayImage::new(2, 2, vec![0; 3]).is_err());
    }

    #[test]
    fn image_rotation_matches_box_rotation() {
        let dims = FrameDims::new(4, 3).unwrap();
        let mut img = GrayImage::filled(dims, 0);
        // Pixel (1, 0) lit; as a box that's [1,2]x[0,1].
        img.pixels_mut()[1] = 9;
        let rot = img.rotate90_cw();
        assert_eq!((rot.width(), rot.height()), (3, 4));
        let b = BBox::new(1.0, 0.0, 2.0, 1.0).unwrap().rotate90_cw(dims);
        assert_eq!(rot.get(b.x1() as u32, b.y1() as u32), 9);
        let m = img.mirror_horizontal();
        let b = BBox::new(1.0, 0.0, 2.0, 1.0).unwrap().mirror_horizontal(dims);
        assert_eq!(m.get(b.x1() as u32, b.y1() as u32), 9);
    }

    #[test]
    fn tracking_csv_format() {
        let mut buf = Vec::new();
        write_tracking_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{TRACKING_CSV_HEADER}\n"));

        let row = TrackRow {
            frame_index: 3,
            track_id: 1,
            class_name: "drone".into(),
            bbox: BBox::new(1.0, 2.0, 3.5, 4.25).unwrap(),
            confidence: 0.9,
            direction: "E/approaching".into(),
            direction_confidence: 0.6,
        };
        let mut buf = Vec::new();
        write_tracking_csv(&mut buf, std::slice::from_ref(&row)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1].split(',').count(), 10);
        assert_eq!(
            lines[1],
            "3,1,drone,1.000,2.000,3.500,4.250,0.900,E/approaching,0.600"
        );
        let back = parse_tracking_csv(text.as_bytes()).unwrap();
        assert_eq!(back, vec![row.clone()]);

        let odd = TrackRow {
            class_name: "drone, \"large\"".into(),
            ..row
        };
        let mut buf = Vec::new();
        write_tracking_csv(&mut buf, std::slice::from_ref(&odd)).unwrap();
        assert_eq!(parse_tracking_csv(buf.as_slice()).unwrap(), vec![odd]);
    }

    #[test]
    fn tracking_csv_rejects_bad_input() {
        assert!(parse_tracking_csv(&b"frame,track\n"[..]).is_err());
        let short = format!("{TRACKING_CSV_HEADER}\n1,2,drone\n");
        assert!(parse_tracking_csv(short.as_bytes()).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn record(frame: u64, m: Modality) -> impl Strategy<Value = DetectionRecord> {
            (
                -5i32..20,
                prop::sample::select(vec!["drone", "bird", "harmful", "normal"]),
                0.0f64..=1.0,
                -50.0f64..400.0,
                -50.0f64..300.0,
                0.01f64..80.0,
                0.01f64..80.0,
            )
                .prop_map(move |(class_id, name, conf, x, y, w, h)| DetectionRecord {
                    frame_index: frame,
                    modality: m,
                    class_id,
                    class_name: name.to_string(),
                    confidence: conf,
                    bbox: BBox::new(x, y, x + w, y + h).unwrap(),
                })
        }

        fn frame(idx: u64) -> impl Strategy<Value = FrameDetections> {
            (
                prop::option::of(prop::collection::vec(record(idx, Modality::Rgb), 1..4)),
                prop::option::of(prop::collection::vec(record(idx, Modality::Ir), 1..4)),
            )
                .prop_filter("frame needs a record", |(r, i)| r.is_some() || i.is_some())
                .prop_map(move |(rgb, ir)| FrameDetections {
                    frame_index: idx,
                    rgb,
                    ir,
                })
        }

        fn frames() -> impl Strategy<Value = Vec<FrameDetections>> {
            prop::collection::vec(1u64..5, 0..100).prop_flat_map(|steps| {
                let mut idx = 0;
                let strategies: Vec<_> = steps
                    .into_iter()
                    .map(|s| {
                        idx += s;
                        frame(idx)
                    })
                    .collect();
                strategies
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn log_round_trip(frames in frames()) {
                prop_assert_eq!(round_trip(&frames), frames);
            }

            #[test]
            fn pgm_round_trip(w in 1u32..20, h in 1u32..20, seed in any::<u64>()) {
                let data: Vec<u8> = (0..w * h).map(|i| (seed.wrapping_mul(i as u64 + 7) >> 13) as u8).collect();
                let img = GrayImage::new(w, h, data).unwrap();
                let back = decode_pgm(&encode_pgm(&img)).unwrap();
                prop_assert_eq!(back.pixels(), img.pixels());
                prop_assert_eq!(&back, &img);
            }
        }
    }
}

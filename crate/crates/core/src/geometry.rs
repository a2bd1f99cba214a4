//! Box arithmetic, IoU and letterbox mapping between native frame space and
//! detector input space.
//!
//! Boxes are corner-form `(x1, y1, x2, y2)` in native frame pixels. Any
//! conversion to or from detector space goes through [`LetterboxTransform`].

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("non-finite box coordinate in ({x1}, {y1}, {x2}, {y2})")]
    NonFinite { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("degenerate box ({x1}, {y1}, {x2}, {y2}): need x1 < x2 and y1 < y2")]
    Degenerate { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("frame dimensions must be positive, got {width}x{height}")]
    EmptyFrame { width: u32, height: u32 },
}

/// A point in pixel coordinates (+x right, +y down).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }
}

impl std::ops::Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        Point::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl std::ops::Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        Point::new(self.x + rhs.x, self.y + rhs.y)
    }
}

/// Axis-aligned box with strictly positive width and height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    /// Validates and builds a box. Zero-area and inverted boxes are rejected.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        if !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
            return Err(GeometryError::NonFinite { x1, y1, x2, y2 });
        }
        if !(x1 < x2 && y1 < y2) {
            return Err(GeometryError::Degenerate { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Box of the given size centred on `center`.
    pub fn from_center(center: Point, width: f64, height: f64) -> Result<Self, GeometryError> {
        Self::new(
            center.x - width / 2.0,
            center.y - height / 2.0,
            center.x + width / 2.0,
            center.y + height / 2.0,
        )
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn centroid(&self) -> Point {
        Point::new((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    /// Area of the overlap; zero when the boxes only touch.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        if inter == 0.0 {
            return 0.0;
        }
        if self == other {
            return 1.0;
        }
        let union = self.area() + other.area() - inter;
        (inter / union).clamp(0.0, 1.0)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    /// True when the box lies inside `[0, w] x [0, h]`.
    pub fn within(&self, dims: FrameDims) -> bool {
        self.x1 >= 0.0
            && self.y1 >= 0.0
            && self.x2 <= f64::from(dims.width)
            && self.y2 <= f64::from(dims.height)
    }

    /// Clips the box to the frame; `None` if nothing with positive area remains.
    pub fn clip_to(&self, dims: FrameDims) -> Option<BBox> {
        BBox::new(
            self.x1.max(0.0),
            self.y1.max(0.0),
            self.x2.min(f64::from(dims.width)),
            self.y2.min(f64::from(dims.height)),
        )
        .ok()
    }

    /// The box after rotating a `frame`-sized scene 90 degrees clockwise.
    /// The rotated frame has swapped dimensions.
    pub fn rotate90_cw(&self, frame: FrameDims) -> BBox {
        let h = f64::from(frame.height);
        BBox {
            x1: h - self.y2,
            y1: self.x1,
            x2: h - self.y1,
            y2: self.x2,
        }
    }

    /// The box after mirroring a `frame`-sized scene left to right.
    pub fn mirror_horizontal(&self, frame: FrameDims) -> BBox {
        let w = f64::from(frame.width);
        BBox {
            x1: w - self.x2,
            y1: self.y1,
            x2: w - self.x1,
            y2: self.y2,
        }
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = GeometryError;
    fn try_from(c: [f64; 4]) -> Result<Self, Self::Error> {
        BBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.x1, self.y1, self.x2, self.y2)
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    a.iou(b)
}

pub fn area(b: &BBox) -> f64 {
    b.area()
}

pub fn centroid(b: &BBox) -> Point {
    b.centroid()
}

/// Frame size in whole pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameDims {
    pub width: u32,
    pub height: u32,
}

impl FrameDims {
    /// Native sensor resolution.
    pub const NATIVE: FrameDims = FrameDims {
        width: 320,
        height: 256,
    };
    /// Square detector input resolution.
    pub const DETECTOR: FrameDims = FrameDims {
        width: 320,
        height: 320,
    };

    pub fn new(width: u32, height: u32) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::EmptyFrame { width, height });
        }
        Ok(Self { width, height })
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn transposed(&self) -> FrameDims {
        FrameDims {
            width: self.height,
            height: self.width,
        }
    }
}

impl Default for FrameDims {
    fn default() -> Self {
        Self::NATIVE
    }
}

/// Aspect-preserving scale followed by symmetric padding.
///
/// `forward` maps native frame coordinates into detector space and `inverse`
/// maps detector output back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LetterboxTransform {
    pub scale: f64,
    pub pad_x: f64,
    pub pad_y: f64,
}

impl LetterboxTransform {
    pub fn forward(&self, p: Point) -> Point {
        Point::new(p.x * self.scale + self.pad_x, p.y * self.scale + self.pad_y)
    }

    pub fn inverse(&self, p: Point) -> Point {
        Point::new((p.x - self.pad_x) / self.scale, (p.y - self.pad_y) / self.scale)
    }

    pub fn forward_box(&self, b: &BBox) -> Result<BBox, GeometryError> {
        let p1 = self.forward(Point::new(b.x1, b.y1));
        let p2 = self.forward(Point::new(b.x2, b.y2));
        BBox::new(p1.x, p1.y, p2.x, p2.y)
    }

    pub fn inverse_box(&self, b: &BBox) -> Result<BBox, GeometryError> {
        let p1 = self.inverse(Point::new(b.x1, b.y1));
        let p2 = self.inverse(Point::new(b.x2, b.y2));
        BBox::new(p1.x, p1.y, p2.x, p2.y)
    }
}

pub fn letterbox_for(src: FrameDims, dst: FrameDims) -> LetterboxTransform {
    let (sw, sh) = (f64::from(src.width), f64::from(src.height));
    let (dw, dh) = (f64::from(dst.width), f64::from(dst.height));
    let scale = (dw / sw).min(dh / sh);
    LetterboxTransform {
        scale,
        pad_x: ((dw - sw * scale) / 2.0).max(0.0),
        pad_y: ((dh - sh * scale) / 2.0).max(0.0),
    }
}

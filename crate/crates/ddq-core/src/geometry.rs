//! Axis-aligned box arithmetic: IoU, GIoU, pairwise overlap matrices and
//! format conversion. Boxes are half-open real intervals, so
//! `area = (x2 - x1) * (y2 - y1)` with no pixel "+1" convention.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Axis-aligned box in pixel coordinates with `x1 <= x2` and `y1 <= y2`.
///
/// Zero-area boxes are valid data (see [`BBox::is_degenerate`]); they score
/// IoU 0 against everything instead of erroring so that noisy inputs cannot
/// crash a pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    /// Validating constructor: coordinates must be finite and ordered.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
            return Err(Error::InvalidBox(format!(
                "non-finite coordinates ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        if x1 > x2 || y1 > y2 {
            return Err(Error::InvalidBox(format!(
                "unordered corners ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn from_corners(c: [f64; 4]) -> Result<Self> {
        Self::new(c[0], c[1], c[2], c[3])
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
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

    /// A box is degenerate when it encloses no area.
    pub fn is_degenerate(&self) -> bool {
        self.area() <= 0.0
    }

    /// Center form `(cx, cy, w, h)`.
    pub fn center_form(&self) -> [f64; 4] {
        [
            0.5 * (self.x1 + self.x2),
            0.5 * (self.y1 + self.y2),
            self.width(),
            self.height(),
        ]
    }

    pub fn from_center_form(c: [f64; 4]) -> Result<Self> {
        let [cx, cy, w, h] = c;
        if w < 0.0 || h < 0.0 {
            return Err(Error::InvalidBox(format!("negative extent ({w}, {h})")));
        }
        Self::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
    }

    /// Clamp all coordinates into `[0, w] x [0, h]`.
    pub fn clip(&self, w: f64, h: f64) -> BBox {
        BBox {
            x1: self.x1.clamp(0.0, w),
            y1: self.y1.clamp(0.0, h),
            x2: self.x2.clamp(0.0, w),
            y2: self.y2.clamp(0.0, h),
        }
    }
}

/// Intersection area of two boxes; 0 when they do not overlap.
pub fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    iw * ih
}

/// Intersection over union. Degenerate boxes give 0 against anything;
/// a zero-area union gives 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Generalized IoU: `iou - (enclosing - union) / enclosing`, in `[-1, 1]`.
///
/// Errors when both boxes are degenerate (the enclosing term is undefined).
pub fn giou(a: &BBox, b: &BBox) -> Result<f64> {
    if a.is_degenerate() && b.is_degenerate() {
        return Err(Error::InvalidBox(
            "giou of two degenerate boxes is undefined".into(),
        ));
    }
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    let enc_w = a.x2.max(b.x2) - a.x1.min(b.x1);
    let enc_h = a.y2.max(b.y2) - a.y1.min(b.y1);
    let enclosing = enc_w * enc_h;
    let iou_term = if union <= 0.0 { 0.0 } else { inter / union };
    if enclosing <= 0.0 {
        // Only possible when one box has zero area and lies on the other's
        // zero-extent axis; the penalty term vanishes.
        return Ok(iou_term);
    }
    Ok(iou_term - (enclosing - union) / enclosing)
}

/// Ordered boxes with optional parallel scores.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoxList {
    boxes: Vec<BBox>,
    scores: Option<Vec<f64>>,
}

impl BoxList {
    pub fn new(boxes: Vec<BBox>) -> Self {
        Self {
            boxes,
            scores: None,
        }
    }

    pub fn with_scores(boxes: Vec<BBox>, scores: Vec<f64>) -> Result<Self> {
        if boxes.len() != scores.len() {
            return Err(Error::LengthMismatch {
                what: "scores",
                expected: boxes.len(),
                got: scores.len(),
            });
        }
        if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::InvalidArgument(format!(
                "score {s} outside the unit interval"
            )));
        }
        Ok(Self {
            boxes,
            scores: Some(scores),
        })
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn boxes(&self) -> &[BBox] {
        &self.boxes
    }

    pub fn scores(&self) -> Option<&[f64]> {
        self.scores.as_deref()
    }

    pub fn get(&self, i: usize) -> &BBox {
        &self.boxes[i]
    }
}

/// IoU matrix of shape `|a| x |b|`.
pub fn pairwise_iou(a: &BoxList, b: &BoxList) -> Matrix {
    let mut m = Matrix::zeros(a.len(), b.len());
    for (i, ba) in a.boxes().iter().enumerate() {
        for (j, bb) in b.boxes().iter().enumerate() {
            m.set(i, j, iou(ba, bb));
        }
    }
    m
}

/// Mean absolute difference of the two boxes in center form, with each
/// coordinate normalized by the image extent (cx and w by width, cy and h
/// by height). This is the L1 distance used by matching costs and the
/// regression loss.
pub fn normalized_center_l1(a: &BBox, b: &BBox, image_w: f64, image_h: f64) -> f64 {
    let ca = a.center_form();
    let cb = b.center_form();
    let norm = [image_w, image_h, image_w, image_h];
    let mut acc = 0.0;
    for i in 0..4 {
        acc += ((ca[i] - cb[i]) / norm[i]).abs();
    }
    acc / 4.0
}

/// Box coordinate layouts understood by [`convert`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxFormat {
    /// `(x1, y1, x2, y2)`
    Corner,
    /// `(cx, cy, w, h)`
    Center,
}

impl FromStr for BoxFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corner" | "xyxy" => Ok(BoxFormat::Corner),
            "center" | "cxcywh" => Ok(BoxFormat::Center),
            other => Err(Error::InvalidArgument(format!(
                "unknown box format tag '{other}' (expected 'corner' or 'center')"
            ))),
        }
    }
}

/// Convert a 4-tuple between corner and center layouts.
pub fn convert(coords: [f64; 4], from: BoxFormat, to: BoxFormat) -> Result<[f64; 4]> {
    let as_box = match from {
        BoxFormat::Corner => BBox::from_corners(coords)?,
        BoxFormat::Center => BBox::from_center_form(coords)?,
    };
    Ok(match to {
        BoxFormat::Corner => as_box.corners(),
        BoxFormat::Center => as_box.center_form(),
    })
}

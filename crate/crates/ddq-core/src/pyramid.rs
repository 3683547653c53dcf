//! Dense per-pixel query priors over a feature pyramid.
//!
//! Levels P3..P7 are downsampled by `2^l` from the input image; every grid
//! point on every level becomes one query. Regression offsets are decoded
//! anchor-free as distances to the four box edges.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, BoxList};

pub const MIN_LEVEL: u8 = 3;
pub const MAX_LEVEL: u8 = 7;

/// One pyramid level: stride `2^level` and the grid it induces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PyramidLevel {
    pub level: u8,
    pub stride: u32,
    pub grid_w: u32,
    pub grid_h: u32,
}

impl PyramidLevel {
    pub fn num_points(&self) -> usize {
        self.grid_w as usize * self.grid_h as usize
    }

    /// Pixel-space center of grid cell `(row, col)`.
    pub fn point(&self, row: u32, col: u32) -> (f64, f64) {
        let s = self.stride as f64;
        ((col as f64 + 0.5) * s, (row as f64 + 0.5) * s)
    }

    /// Pixel-space center of the flat (row-major) cell index.
    pub fn point_at(&self, index: usize) -> (f64, f64) {
        let row = (index / self.grid_w as usize) as u32;
        let col = (index % self.grid_w as usize) as u32;
        self.point(row, col)
    }
}

/// Grid geometry for levels P3..P7 of an image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePyramid {
    pub image_w: u32,
    pub image_h: u32,
    levels: Vec<PyramidLevel>,
}

/// Build the pyramid for an image; grids are `ceil(size / 2^l)` per level.
pub fn build_pyramid(image_w: u32, image_h: u32) -> Result<FeaturePyramid> {
    if image_w == 0 || image_h == 0 {
        return Err(Error::InvalidArgument(format!(
            "image size must be positive, got {image_w}x{image_h}"
        )));
    }
    let levels = (MIN_LEVEL..=MAX_LEVEL)
        .map(|level| {
            let stride = 1u32 << level;
            PyramidLevel {
                level,
                stride,
                grid_w: image_w.div_ceil(stride),
                grid_h: image_h.div_ceil(stride),
            }
        })
        .collect();
    Ok(FeaturePyramid {
        image_w,
        image_h,
        levels,
    })
}

impl FeaturePyramid {
    pub fn levels(&self) -> &[PyramidLevel] {
        &self.levels
    }

    pub fn level(&self, level: u8) -> Option<&PyramidLevel> {
        self.levels.iter().find(|l| l.level == level)
    }

    /// Total number of grid points (= dense query count).
    pub fn num_points(&self) -> usize {
        self.levels.iter().map(PyramidLevel::num_points).sum()
    }

    /// Iterate all points in level order, row-major within each level,
    /// yielding `(level, flat index within level, x, y)`.
    pub fn points(&self) -> impl Iterator<Item = (u8, usize, f64, f64)> + '_ {
        self.levels.iter().flat_map(|lvl| {
            (0..lvl.num_points()).map(move |i| {
                let (x, y) = lvl.point_at(i);
                (lvl.level, i, x, y)
            })
        })
    }
}

/// Dense query count of a pyramid.
pub fn count_queries(pyramid: &FeaturePyramid) -> usize {
    pyramid.num_points()
}

/// Distances from a grid point to the four box edges, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeOffsets {
    pub left: f64,
    pub top: f64,
    pub right: f64,
    pub bottom: f64,
}

impl EdgeOffsets {
    pub fn new(left: f64, top: f64, right: f64, bottom: f64) -> Self {
        Self {
            left,
            top,
            right,
            bottom,
        }
    }
}

/// Decode per-point edge offsets into boxes clipped to the image.
pub fn decode_boxes(pyramid: &FeaturePyramid, offsets: &[EdgeOffsets]) -> Result<BoxList> {
    let n = pyramid.num_points();
    if offsets.len() != n {
        return Err(Error::LengthMismatch {
            what: "offsets",
            expected: n,
            got: offsets.len(),
        });
    }
    let (w, h) = (pyramid.image_w as f64, pyramid.image_h as f64);
    let mut boxes = Vec::with_capacity(n);
    for ((_, _, px, py), off) in pyramid.points().zip(offsets) {
        if off.left < 0.0 || off.top < 0.0 || off.right < 0.0 || off.bottom < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "negative edge offset at point ({px}, {py})"
            )));
        }
        let raw = BBox::new(px - off.left, py - off.top, px + off.right, py + off.bottom)?;
        boxes.push(raw.clip(w, h));
    }
    Ok(BoxList::new(boxes))
}

/// Where a query came from: pyramid level and flat grid index within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryOrigin {
    pub level: u8,
    pub index: usize,
}

/// Aligned arrays of boxes, scores, feature vectors and origin tags.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    boxes: Vec<BBox>,
    scores: Vec<f64>,
    features: Vec<Vec<f64>>,
    origins: Vec<QueryOrigin>,
    feature_dim: usize,
}

impl QuerySet {
    pub fn from_parts(
        boxes: Vec<BBox>,
        scores: Vec<f64>,
        features: Vec<Vec<f64>>,
        origins: Vec<QueryOrigin>,
    ) -> Result<Self> {
        let n = boxes.len();
        for (what, got) in [
            ("scores", scores.len()),
            ("features", features.len()),
            ("origins", origins.len()),
        ] {
            if got != n {
                return Err(Error::LengthMismatch {
                    what,
                    expected: n,
                    got,
                });
            }
        }
        if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::InvalidArgument(format!(
                "query score {s} outside the unit interval"
            )));
        }
        let feature_dim = features.first().map_or(0, Vec::len);
        if let Some(bad) = features.iter().find(|f| f.len() != feature_dim) {
            return Err(Error::DimensionMismatch(format!(
                "feature vectors must share one dimension: expected {feature_dim}, found {}",
                bad.len()
            )));
        }
        Ok(Self {
            boxes,
            scores,
            features,
            origins,
            feature_dim,
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

    pub fn box_list(&self) -> BoxList {
        BoxList::new(self.boxes.clone())
    }

    /// Boxes and scores together, for score-aware consumers.
    pub fn scored_box_list(&self) -> BoxList {
        BoxList::with_scores(self.boxes.clone(), self.scores.clone())
            .expect("query set invariants guarantee parallel scores")
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn origins(&self) -> &[QueryOrigin] {
        &self.origins
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// New set containing the given queries, in the given order.
    pub fn select(&self, indices: &[usize]) -> QuerySet {
        QuerySet {
            boxes: indices.iter().map(|&i| self.boxes[i]).collect(),
            scores: indices.iter().map(|&i| self.scores[i]).collect(),
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            origins: indices.iter().map(|&i| self.origins[i]).collect(),
            feature_dim: self.feature_dim,
        }
    }

    pub fn to_records(&self) -> Vec<QueryRecord> {
        (0..self.len())
            .map(|i| QueryRecord {
                bbox: self.boxes[i].corners(),
                score: self.scores[i],
                level: self.origins[i].level,
                index: self.origins[i].index,
                feature: self.features[i].clone(),
            })
            .collect()
    }

    pub fn from_records(records: Vec<QueryRecord>) -> Result<Self> {
        let mut boxes = Vec::with_capacity(records.len());
        let mut scores = Vec::with_capacity(records.len());
        let mut features = Vec::with_capacity(records.len());
        let mut origins = Vec::with_capacity(records.len());
        for r in records {
            boxes.push(BBox::from_corners(r.bbox)?);
            scores.push(r.score);
            features.push(r.feature);
            origins.push(QueryOrigin {
                level: r.level,
                index: r.index,
            });
        }
        Self::from_parts(boxes, scores, features, origins)
    }
}

/// JSON record layout for one query:
/// `{"box": [x1,y1,x2,y2], "score": s, "level": l, "index": i, "feature": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub score: f64,
    pub level: u8,
    pub index: usize,
    #[serde(default)]
    pub feature: Vec<f64>,
}

/// Assemble a dense query set: one query per pyramid point, decoded boxes,
/// origin tags in pyramid point order.
pub fn make_query_set(
    pyramid: &FeaturePyramid,
    scores: Vec<f64>,
    offsets: &[EdgeOffsets],
    features: Vec<Vec<f64>>,
) -> Result<QuerySet> {
    let n = pyramid.num_points();
    if scores.len() != n {
        return Err(Error::LengthMismatch {
            what: "scores",
            expected: n,
            got: scores.len(),
        });
    }
    if features.len() != n {
        return Err(Error::LengthMismatch {
            what: "features",
            expected: n,
            got: features.len(),
        });
    }
    let boxes = decode_boxes(pyramid, offsets)?;
    let origins = pyramid
        .points()
        .map(|(level, index, _, _)| QueryOrigin { level, index })
        .collect();
    QuerySet::from_parts(boxes.boxes().to_vec(), scores, features, origins)
}

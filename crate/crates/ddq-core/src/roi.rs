//! RoIAlign over synthetic feature maps, the flexible-receptive-field
//! variant that pools from neighboring pyramid levels, and the query/RoI
//! fusion that makes query vectors more discriminative.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::matrix::Matrix;
use crate::pyramid::FeaturePyramid;

/// Dense feature grid for one pyramid level, laid out `(y, x, channel)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub level: u8,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(
        level: u8,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::DimensionMismatch(format!(
                "feature map dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::LengthMismatch {
                what: "feature map data",
                expected: channels * height * width,
                got: data.len(),
            });
        }
        Ok(Self {
            level,
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        level: u8,
        channels: usize,
        height: usize,
        width: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(level, channels, height, width, data)
    }

    pub fn constant(level: u8, channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self::new(
            level,
            channels,
            height,
            width,
            vec![value; channels * height * width],
        )
        .expect("positive dimensions")
    }

    pub fn stride(&self) -> u32 {
        1 << self.level
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// RoIAlign output: an `h x w x channels` grid of pooled features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiTensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    data: Vec<f64>,
}

impl RoiTensor {
    fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Channel-wise mean over the spatial grid (the 1x1 average pool).
    pub fn average_pool(&self) -> Vec<f64> {
        let spatial = (self.height * self.width) as f64;
        (0..self.channels)
            .map(|c| {
                let mut acc = 0.0;
                for y in 0..self.height {
                    for x in 0..self.width {
                        acc += self.get(y, x, c);
                    }
                }
                acc / spatial
            })
            .collect()
    }
}

/// Bilinear sample with clamp-to-edge, written in incremental (lerp) form so
/// constant regions reproduce the constant exactly.
fn bilinear(fm: &FeatureMap, y: f64, x: f64, c: usize) -> f64 {
    let xc = x.clamp(0.0, (fm.width - 1) as f64);
    let yc = y.clamp(0.0, (fm.height - 1) as f64);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(fm.width - 1);
    let y1 = (y0 + 1).min(fm.height - 1);
    let fx = xc - x0 as f64;
    let fy = yc - y0 as f64;
    let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
    let top = lerp(fm.get(y0, x0, c), fm.get(y0, x1, c), fx);
    let bottom = lerp(fm.get(y1, x0, c), fm.get(y1, x1, c), fx);
    lerp(top, bottom, fy)
}

/// RoIAlign: the box is mapped into half-pixel-aligned feature coordinates
/// and each output bin averages `samples_per_bin^2` bilinear samples.
pub fn roi_align(
    fm: &FeatureMap,
    bbox: &BBox,
    out_size: (usize, usize),
    samples_per_bin: usize,
) -> Result<RoiTensor> {
    if bbox.is_degenerate() {
        return Err(Error::InvalidBox(
            "roi_align needs a non-degenerate box".into(),
        ));
    }
    let (out_h, out_w) = out_size;
    if out_h == 0 || out_w == 0 || samples_per_bin == 0 {
        return Err(Error::InvalidArgument(
            "output size and samples_per_bin must be positive".into(),
        ));
    }
    let stride = fm.stride() as f64;
    let start_x = bbox.x1 / stride - 0.5;
    let start_y = bbox.y1 / stride - 0.5;
    let roi_w = bbox.width() / stride;
    let roi_h = bbox.height() / stride;
    let bin_w = roi_w / out_w as f64;
    let bin_h = roi_h / out_h as f64;
    let n = samples_per_bin;
    let inv_count = 1.0 / (n * n) as f64;

    let mut out = RoiTensor::zeros(out_h, out_w, fm.channels);
    for ph in 0..out_h {
        for pw in 0..out_w {
            for c in 0..fm.channels {
                let mut acc = 0.0;
                for iy in 0..n {
                    let y = start_y + ph as f64 * bin_h + (iy as f64 + 0.5) * bin_h / n as f64;
                    for ix in 0..n {
                        let x = start_x + pw as f64 * bin_w + (ix as f64 + 0.5) * bin_w / n as f64;
                        acc += bilinear(fm, y, x, c);
                    }
                }
                out.set(ph, pw, c, acc * inv_count);
            }
        }
    }
    Ok(out)
}

fn level_for_box(bbox: &BBox, min_level: u8, max_level: u8) -> Result<u8> {
    if bbox.is_degenerate() {
        return Err(Error::InvalidBox(
            "level assignment needs a non-degenerate box".into(),
        ));
    }
    let scale = bbox.area().sqrt();
    let raw = (4.0 + (scale / 224.0).log2()).floor();
    Ok(raw.clamp(min_level as f64, max_level as f64) as u8)
}

/// Standard FPN level heuristic: `clamp(floor(4 + log2(sqrt(area)/224)))`
/// into the pyramid's level range.
pub fn assign_level(bbox: &BBox, pyramid: &FeaturePyramid) -> Result<u8> {
    let min = pyramid.levels().iter().map(|l| l.level).min().unwrap_or(3);
    let max = pyramid.levels().iter().map(|l| l.level).max().unwrap_or(7);
    level_for_box(bbox, min, max)
}

/// RoIAlign with a flexible receptive field: pool at the box's assigned
/// level and its immediate neighbors (clamped to the available levels) and
/// fuse by channel-wise mean.
pub fn frf_roi_align(
    maps: &[FeatureMap],
    bbox: &BBox,
    out_size: (usize, usize),
    samples_per_bin: usize,
) -> Result<RoiTensor> {
    if maps.is_empty() {
        return Err(Error::InvalidArgument("no feature maps supplied".into()));
    }
    let channels = maps[0].channels;
    if maps.iter().any(|m| m.channels != channels) {
        return Err(Error::DimensionMismatch(
            "feature maps must share a channel count".into(),
        ));
    }
    let min_level = maps.iter().map(|m| m.level).min().unwrap();
    let max_level = maps.iter().map(|m| m.level).max().unwrap();
    let base = level_for_box(bbox, min_level, max_level)?;

    let mut levels: Vec<u8> = [base.saturating_sub(1), base, base + 1]
        .into_iter()
        .map(|l| l.clamp(min_level, max_level))
        .collect();
    levels.sort_unstable();
    levels.dedup();

    let (out_h, out_w) = out_size;
    let mut fused = RoiTensor::zeros(out_h, out_w, channels);
    for &level in &levels {
        let map = maps.iter().find(|m| m.level == level).ok_or_else(|| {
            Error::InvalidArgument(format!("missing feature map for level {level}"))
        })?;
        let t = roi_align(map, bbox, out_size, samples_per_bin)?;
        for i in 0..fused.data.len() {
            fused.data[i] += t.data[i];
        }
    }
    let inv = 1.0 / levels.len() as f64;
    for v in &mut fused.data {
        *v *= inv;
    }
    Ok(fused)
}

/// Query distinctness enhancement: average-pool the RoI to a channel vector,
/// concatenate with the query, and project back to the query dimension.
/// `projection` must be `(d + channels) x d`.
pub fn qde_fuse(query: &[f64], roi: &RoiTensor, projection: &Matrix) -> Result<Vec<f64>> {
    let d = query.len();
    let c = roi.channels;
    if projection.rows() != d + c || projection.cols() != d {
        return Err(Error::DimensionMismatch(format!(
            "projection must be {}x{}, got {}x{}",
            d + c,
            d,
            projection.rows(),
            projection.cols()
        )));
    }
    let pooled = roi.average_pool();
    let concat: Vec<f64> = query.iter().chain(pooled.iter()).copied().collect();
    let mut out = vec![0.0; d];
    for (m, &v) in concat.iter().enumerate() {
        for (k, o) in out.iter_mut().enumerate() {
            *o += v * projection.get(m, k);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pyramid::build_pyramid;
    use approx::assert_abs_diff_eq;

    #[test]
    fn constant_map_pools_to_constant() {
        let c = 0.37219;
        let fm = FeatureMap::constant(3, 2, 10, 10, c);
        let bbox = BBox::new(5.0, 5.0, 60.0, 50.0).unwrap();
        let out = roi_align(&fm, &bbox, (7, 7), 2).unwrap();
        assert_eq!((out.height, out.width, out.channels), (7, 7, 2));
        assert!(out.data().iter().all(|&v| v == c), "bit-exact constant");
    }

    #[test]
    fn ramp_map_reads_center_value() {
        // Feature value equals the feature-space x coordinate. A 1x1 output
        // over a box centered at feature x = 3.5 must read exactly 3.5.
        let fm = FeatureMap::from_fn(3, 1, 8, 8, |_, x, _| x as f64).unwrap();
        // Pixel center (32, 16) -> feature center (3.5, 1.5) at stride 8.
        let bbox = BBox::new(24.0, 8.0, 40.0, 24.0).unwrap();
        let out = roi_align(&fm, &bbox, (1, 1), 2).unwrap();
        assert_abs_diff_eq!(out.get(0, 0, 0), 3.5, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_box_rejected() {
        let fm = FeatureMap::constant(3, 1, 4, 4, 1.0);
        let b = BBox::new(3.0, 3.0, 3.0, 3.0).unwrap();
        assert!(roi_align(&fm, &b, (2, 2), 2).is_err());
    }

    #[test]
    fn linear_in_the_feature_map() {
        let f = FeatureMap::from_fn(3, 1, 6, 6, |y, x, _| (y * 7 + x) as f64 * 0.31).unwrap();
        let g =
            FeatureMap::from_fn(3, 1, 6, 6, |y, x, _| ((x + 1) * (y + 2)) as f64 * 0.11).unwrap();
        let (a, b) = (1.7, -0.4);
        let combo = FeatureMap::new(
            3,
            1,
            6,
            6,
            f.data()
                .iter()
                .zip(g.data())
                .map(|(&fv, &gv)| a * fv + b * gv)
                .collect(),
        )
        .unwrap();
        let bbox = BBox::new(6.0, 6.0, 40.0, 36.0).unwrap();
        let out_f = roi_align(&f, &bbox, (3, 3), 2).unwrap();
        let out_g = roi_align(&g, &bbox, (3, 3), 2).unwrap();
        let out_c = roi_align(&combo, &bbox, (3, 3), 2).unwrap();
        for i in 0..out_c.data().len() {
            assert_abs_diff_eq!(
                out_c.data()[i],
                a * out_f.data()[i] + b * out_g.data()[i],
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn shift_by_one_stride_is_equivariant() {
        let fm = FeatureMap::from_fn(3, 1, 8, 8, |y, x, _| ((x * 13 + y * 5) % 11) as f64).unwrap();
        let shifted = FeatureMap::from_fn(3, 1, 8, 8, |y, x, _| {
            if x == 0 {
                0.0
            } else {
                ((x - 1) * 13 + y * 5) as f64 % 11.0
            }
        })
        .unwrap();
        let b = BBox::new(8.0, 16.0, 32.0, 40.0).unwrap();
        let b_shifted = BBox::new(16.0, 16.0, 40.0, 40.0).unwrap();
        let out = roi_align(&fm, &b, (2, 2), 2).unwrap();
        let out_shifted = roi_align(&shifted, &b_shifted, (2, 2), 2).unwrap();
        for i in 0..out.data().len() {
            assert_abs_diff_eq!(out.data()[i], out_shifted.data()[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn level_heuristic() {
        let p = build_pyramid(2048, 2048).unwrap();
        let at = |w: f64, h: f64| assign_level(&BBox::new(0.0, 0.0, w, h).unwrap(), &p).unwrap();
        assert_eq!(at(224.0, 224.0), 4);
        assert_eq!(at(32.0, 32.0), 3);
        assert_eq!(at(1792.0, 1792.0), 7);
        let degenerate = BBox::new(1.0, 1.0, 1.0, 1.0).unwrap();
        assert!(assign_level(&degenerate, &p).is_err());
    }

    fn full_level_maps(value: impl Fn(u8) -> f64) -> Vec<FeatureMap> {
        (3..=7)
            .map(|l| {
                let size = (256 >> l).max(1) as usize;
                FeatureMap::constant(l, 2, size, size, value(l))
            })
            .collect()
    }

    #[test]
    fn frf_fuses_neighbors_only() {
        // Small box -> base level 3 -> only levels {3, 4} contribute.
        let maps = full_level_maps(|l| if l <= 4 { 1.0 } else { 99.0 });
        let small = BBox::new(10.0, 10.0, 42.0, 42.0).unwrap();
        let out = frf_roi_align(&maps, &small, (2, 2), 2).unwrap();
        assert!(out.data().iter().all(|&v| v == 1.0));

        // Constant across all levels stays constant.
        let uniform = full_level_maps(|_| 0.5);
        let out = frf_roi_align(&uniform, &small, (2, 2), 2).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));

        // Huge box -> base level 7 -> only levels {6, 7} contribute.
        let top_heavy = full_level_maps(|l| if l >= 6 { 2.0 } else { -50.0 });
        let huge = BBox::new(0.0, 0.0, 2000.0, 2000.0).unwrap();
        let out = frf_roi_align(&top_heavy, &huge, (2, 2), 2).unwrap();
        assert!(out.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn frf_identical_content_matches_single_level() {
        // Maps that encode the pixel-space x coordinate agree across levels
        // on interior boxes, so the fusion equals the single-level pool.
        let maps: Vec<FeatureMap> = (3..=7)
            .map(|l| {
                let stride = (1u32 << l) as f64;
                let size = (512 >> l) as usize;
                FeatureMap::from_fn(l, 1, size, size, move |_, x, _| (x as f64 + 0.5) * stride)
                    .unwrap()
            })
            .collect();
        let bbox = BBox::new(96.0, 96.0, 240.0, 240.0).unwrap();
        let fused = frf_roi_align(&maps, &bbox, (3, 3), 2).unwrap();
        let base = level_for_box(&bbox, 3, 7).unwrap();
        let single = roi_align(
            maps.iter().find(|m| m.level == base).unwrap(),
            &bbox,
            (3, 3),
            2,
        )
        .unwrap();
        for i in 0..fused.data().len() {
            assert_abs_diff_eq!(fused.data()[i], single.data()[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn frf_missing_level_errors() {
        let mut maps = full_level_maps(|_| 1.0);
        maps.remove(1); // drop level 4
        let small = BBox::new(10.0, 10.0, 42.0, 42.0).unwrap();
        assert!(frf_roi_align(&maps, &small, (2, 2), 2).is_err());
    }

    #[test]
    fn qde_identity_projection_returns_query() {
        let d = 4;
        let c = 3;
        let roi = {
            let fm = FeatureMap::constant(3, c, 6, 6, 2.5);
            roi_align(&fm, &BBox::new(0.0, 0.0, 24.0, 24.0).unwrap(), (2, 2), 2).unwrap()
        };
        let query = vec![0.1, -0.2, 0.3, 0.4];

        // [I_d | 0] stacked: top d rows identity, bottom c rows zero.
        let mut ident = Matrix::zeros(d + c, d);
        for i in 0..d {
            ident.set(i, i, 1.0);
        }
        let out = qde_fuse(&query, &roi, &ident).unwrap();
        assert_eq!(out, query);

        // [0 | M] with constant roi value v: out = v * column sums of M.
        let mut bottom = Matrix::zeros(d + c, d);
        for i in 0..c {
            for k in 0..d {
                bottom.set(d + i, k, (i + k) as f64);
            }
        }
        let out = qde_fuse(&query, &roi, &bottom).unwrap();
        for (k, &v) in out.iter().enumerate() {
            let col_sum: f64 = (0..c).map(|i| (i + k) as f64).sum();
            assert_abs_diff_eq!(v, 2.5 * col_sum, epsilon = 1e-12);
        }

        // Output dimension always d ("reverts the channel number").
        assert_eq!(out.len(), d);

        let wrong = Matrix::zeros(d, d);
        assert!(qde_fuse(&query, &roi, &wrong).is_err());
    }

    #[test]
    fn qde_reverts_channel_number_at_full_width() {
        // 256-dimensional queries fused with 256-channel RoI features come
        // back out at 256 dimensions.
        let (d, c) = (256, 256);
        let fm = FeatureMap::constant(4, c, 4, 4, 1.0);
        let roi = roi_align(&fm, &BBox::new(0.0, 0.0, 32.0, 32.0).unwrap(), (2, 2), 2).unwrap();
        let query = vec![0.5; d];
        let projection = Matrix::zeros(d + c, d);
        let out = qde_fuse(&query, &roi, &projection).unwrap();
        assert_eq!(out.len(), 256);
    }
}

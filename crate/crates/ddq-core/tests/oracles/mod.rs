//! Independent reference implementations used to check the library. These
//! deliberately take different computational routes from the code under
//! test and must stay free of calls into the corresponding library paths.
//!
//! Shared by several test binaries; not all of them use every oracle.
#![allow(dead_code)]

use ddq_core::{BBox, DetectionRecord, GtRecord};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Rasterized-area IoU: integrates per-cell coverage of each box over a
/// `cells x cells` grid spanning the joint extent, axis-separably.
pub fn raster_iou(a: &BBox, b: &BBox, cells: usize) -> f64 {
    let x_min = a.x1.min(b.x1);
    let x_max = a.x2.max(b.x2);
    let y_min = a.y1.min(b.y1);
    let y_max = a.y2.max(b.y2);
    if x_max <= x_min || y_max <= y_min {
        return 0.0;
    }
    let coverage = |lo: f64, hi: f64, start: f64, end: f64| -> f64 {
        // Total overlap of [lo, hi] with the grid cells tiling [start, end].
        let step = (end - start) / cells as f64;
        let mut total = 0.0;
        for i in 0..cells {
            let c_lo = start + i as f64 * step;
            let c_hi = c_lo + step;
            total += (hi.min(c_hi) - lo.max(c_lo)).max(0.0);
        }
        total
    };
    let ax = coverage(a.x1, a.x2, x_min, x_max);
    let ay = coverage(a.y1, a.y2, y_min, y_max);
    let bx = coverage(b.x1, b.x2, x_min, x_max);
    let by = coverage(b.y1, b.y2, y_min, y_max);
    let ix = coverage(a.x1.max(b.x1), a.x2.min(b.x2), x_min, x_max);
    let iy = coverage(a.y1.max(b.y1), a.y2.min(b.y2), y_min, y_max);

    let area_a = ax * ay;
    let area_b = bx * by;
    let inter = if a.x2.min(b.x2) > a.x1.max(b.x1) && a.y2.min(b.y2) > a.y1.max(b.y1) {
        ix * iy
    } else {
        0.0
    };
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Rasterized GIoU built on the same coverage integration.
pub fn raster_giou(a: &BBox, b: &BBox, cells: usize) -> f64 {
    let enc_w = a.x2.max(b.x2) - a.x1.min(b.x1);
    let enc_h = a.y2.max(b.y2) - a.y1.min(b.y1);
    let enclosing = enc_w * enc_h;
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let union = a.area() + b.area() - iw * ih;
    let iou = raster_iou(a, b, cells);
    if enclosing <= 0.0 {
        iou
    } else {
        iou - (enclosing - union) / enclosing
    }
}

/// Classic O(n^2) greedy NMS over a precomputed IoU matrix: visit by
/// descending score (ties by index), keep unsuppressed candidates, suppress
/// everything at or above the threshold.
pub fn nms_reference(
    boxes: &[BBox],
    scores: &[f64],
    iou_threshold: f64,
    max_keep: Option<usize>,
) -> Vec<usize> {
    let n = boxes.len();
    let mut matrix = vec![vec![0.0_f64; n]; n];
    for i in 0..n {
        for j in 0..n {
            matrix[i][j] = ddq_core::iou(&boxes[i], &boxes[j]);
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));

    let cap = max_keep.unwrap_or(n);
    let mut suppressed = vec![false; n];
    let mut kept = Vec::new();
    for &i in &order {
        if suppressed[i] || kept.len() >= cap {
            continue;
        }
        kept.push(i);
        for &j in &order {
            if j != i && !suppressed[j] && matrix[i][j] >= iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    kept
}

/// Exhaustive minimum assignment total over all ways to give every row a
/// distinct column (requires `rows <= cols`).
pub fn lsap_exhaustive_min(values: &[Vec<f64>]) -> f64 {
    let rows = values.len();
    let cols = values.first().map_or(0, Vec::len);
    assert!(rows <= cols && rows > 0);
    let mut best = f64::INFINITY;
    let mut used = vec![false; cols];
    fn recurse(values: &[Vec<f64>], row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        if row == values.len() {
            if acc < *best {
                *best = acc;
            }
            return;
        }
        for col in 0..used.len() {
            if !used[col] {
                used[col] = true;
                recurse(values, row + 1, used, acc + values[row][col], best);
                used[col] = false;
            }
        }
    }
    recurse(values, 0, &mut used, 0.0, &mut best);
    best
}

/// Brute-force all-point AP at one threshold: detections are re-matched
/// from scratch for every score prefix and the precision envelope uses a
/// precomputed suffix maximum.
pub fn ap_bruteforce(dets: &[DetectionRecord], gts: &[GtRecord], iou_thresh: f64) -> f64 {
    if gts.is_empty() || dets.is_empty() {
        return 0.0;
    }
    // Same deterministic total order the library documents.
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap()
            .then(dets[a].image_id.cmp(&dets[b].image_id))
            .then(a.cmp(&b))
    });

    let tp_of_prefix = |k: usize| -> usize {
        // Fresh greedy matching on the first k detections only.
        let mut taken: std::collections::HashMap<i64, Vec<bool>> = std::collections::HashMap::new();
        for g in gts {
            taken.entry(g.image_id).or_default().push(false);
        }
        let mut tp = 0usize;
        for &di in order.iter().take(k) {
            let det = &dets[di];
            let gt_boxes: Vec<(usize, &GtRecord)> = gts
                .iter()
                .enumerate()
                .filter(|(_, g)| g.image_id == det.image_id)
                .collect();
            let Some(flags) = taken.get_mut(&det.image_id) else {
                continue;
            };
            let mut best: Option<(f64, usize)> = None;
            for (slot, (_, g)) in gt_boxes.iter().enumerate() {
                if flags[slot] {
                    continue;
                }
                let v = ddq_core::iou(&det.bbox, &g.bbox);
                if v >= iou_thresh && best.is_none_or(|(bv, _)| v > bv) {
                    best = Some((v, slot));
                }
            }
            if let Some((_, slot)) = best {
                flags[slot] = true;
                tp += 1;
            }
        }
        tp
    };

    let n = dets.len();
    let num_gts = gts.len() as f64;
    let mut precision = Vec::with_capacity(n);
    let mut recall = Vec::with_capacity(n);
    for k in 1..=n {
        let tp = tp_of_prefix(k);
        let fp = k - tp;
        precision.push(tp as f64 / (tp + fp) as f64);
        recall.push(tp as f64 / num_gts);
    }
    // Suffix maximum of precision.
    let mut env = precision.clone();
    for i in (0..n.saturating_sub(1)).rev() {
        env[i] = env[i].max(env[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for i in 0..n {
        if recall[i] > prev {
            ap += (recall[i] - prev) * env[i];
            prev = recall[i];
        }
    }
    ap
}

/// Deterministic RNG for oracle-driven trials.
pub fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Random well-formed box within `[0, extent]^2` with sides in
/// `[min_side, max_side]`.
pub fn random_box(rng: &mut ChaCha12Rng, extent: f64, min_side: f64, max_side: f64) -> BBox {
    let w = rng.random_range(min_side..=max_side);
    let h = rng.random_range(min_side..=max_side);
    let x1 = rng.random_range(0.0..=(extent - w));
    let y1 = rng.random_range(0.0..=(extent - h));
    BBox::new(x1, y1, x1 + w, y1 + h).unwrap()
}

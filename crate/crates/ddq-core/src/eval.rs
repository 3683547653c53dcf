//! Proposal recall and average-precision metrics.
//!
//! Matching follows the de-facto evaluation convention: detections are
//! visited in descending score order and greedily take the unmatched ground
//! truth with the highest IoU at or above the threshold, ties resolving to
//! the lower ground-truth index. AP integrates the all-point precision
//! envelope over recall.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox, BoxList};

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// Default AR@k budgets.
pub const DEFAULT_AR_KS: [usize; 3] = [100, 200, 300];

/// One scored detection on one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: i64,
    pub bbox: BBox,
    pub score: f64,
}

/// One ground-truth box on one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtRecord {
    pub image_id: i64,
    pub bbox: BBox,
}

/// COCO-style `{"image_id": n, "bbox": [x, y, w, h], "score": s}` record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CocoDetection {
    pub image_id: i64,
    pub bbox: [f64; 4],
    #[serde(default)]
    pub score: Option<f64>,
}

fn xywh_to_box(b: [f64; 4]) -> Result<BBox> {
    let [x, y, w, h] = b;
    if w < 0.0 || h < 0.0 {
        return Err(Error::InvalidBox(format!("negative extent in xywh {b:?}")));
    }
    BBox::new(x, y, x + w, y + h)
}

/// Parse COCO-style detections; schema violations name the failing record.
pub fn parse_coco_detections(json: &str) -> Result<Vec<DetectionRecord>> {
    let values: Vec<serde_json::Value> = serde_json::from_str(json)
        .map_err(|e| Error::InvalidArgument(format!("detections file: {e}")))?;
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let rec: CocoDetection = serde_json::from_value(v)
                .map_err(|e| Error::InvalidArgument(format!("detection record {i}: {e}")))?;
            let score = rec.score.ok_or_else(|| {
                Error::InvalidArgument(format!("detection record {i}: missing score"))
            })?;
            if !(0.0..=1.0).contains(&score) {
                return Err(Error::InvalidArgument(format!(
                    "detection record {i}: score {score} outside [0, 1]"
                )));
            }
            Ok(DetectionRecord {
                image_id: rec.image_id,
                bbox: xywh_to_box(rec.bbox)
                    .map_err(|e| Error::InvalidArgument(format!("detection record {i}: {e}")))?,
                score,
            })
        })
        .collect()
}

/// Parse COCO-style ground truths (scores, if present, are ignored).
pub fn parse_coco_gts(json: &str) -> Result<Vec<GtRecord>> {
    let values: Vec<serde_json::Value> = serde_json::from_str(json)
        .map_err(|e| Error::InvalidArgument(format!("ground-truth file: {e}")))?;
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let rec: CocoDetection = serde_json::from_value(v)
                .map_err(|e| Error::InvalidArgument(format!("ground-truth record {i}: {e}")))?;
            Ok(GtRecord {
                image_id: rec.image_id,
                bbox: xywh_to_box(rec.bbox)
                    .map_err(|e| Error::InvalidArgument(format!("ground-truth record {i}: {e}")))?,
            })
        })
        .collect()
}

/// Proposal order: by descending score when scores are present (ties keep
/// input order), otherwise the input order as given.
fn proposal_order(proposals: &BoxList) -> Vec<usize> {
    let mut order: Vec<usize> = (0..proposals.len()).collect();
    if let Some(scores) = proposals.scores() {
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    }
    order
}

/// Greedy count of ground truths covered by the top-k proposals.
fn greedy_matched(proposals: &BoxList, gts: &BoxList, iou_thresh: f64, k: usize) -> usize {
    let mut taken = vec![false; gts.len()];
    let mut matched = 0usize;
    for &pi in proposal_order(proposals).iter().take(k) {
        let p = proposals.get(pi);
        let mut best: Option<(f64, usize)> = None;
        for (gi, g) in gts.boxes().iter().enumerate() {
            if taken[gi] {
                continue;
            }
            let v = iou(p, g);
            if v >= iou_thresh && best.is_none_or(|(bv, _)| v > bv) {
                best = Some((v, gi));
            }
        }
        if let Some((_, gi)) = best {
            taken[gi] = true;
            matched += 1;
        }
    }
    matched
}

/// Fraction of ground truths covered by the top-k proposals at the given
/// IoU threshold; 1.0 when there are no ground truths.
pub fn recall_at(proposals: &BoxList, gts: &BoxList, iou_thresh: f64, k: usize) -> f64 {
    if gts.is_empty() {
        return 1.0;
    }
    greedy_matched(proposals, gts, iou_thresh, k) as f64 / gts.len() as f64
}

/// A precision/recall sample on the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// AR@k entry of a report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArEntry {
    pub k: usize,
    pub value: f64,
}

/// Aggregated detection metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Mean AP over the configured IoU thresholds.
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    /// Average recall (mean over thresholds) at each budget.
    pub ar: Vec<ArEntry>,
    /// PR sweep at IoU 0.50.
    pub pr_curve: Vec<PrPoint>,
    pub iou_thresholds: Vec<f64>,
}

/// Deterministic global detection order: descending score, then image id,
/// then input index.
fn detection_order(dets: &[DetectionRecord]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap()
            .then(dets[a].image_id.cmp(&dets[b].image_id))
            .then(a.cmp(&b))
    });
    order
}

fn group_gts(gts: &[GtRecord]) -> BTreeMap<i64, Vec<BBox>> {
    let mut map: BTreeMap<i64, Vec<BBox>> = BTreeMap::new();
    for g in gts {
        map.entry(g.image_id).or_default().push(g.bbox);
    }
    map
}

/// True/false-positive flags for every detection in `order`, greedy per image.
fn match_flags(
    dets: &[DetectionRecord],
    order: &[usize],
    gts_by_image: &BTreeMap<i64, Vec<BBox>>,
    iou_thresh: f64,
) -> Vec<bool> {
    let mut taken: BTreeMap<i64, Vec<bool>> = gts_by_image
        .iter()
        .map(|(&id, v)| (id, vec![false; v.len()]))
        .collect();
    let mut flags = vec![false; order.len()];
    for (rank, &di) in order.iter().enumerate() {
        let det = &dets[di];
        let Some(gt_boxes) = gts_by_image.get(&det.image_id) else {
            continue;
        };
        let taken_flags = taken.get_mut(&det.image_id).unwrap();
        let mut best: Option<(f64, usize)> = None;
        for (gi, g) in gt_boxes.iter().enumerate() {
            if taken_flags[gi] {
                continue;
            }
            let v = iou(&det.bbox, g);
            if v >= iou_thresh && best.is_none_or(|(bv, _)| v > bv) {
                best = Some((v, gi));
            }
        }
        if let Some((_, gi)) = best {
            taken_flags[gi] = true;
            flags[rank] = true;
        }
    }
    flags
}

/// PR sweep for one threshold; points are in sweep (non-decreasing recall)
/// order.
fn pr_sweep(flags: &[bool], num_gts: usize) -> Vec<PrPoint> {
    let mut tp = 0usize;
    let mut fp = 0usize;
    flags
        .iter()
        .map(|&is_tp| {
            if is_tp {
                tp += 1;
            } else {
                fp += 1;
            }
            PrPoint {
                recall: tp as f64 / num_gts as f64,
                precision: tp as f64 / (tp + fp) as f64,
            }
        })
        .collect()
}

/// All-point interpolated AP: integral of the precision envelope over recall.
fn envelope_ap(points: &[PrPoint]) -> f64 {
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (i, p) in points.iter().enumerate() {
        if p.recall > prev_recall {
            let env = points[i..]
                .iter()
                .map(|q| q.precision)
                .fold(f64::NEG_INFINITY, f64::max);
            ap += (p.recall - prev_recall) * env;
            prev_recall = p.recall;
        }
    }
    ap
}

fn ap_at(
    dets: &[DetectionRecord],
    order: &[usize],
    gts_by_image: &BTreeMap<i64, Vec<BBox>>,
    num_gts: usize,
    thresh: f64,
) -> (f64, Vec<PrPoint>) {
    if num_gts == 0 || dets.is_empty() {
        return (0.0, Vec::new());
    }
    let flags = match_flags(dets, order, gts_by_image, thresh);
    let points = pr_sweep(&flags, num_gts);
    (envelope_ap(&points), points)
}

/// Dataset-level recall of the top-k detections per image, averaged over
/// the IoU thresholds.
fn average_recall_at(
    dets: &[DetectionRecord],
    gts_by_image: &BTreeMap<i64, Vec<BBox>>,
    num_gts: usize,
    thresholds: &[f64],
    k: usize,
) -> f64 {
    if num_gts == 0 {
        return 1.0;
    }
    // Per-image proposal lists, score-sorted.
    let mut per_image: BTreeMap<i64, Vec<&DetectionRecord>> = BTreeMap::new();
    for d in dets {
        per_image.entry(d.image_id).or_default().push(d);
    }
    let mut total = 0.0;
    for t in thresholds {
        let mut matched = 0usize;
        for (image_id, gt_boxes) in gts_by_image {
            let Some(image_dets) = per_image.get(image_id) else {
                continue;
            };
            let boxes: Vec<BBox> = image_dets.iter().map(|d| d.bbox).collect();
            let scores: Vec<f64> = image_dets.iter().map(|d| d.score).collect();
            let proposals = BoxList::with_scores(boxes, scores).expect("parallel by construction");
            let gt_list = BoxList::new(gt_boxes.clone());
            matched += greedy_matched(&proposals, &gt_list, *t, k);
        }
        total += matched as f64 / num_gts as f64;
    }
    total / thresholds.len() as f64
}

/// Compute AP and AR metrics over per-image detections and ground truths.
pub fn average_precision(
    dets: &[DetectionRecord],
    gts: &[GtRecord],
    iou_thresholds: &[f64],
    ar_ks: &[usize],
) -> Result<MetricReport> {
    if iou_thresholds.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one IoU threshold is required".into(),
        ));
    }
    if let Some(bad) = dets.iter().find(|d| !(0.0..=1.0).contains(&d.score)) {
        return Err(Error::InvalidArgument(format!(
            "detection score {} outside the unit interval",
            bad.score
        )));
    }
    let gts_by_image = group_gts(gts);
    let num_gts = gts.len();
    let order = detection_order(dets);

    let mut ap_sum = 0.0;
    for &t in iou_thresholds {
        let (ap, _) = ap_at(dets, &order, &gts_by_image, num_gts, t);
        ap_sum += ap;
    }
    let (ap50, pr_curve) = ap_at(dets, &order, &gts_by_image, num_gts, 0.5);
    let (ap75, _) = ap_at(dets, &order, &gts_by_image, num_gts, 0.75);

    let ar = ar_ks
        .iter()
        .map(|&k| ArEntry {
            k,
            value: average_recall_at(dets, &gts_by_image, num_gts, iou_thresholds, k),
        })
        .collect();

    Ok(MetricReport {
        ap: ap_sum / iou_thresholds.len() as f64,
        ap50,
        ap75,
        ar,
        pr_curve,
        iou_thresholds: iou_thresholds.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn bx(c: [f64; 4]) -> BBox {
        BBox::from_corners(c).unwrap()
    }

    #[test]
    fn recall_trivial_cases() {
        let gts = BoxList::new(vec![
            bx([0.0, 0.0, 10.0, 10.0]),
            bx([20.0, 0.0, 30.0, 10.0]),
        ]);
        // Every gt duplicated as proposal -> full recall.
        let props = BoxList::with_scores(gts.boxes().to_vec(), vec![0.9, 0.8]).unwrap();
        assert_eq!(recall_at(&props, &gts, 0.5, 10), 1.0);
        // No proposals -> zero.
        assert_eq!(recall_at(&BoxList::new(vec![]), &gts, 0.5, 10), 0.0);
        // No gts -> one.
        assert_eq!(recall_at(&props, &BoxList::new(vec![]), 0.5, 10), 1.0);
    }

    #[test]
    fn recall_partial() {
        // IoU([0,0,10,10], [0,0,10,6]) = 0.6: matches one of two gts.
        let gts = BoxList::new(vec![
            bx([0.0, 0.0, 10.0, 10.0]),
            bx([20.0, 0.0, 30.0, 10.0]),
        ]);
        let props = BoxList::with_scores(vec![bx([0.0, 0.0, 10.0, 6.0])], vec![0.9]).unwrap();
        assert_eq!(recall_at(&props, &gts, 0.5, 10), 0.5);
        // Tighter threshold drops it.
        assert_eq!(recall_at(&props, &gts, 0.7, 10), 0.0);
        // k = 0 considers nothing.
        assert_eq!(recall_at(&props, &gts, 0.5, 0), 0.0);
    }

    #[test]
    fn recall_without_scores_uses_input_order() {
        let gts = BoxList::new(vec![bx([0.0, 0.0, 10.0, 10.0])]);
        // Unscored proposals: the matching one sits second, so k = 1 only
        // sees the miss.
        let props = BoxList::new(vec![
            bx([50.0, 50.0, 60.0, 60.0]),
            bx([0.0, 0.0, 10.0, 10.0]),
        ]);
        assert_eq!(recall_at(&props, &gts, 0.5, 1), 0.0);
        assert_eq!(recall_at(&props, &gts, 0.5, 2), 1.0);
    }

    #[test]
    fn ap_perfect_single_detection() {
        let gts = vec![GtRecord {
            image_id: 0,
            bbox: bx([0.0, 0.0, 10.0, 10.0]),
        }];
        let dets = vec![DetectionRecord {
            image_id: 0,
            bbox: bx([0.0, 0.0, 10.0, 10.0]),
            score: 0.9,
        }];
        let r = average_precision(&dets, &gts, &coco_iou_thresholds(), &DEFAULT_AR_KS).unwrap();
        assert_eq!(r.ap, 1.0);
        assert_eq!(r.ap50, 1.0);
        assert_eq!(r.ap75, 1.0);
        assert!(r.ar.iter().all(|e| e.value == 1.0));
    }

    #[test]
    fn ap_fp_before_tp_halves_ap50() {
        let gts = vec![GtRecord {
            image_id: 0,
            bbox: bx([0.0, 0.0, 10.0, 10.0]),
        }];
        let dets = vec![
            DetectionRecord {
                image_id: 0,
                bbox: bx([50.0, 50.0, 60.0, 60.0]),
                score: 0.9,
            },
            DetectionRecord {
                image_id: 0,
                bbox: bx([0.0, 0.0, 10.0, 10.0]),
                score: 0.8,
            },
        ];
        let r = average_precision(&dets, &gts, &coco_iou_thresholds(), &DEFAULT_AR_KS).unwrap();
        assert_abs_diff_eq!(r.ap50, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn ap_rejects_out_of_range_scores() {
        let gts = vec![GtRecord {
            image_id: 0,
            bbox: bx([0.0, 0.0, 10.0, 10.0]),
        }];
        for bad in [f64::NAN, -0.1, 1.5] {
            let dets = vec![DetectionRecord {
                image_id: 0,
                bbox: bx([0.0, 0.0, 10.0, 10.0]),
                score: bad,
            }];
            assert!(
                average_precision(&dets, &gts, &coco_iou_thresholds(), &DEFAULT_AR_KS).is_err()
            );
        }
    }

    #[test]
    fn ap_no_detections_is_zero() {
        let gts = vec![GtRecord {
            image_id: 0,
            bbox: bx([0.0, 0.0, 10.0, 10.0]),
        }];
        let r = average_precision(&[], &gts, &coco_iou_thresholds(), &DEFAULT_AR_KS).unwrap();
        assert_eq!(r.ap, 0.0);
    }

    #[test]
    fn ap_rank_only_under_monotone_rescale() {
        let gts = vec![
            GtRecord {
                image_id: 0,
                bbox: bx([0.0, 0.0, 10.0, 10.0]),
            },
            GtRecord {
                image_id: 1,
                bbox: bx([5.0, 5.0, 25.0, 25.0]),
            },
        ];
        let dets = vec![
            DetectionRecord {
                image_id: 0,
                bbox: bx([1.0, 0.0, 10.0, 10.0]),
                score: 0.7,
            },
            DetectionRecord {
                image_id: 1,
                bbox: bx([5.0, 5.0, 24.0, 26.0]),
                score: 0.4,
            },
            DetectionRecord {
                image_id: 1,
                bbox: bx([40.0, 40.0, 50.0, 50.0]),
                score: 0.2,
            },
        ];
        let a = average_precision(&dets, &gts, &coco_iou_thresholds(), &DEFAULT_AR_KS).unwrap();
        let rescaled: Vec<DetectionRecord> = dets
            .iter()
            .map(|d| DetectionRecord {
                score: (d.score * 0.5).sqrt(), // strictly monotone on [0, 1]
                ..d.clone()
            })
            .collect();
        let b = average_precision(&rescaled, &gts, &coco_iou_thresholds(), &DEFAULT_AR_KS).unwrap();
        assert_eq!(a.ap, b.ap);
        assert_eq!(a.ap50, b.ap50);
    }

    #[test]
    fn coco_parsing_reports_record_index() {
        let good = r#"[{"image_id": 1, "bbox": [0, 0, 5, 5], "score": 0.5}]"#;
        assert_eq!(parse_coco_detections(good).unwrap().len(), 1);

        let missing_score = r#"[{"image_id": 1, "bbox": [0, 0, 5, 5]}]"#;
        let err = parse_coco_detections(missing_score).unwrap_err();
        assert!(err.to_string().contains("record 0"));

        let bad_second = r#"[{"image_id": 1, "bbox": [0, 0, 5, 5], "score": 0.5},
                             {"image_id": 2, "bbox": [0, 0], "score": 0.5}]"#;
        let err = parse_coco_detections(bad_second).unwrap_err();
        assert!(err.to_string().contains("record 1"));

        // gts tolerate a missing score.
        assert_eq!(parse_coco_gts(missing_score).unwrap().len(), 1);
    }
}

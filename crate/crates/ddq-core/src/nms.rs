//! Duplicate query removal: class-agnostic NMS applied as a pre-processing
//! filter, plus the top-k baseline it is compared against and the per-stage
//! budget scheduler.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BoxList};
use crate::pyramid::QuerySet;

/// Duplicate-removal configuration: suppression threshold and the query
/// budget kept before each refinement stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqrConfig {
    pub iou_threshold: f64,
    pub stage_budgets: Vec<usize>,
}

impl Default for DqrConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.7,
            stage_budgets: vec![300, 200],
        }
    }
}

impl DqrConfig {
    pub fn new(iou_threshold: f64, stage_budgets: Vec<usize>) -> Result<Self> {
        let cfg = Self {
            iou_threshold,
            stage_budgets,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(Error::Config(format!(
                "iou_threshold must lie strictly inside (0, 1), got {}",
                self.iou_threshold
            )));
        }
        if self.stage_budgets.is_empty() {
            return Err(Error::Config("stage_budgets must be non-empty".into()));
        }
        if self.stage_budgets.contains(&0) {
            return Err(Error::Config("stage budgets must be positive".into()));
        }
        if self.stage_budgets.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Config(format!(
                "stage budgets must be non-increasing, got {:?}",
                self.stage_budgets
            )));
        }
        Ok(())
    }
}

/// Candidate visit order: descending score, ties broken by lower index.
fn score_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("scores are validated finite")
            .then(a.cmp(&b))
    });
    order
}

/// Greedy class-agnostic NMS over a scored box list. Returns indices into
/// the input, in descending score order. A candidate is suppressed when its
/// IoU with any already-kept box reaches `iou_threshold`.
pub fn nms_indices(
    boxes: &BoxList,
    iou_threshold: f64,
    max_keep: Option<usize>,
) -> Result<Vec<usize>> {
    if !(iou_threshold > 0.0 && iou_threshold < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "nms iou threshold must lie strictly inside (0, 1), got {iou_threshold}"
        )));
    }
    let scores = boxes.scores().ok_or(Error::MissingScores)?;
    let cap = max_keep.unwrap_or(boxes.len());
    let mut kept: Vec<usize> = Vec::new();
    for &idx in &score_order(scores) {
        if kept.len() >= cap {
            break;
        }
        let candidate = boxes.get(idx);
        let duplicate = kept
            .iter()
            .any(|&k| iou(boxes.get(k), candidate) >= iou_threshold);
        if !duplicate {
            kept.push(idx);
        }
    }
    Ok(kept)
}

/// NMS over a query set: survivors plus the kept indices into the input.
pub fn class_agnostic_nms(
    queries: &QuerySet,
    iou_threshold: f64,
    max_keep: Option<usize>,
) -> Result<(QuerySet, Vec<usize>)> {
    let kept = nms_indices(&queries.scored_box_list(), iou_threshold, max_keep)?;
    Ok((queries.select(&kept), kept))
}

/// Keep the k highest-scoring queries, ties broken by lower original index.
/// `k >= len` returns the whole set in descending score order.
pub fn topk_by_score(queries: &QuerySet, k: usize) -> QuerySet {
    let mut order = score_order(queries.scores());
    order.truncate(k);
    queries.select(&order)
}

/// Apply NMS with the budget configured for the given cascade stage.
pub fn cascade_select(queries: &QuerySet, cfg: &DqrConfig, stage: usize) -> Result<QuerySet> {
    cfg.validate()?;
    let budget = *cfg.stage_budgets.get(stage).ok_or(Error::StageOutOfRange {
        stage,
        budgets: cfg.stage_budgets.len(),
    })?;
    let (survivors, _) = class_agnostic_nms(queries, cfg.iou_threshold, Some(budget))?;
    Ok(survivors)
}

//! Classification and regression losses with analytic input-space gradients,
//! plus the duplicate-query gradient ratio that quantifies how two identical
//! queries competing for one ground truth scale (and can invert) the
//! positive score gradient.

use serde::{Deserialize, Serialize};

use crate::assign::{AssignmentResult, CostWeights};
use crate::error::{Error, Result};
use crate::geometry::{iou, normalized_center_l1, BBox, BoxList};
use crate::pyramid::QuerySet;

/// Probabilities are clamped this far away from 0 and 1 before logs.
pub const PROB_CLAMP: f64 = 1e-12;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Cross entropy with a soft target: `-(t*ln(p) + (1-t)*ln(1-p))`.
fn cross_entropy(p: f64, target: f64) -> f64 {
    let p = clamp_prob(p);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

/// Binary cross-entropy loss for a hard 0/1 target.
pub fn bce(p: f64, positive: bool) -> f64 {
    cross_entropy(p, if positive { 1.0 } else { 0.0 })
}

/// Analytic d(bce)/dp at the clamped probability.
pub fn bce_grad(p: f64, positive: bool) -> f64 {
    let p = clamp_prob(p);
    if positive {
        -1.0 / p
    } else {
        1.0 / (1.0 - p)
    }
}

/// Gradient ratio `alpha = 1 - p / (1 - p)` between the duplicated-pair loss
/// `-ln(p1) - ln(1 - p2)` at `p1 = p2 = p` and the solo loss `-ln(p)`.
/// Below 1 for any p, zero at p = 0.5, negative beyond it.
pub fn duplicate_gradient_ratio(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "gradient ratio is undefined at p = {p}; need 0 < p < 1"
        )));
    }
    Ok(1.0 - p / (1.0 - p))
}

/// Quality focal loss: `|target - sigma|^beta * cross_entropy(sigma, target)`
/// with the prediction's IoU as the soft classification target.
pub fn qfl(sigma: f64, target: f64, beta: f64) -> Result<f64> {
    if beta < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "qfl beta must be non-negative, got {beta}"
        )));
    }
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::InvalidArgument(format!(
            "qfl target must lie in [0, 1], got {target}"
        )));
    }
    // The modulating factor uses the raw sigma so sigma == target gives an
    // exact zero; only the logs see the clamped value.
    Ok((target - sigma).abs().powf(beta) * cross_entropy(sigma, target))
}

/// Analytic d(qfl)/d(sigma). Undefined exactly at sigma == target for
/// beta <= 1; callers check gradients away from that point.
pub fn qfl_grad(sigma: f64, target: f64, beta: f64) -> Result<f64> {
    if beta < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "qfl beta must be non-negative, got {beta}"
        )));
    }
    let diff = sigma - target;
    let s = clamp_prob(sigma);
    let ce = cross_entropy(sigma, target);
    let ce_grad = -target / s + (1.0 - target) / (1.0 - s);
    let factor = diff.abs().powf(beta);
    let factor_grad = if beta == 0.0 {
        0.0
    } else {
        beta * diff.abs().powf(beta - 1.0) * diff.signum()
    };
    Ok(factor_grad * ce + factor * ce_grad)
}

/// L1 (normalized center form) and GIoU terms of the regression loss.
pub fn regression_loss(pred: &BBox, gt: &BBox, image_w: f64, image_h: f64) -> Result<(f64, f64)> {
    if gt.is_degenerate() {
        return Err(Error::InvalidBox(
            "regression target box is degenerate".into(),
        ));
    }
    if image_w <= 0.0 || image_h <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "image size must be positive, got {image_w}x{image_h}"
        )));
    }
    let l1 = normalized_center_l1(pred, gt, image_w, image_h);
    let giou_term = 1.0 - crate::geometry::giou(pred, gt)?;
    Ok((l1, giou_term))
}

/// Analytic gradients of the two regression terms with respect to the
/// predicted corners `(x1, y1, x2, y2)`. Piecewise-smooth; exact coordinate
/// ties sit on the kinks.
pub fn regression_grad(
    pred: &BBox,
    gt: &BBox,
    image_w: f64,
    image_h: f64,
) -> Result<([f64; 4], [f64; 4])> {
    if gt.is_degenerate() {
        return Err(Error::InvalidBox(
            "regression target box is degenerate".into(),
        ));
    }

    // L1 term: mean of |d_cx|/W, |d_cy|/H, |d_w|/W, |d_h|/H.
    let pc = pred.center_form();
    let gc = gt.center_form();
    let s_cx = (pc[0] - gc[0]).signum();
    let s_cy = (pc[1] - gc[1]).signum();
    let s_w = (pc[2] - gc[2]).signum();
    let s_h = (pc[3] - gc[3]).signum();
    let l1_grad = [
        0.25 * (0.5 * s_cx - s_w) / image_w,
        0.25 * (0.5 * s_cy - s_h) / image_h,
        0.25 * (0.5 * s_cx + s_w) / image_w,
        0.25 * (0.5 * s_cy + s_h) / image_h,
    ];

    // GIoU term: giou = I/U - (E - U)/E, so d(1 - giou) = -d(giou).
    let (px1, py1, px2, py2) = (pred.x1, pred.y1, pred.x2, pred.y2);
    let (gx1, gy1, gx2, gy2) = (gt.x1, gt.y1, gt.x2, gt.y2);

    let iw = (px2.min(gx2) - px1.max(gx1)).max(0.0);
    let ih = (py2.min(gy2) - py1.max(gy1)).max(0.0);
    let inter = iw * ih;
    let overlap = iw > 0.0 && ih > 0.0;

    // d(iw)/d(px1), d(iw)/d(px2) and the y analogues.
    let diw_dx1 = if overlap && px1 > gx1 { -1.0 } else { 0.0 };
    let diw_dx2 = if overlap && px2 < gx2 { 1.0 } else { 0.0 };
    let dih_dy1 = if overlap && py1 > gy1 { -1.0 } else { 0.0 };
    let dih_dy2 = if overlap && py2 < gy2 { 1.0 } else { 0.0 };
    let d_inter = [diw_dx1 * ih, dih_dy1 * iw, diw_dx2 * ih, dih_dy2 * iw];

    let (pw, ph) = (pred.width(), pred.height());
    let d_area = [-ph, -pw, ph, pw];

    let union = pred.area() + gt.area() - inter;
    let d_union: Vec<f64> = (0..4).map(|i| d_area[i] - d_inter[i]).collect();

    let ew = px2.max(gx2) - px1.min(gx1);
    let eh = py2.max(gy2) - py1.min(gy1);
    let enc = ew * eh;
    let dew_dx1 = if px1 < gx1 { -1.0 } else { 0.0 };
    let dew_dx2 = if px2 > gx2 { 1.0 } else { 0.0 };
    let deh_dy1 = if py1 < gy1 { -1.0 } else { 0.0 };
    let deh_dy2 = if py2 > gy2 { 1.0 } else { 0.0 };
    let d_enc = [dew_dx1 * eh, deh_dy1 * ew, dew_dx2 * eh, deh_dy2 * ew];

    let mut giou_grad = [0.0; 4];
    for i in 0..4 {
        // d(I/U) + d(U/E); the constant -1 in -(E-U)/E = U/E - 1 drops out.
        let d_iou = (d_inter[i] * union - inter * d_union[i]) / (union * union);
        let d_ratio = (d_union[i] * enc - union * d_enc[i]) / (enc * enc);
        giou_grad[i] = -(d_iou + d_ratio);
    }
    Ok((l1_grad, giou_grad))
}

/// How matched queries are scored by the classification term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ClsLossKind {
    /// Hard target: matched queries aim at 1, the rest at 0.
    Bce,
    /// Soft target: matched queries aim at their IoU with the matched
    /// ground truth.
    Qfl { beta: f64 },
}

impl Default for ClsLossKind {
    fn default() -> Self {
        ClsLossKind::Qfl { beta: 2.0 }
    }
}

/// Weighted loss terms. The classification term is averaged over
/// `num_matched + 1` (never zero), regression over `num_matched`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls_loss: f64,
    pub l1_loss: f64,
    pub giou_loss: f64,
    pub total: f64,
}

/// Set prediction loss under a one-to-one matching: matched queries get a
/// positive classification target plus regression terms, everything else is
/// pushed towards zero.
pub fn set_prediction_loss(
    queries: &QuerySet,
    gts: &BoxList,
    matching: &AssignmentResult,
    weights: CostWeights,
    kind: ClsLossKind,
    image_w: f64,
    image_h: f64,
) -> Result<LossBreakdown> {
    let mut is_matched = vec![false; queries.len()];
    let mut gt_seen = vec![false; gts.len()];
    for pair in &matching.pairs {
        if pair.query >= queries.len() || pair.gt >= gts.len() {
            return Err(Error::InvalidArgument(format!(
                "matching pair ({}, {}) out of range for {} queries / {} gts",
                pair.query,
                pair.gt,
                queries.len(),
                gts.len()
            )));
        }
        if is_matched[pair.query] || gt_seen[pair.gt] {
            return Err(Error::InvalidArgument(
                "matching repeats a query or ground-truth index".into(),
            ));
        }
        is_matched[pair.query] = true;
        gt_seen[pair.gt] = true;
    }

    let mut cls_sum = 0.0;
    let mut l1_sum = 0.0;
    let mut giou_sum = 0.0;
    for pair in &matching.pairs {
        let score = queries.scores()[pair.query];
        let qbox = &queries.boxes()[pair.query];
        let gt = gts.get(pair.gt);
        cls_sum += match kind {
            ClsLossKind::Bce => bce(score, true),
            ClsLossKind::Qfl { beta } => qfl(score, iou(qbox, gt), beta)?,
        };
        let (l1, giou_term) = regression_loss(qbox, gt, image_w, image_h)?;
        l1_sum += l1;
        giou_sum += giou_term;
    }
    for (&score, &matched) in queries.scores().iter().zip(&is_matched) {
        if !matched {
            cls_sum += match kind {
                ClsLossKind::Bce => bce(score, false),
                ClsLossKind::Qfl { beta } => qfl(score, 0.0, beta)?,
            };
        }
    }

    let num_matched = matching.pairs.len();
    let cls_loss = cls_sum / (num_matched + 1) as f64;
    let (l1_loss, giou_loss) = if num_matched == 0 {
        (0.0, 0.0)
    } else {
        (l1_sum / num_matched as f64, giou_sum / num_matched as f64)
    };
    Ok(LossBreakdown {
        cls_loss,
        l1_loss,
        giou_loss,
        total: weights.w_cls * cls_loss + weights.w_l1 * l1_loss + weights.w_giou * giou_loss,
    })
}

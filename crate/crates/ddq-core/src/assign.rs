//! One-to-one query/ground-truth matching: cost construction, a minimum-cost
//! bipartite solver, and the center-prior candidate restriction that limits
//! positives to the points nearest each ground-truth center per level.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{giou, normalized_center_l1, BoxList};
use crate::matrix::Matrix;
use crate::pyramid::{FeaturePyramid, QuerySet};

/// Weights of the matching cost terms; defaults follow the common
/// convention (classification 2, L1 5, GIoU 2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub w_cls: f64,
    pub w_l1: f64,
    pub w_giou: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            w_cls: 2.0,
            w_l1: 5.0,
            w_giou: 2.0,
        }
    }
}

/// Query-by-ground-truth cost matrix with per-term breakdown. Forbidden
/// (non-candidate) pairs hold a sentinel strictly larger than any feasible
/// matching total, so the solver only falls back to them when a ground truth
/// has no candidate left; such pairs are discarded from results.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    pub values: Matrix,
    pub cls: Matrix,
    pub l1: Matrix,
    pub giou: Matrix,
    pub weights: CostWeights,
    candidate: Vec<bool>,
    forbidden_cost: f64,
}

impl CostMatrix {
    pub fn num_queries(&self) -> usize {
        self.values.rows()
    }

    pub fn num_gts(&self) -> usize {
        self.values.cols()
    }

    pub fn is_candidate(&self, query: usize, gt: usize) -> bool {
        self.candidate[query * self.values.cols() + gt]
    }

    pub fn forbidden_cost(&self) -> f64 {
        self.forbidden_cost
    }

    /// Overwrite non-candidate pairs with the forbidden sentinel.
    pub fn apply_candidate_mask(&mut self, mask: &CandidateMask, origin_rows: &[usize]) {
        debug_assert_eq!(origin_rows.len(), self.values.rows());
        for (row, &point) in origin_rows.iter().enumerate() {
            for gt in 0..self.values.cols() {
                if !mask.get(point, gt) {
                    self.candidate[row * self.values.cols() + gt] = false;
                    self.values.set(row, gt, self.forbidden_cost);
                }
            }
        }
    }
}

/// Build the matching cost: `w_cls * (-score) + w_l1 * L1 + w_giou * (1 - giou)`,
/// L1 taken on center-form boxes normalized by the image size.
pub fn build_cost_matrix(
    queries: &QuerySet,
    gts: &BoxList,
    weights: CostWeights,
    image_w: f64,
    image_h: f64,
) -> Result<CostMatrix> {
    if gts.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    if image_w <= 0.0 || image_h <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "image size must be positive, got {image_w}x{image_h}"
        )));
    }
    let (nq, ng) = (queries.len(), gts.len());
    let mut cls = Matrix::zeros(nq, ng);
    let mut l1 = Matrix::zeros(nq, ng);
    let mut gi = Matrix::zeros(nq, ng);
    let mut values = Matrix::zeros(nq, ng);
    for qi in 0..nq {
        let qbox = &queries.boxes()[qi];
        let score = queries.scores()[qi];
        for gj in 0..ng {
            let gt = gts.get(gj);
            let c = -score;
            let d = normalized_center_l1(qbox, gt, image_w, image_h);
            let g = 1.0 - giou(qbox, gt)?;
            cls.set(qi, gj, c);
            l1.set(qi, gj, d);
            gi.set(qi, gj, g);
            values.set(
                qi,
                gj,
                weights.w_cls * c + weights.w_l1 * d + weights.w_giou * g,
            );
        }
    }
    // Sentinel above any achievable matching total, so one more feasible
    // pair always beats one more forbidden/padded pair.
    let n = nq.max(ng);
    let forbidden_cost = (2 * n + 10) as f64 * (values.max_abs() + 1.0);
    Ok(CostMatrix {
        values,
        cls,
        l1,
        giou: gi,
        weights,
        candidate: vec![true; nq * ng],
        forbidden_cost,
    })
}

/// Cost breakdown of one matched pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairCost {
    pub cls: f64,
    pub l1: f64,
    pub giou: f64,
    pub total: f64,
}

/// One matched query/ground-truth pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub query: usize,
    pub gt: usize,
    pub cost: PairCost,
}

/// One-to-one matching result. Ground truths without any candidate are
/// reported in `unmatched_gts` rather than erroring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentResult {
    pub pairs: Vec<MatchedPair>,
    pub unmatched_queries: Vec<usize>,
    pub unmatched_gts: Vec<usize>,
    pub total_cost: f64,
}

impl AssignmentResult {
    pub fn gt_of_query(&self, query: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.query == query).map(|p| p.gt)
    }

    pub fn query_of_gt(&self, gt: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.gt == gt).map(|p| p.query)
    }
}

/// Jonker-Volgenant shortest augmenting path LSAP; requires `rows <= cols`.
/// Returns the matched column per row. Ties resolve to the lowest column
/// index, which makes results deterministic.
fn lsap_min(cost: &Matrix) -> Vec<usize> {
    let n = cost.rows();
    let m = cost.cols();
    assert!(n <= m, "lsap_min requires rows <= cols");
    if n == 0 {
        return Vec::new();
    }
    let mut u = vec![0.0_f64; n];
    let mut v = vec![0.0_f64; m + 1];
    // p[j] = row currently matched to column j; column m is the virtual root.
    let mut p = vec![usize::MAX; m + 1];
    let mut way = vec![0_usize; m];

    for row in 0..n {
        p[m] = row;
        let mut j0 = m;
        let mut minv = vec![f64::INFINITY; m];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = usize::MAX;
            for j in 0..m {
                if used[j] {
                    continue;
                }
                let cur = cost.get(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            debug_assert!(j1 != usize::MAX, "augmenting path search exhausted");
            for j in 0..=m {
                if used[j] {
                    if p[j] != usize::MAX {
                        u[p[j]] += delta;
                    }
                    if j < m {
                        v[j] -= delta;
                    }
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == usize::MAX {
                break;
            }
        }
        // Flip the augmenting path back to the root.
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == m {
                break;
            }
        }
    }

    let mut row_to_col = vec![usize::MAX; n];
    for (j, &r) in p.iter().enumerate().take(m) {
        if r != usize::MAX {
            row_to_col[r] = j;
        }
    }
    row_to_col
}

/// Minimum-cost one-to-one matching over the cost matrix. Every ground
/// truth with at least one candidate is covered; forbidden pairs never
/// appear in the result. When ground truths outnumber queries the matrix is
/// padded with sentinel columns and the overflow reported unmatched.
pub fn hungarian(c: &CostMatrix) -> AssignmentResult {
    let nq = c.num_queries();
    let ng = c.num_gts();
    if ng == 0 || nq == 0 {
        return AssignmentResult {
            pairs: Vec::new(),
            unmatched_queries: (0..nq).collect(),
            unmatched_gts: (0..ng).collect(),
            total_cost: 0.0,
        };
    }

    // Solve gt-major so the row count is the (typically much smaller)
    // ground-truth count; pad columns when gts outnumber queries.
    let cols = nq.max(ng);
    let mut solve = Matrix::zeros(ng, cols);
    for g in 0..ng {
        for q in 0..cols {
            let v = if q < nq {
                c.values.get(q, g)
            } else {
                c.forbidden_cost()
            };
            solve.set(g, q, v);
        }
    }
    let gt_to_col = lsap_min(&solve);

    let mut pairs = Vec::new();
    let mut unmatched_gts = Vec::new();
    let mut matched_queries = vec![false; nq];
    let mut total_cost = 0.0;
    for (g, &col) in gt_to_col.iter().enumerate() {
        if col >= nq || !c.is_candidate(col, g) {
            unmatched_gts.push(g);
            continue;
        }
        let total = c.values.get(col, g);
        pairs.push(MatchedPair {
            query: col,
            gt: g,
            cost: PairCost {
                cls: c.cls.get(col, g),
                l1: c.l1.get(col, g),
                giou: c.giou.get(col, g),
                total,
            },
        });
        matched_queries[col] = true;
        total_cost += total;
    }
    pairs.sort_by_key(|p| p.query);
    let unmatched_queries = (0..nq).filter(|&q| !matched_queries[q]).collect();
    AssignmentResult {
        pairs,
        unmatched_queries,
        unmatched_gts,
        total_cost,
    }
}

/// Boolean candidate mask over (pyramid point, ground truth) pairs.
#[derive(Debug, Clone)]
pub struct CandidateMask {
    num_points: usize,
    num_gts: usize,
    bits: Vec<bool>,
}

impl CandidateMask {
    pub fn num_points(&self) -> usize {
        self.num_points
    }

    pub fn num_gts(&self) -> usize {
        self.num_gts
    }

    #[inline]
    pub fn get(&self, point: usize, gt: usize) -> bool {
        self.bits[point * self.num_gts + gt]
    }

    /// Points that are a candidate of at least one ground truth.
    pub fn candidate_points(&self) -> Vec<usize> {
        (0..self.num_points)
            .filter(|&p| (0..self.num_gts).any(|g| self.get(p, g)))
            .collect()
    }
}

/// For each ground truth and each pyramid level, mark the `min(k, points on
/// level)` points closest (Euclidean) to the ground-truth center. Distance
/// ties resolve to the lower point index.
pub fn center_prior_candidates(
    pyramid: &FeaturePyramid,
    gts: &BoxList,
    k: usize,
) -> Result<CandidateMask> {
    if k == 0 {
        return Err(Error::InvalidArgument("center prior needs k >= 1".into()));
    }
    let num_points = pyramid.num_points();
    let num_gts = gts.len();
    let mut bits = vec![false; num_points * num_gts];

    for (gj, gt) in gts.boxes().iter().enumerate() {
        let [cx, cy, _, _] = gt.center_form();
        let mut level_offset = 0usize;
        for lvl in pyramid.levels() {
            let count = lvl.num_points();
            let mut by_distance: Vec<(f64, usize)> = (0..count)
                .map(|i| {
                    let (px, py) = lvl.point_at(i);
                    let d2 = (px - cx).powi(2) + (py - cy).powi(2);
                    (d2, i)
                })
                .collect();
            by_distance.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            for &(_, i) in by_distance.iter().take(k.min(count)) {
                bits[(level_offset + i) * num_gts + gj] = true;
            }
            level_offset += count;
        }
    }
    Ok(CandidateMask {
        num_points,
        num_gts,
        bits,
    })
}

/// Global point index of a query origin within its pyramid.
fn origin_point_index(pyramid: &FeaturePyramid, queries: &QuerySet) -> Result<Vec<usize>> {
    let mut offsets = Vec::new();
    let mut acc = 0usize;
    for lvl in pyramid.levels() {
        offsets.push((lvl.level, acc, lvl.num_points()));
        acc += lvl.num_points();
    }
    queries
        .origins()
        .iter()
        .map(|o| {
            let (_, off, count) =
                offsets
                    .iter()
                    .find(|(l, _, _)| *l == o.level)
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "query origin level {} not in pyramid",
                            o.level
                        ))
                    })?;
            if o.index >= *count {
                return Err(Error::InvalidArgument(format!(
                    "query origin index {} out of range for level {}",
                    o.index, o.level
                )));
            }
            Ok(off + o.index)
        })
        .collect()
}

/// Bipartite matching restricted to center-prior candidates: the cost matrix
/// is masked so that only the top-k nearest points per level can be matched
/// to each ground truth.
pub fn center_prior_match(
    queries: &QuerySet,
    pyramid: &FeaturePyramid,
    gts: &BoxList,
    k: usize,
    weights: CostWeights,
) -> Result<AssignmentResult> {
    let mask = center_prior_candidates(pyramid, gts, k)?;
    let point_of_query = origin_point_index(pyramid, queries)?;

    // Rows that can never match are dropped before solving; they are
    // reinstated as unmatched queries afterwards.
    let rows: Vec<usize> = (0..queries.len())
        .filter(|&q| (0..gts.len()).any(|g| mask.get(point_of_query[q], g)))
        .collect();
    let sub = queries.select(&rows);
    let mut cost = build_cost_matrix(
        &sub,
        gts,
        weights,
        pyramid.image_w as f64,
        pyramid.image_h as f64,
    )?;
    let sub_points: Vec<usize> = rows.iter().map(|&q| point_of_query[q]).collect();
    cost.apply_candidate_mask(&mask, &sub_points);

    let sub_result = hungarian(&cost);
    let mut matched = vec![false; queries.len()];
    let pairs: Vec<MatchedPair> = sub_result
        .pairs
        .into_iter()
        .map(|p| {
            let query = rows[p.query];
            matched[query] = true;
            MatchedPair { query, ..p }
        })
        .collect();
    Ok(AssignmentResult {
        pairs,
        unmatched_queries: (0..queries.len()).filter(|&q| !matched[q]).collect(),
        unmatched_gts: sub_result.unmatched_gts,
        total_cost: sub_result.total_cost,
    })
}

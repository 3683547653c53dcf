//! Experiment runners: recall comparisons between top-k selection and
//! duplicate removal, the duplicate-gradient study, and the staged cascade.
//! Trials run on independent derived RNG streams so reports are identical
//! regardless of how many worker threads execute them.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::assign::{build_cost_matrix, hungarian, CostWeights};
use crate::error::Result;
use crate::eval::{average_precision, coco_iou_thresholds, DetectionRecord, GtRecord};
use crate::geometry::{iou, BBox, BoxList};
use crate::loss::{bce, bce_grad, duplicate_gradient_ratio};
use crate::nms::{cascade_select, class_agnostic_nms, topk_by_score, DqrConfig};
use crate::pyramid::{build_pyramid, QuerySet};
use crate::sim::config::{ExperimentConfig, ExperimentKind, ResponseModel};
use crate::sim::response::simulate_responses;
use crate::sim::scene::{generate_scene, Scene};

/// One measured value set for a (method, sweep position, trial) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub method: String,
    pub x: f64,
    pub seed: u64,
    pub values: Vec<f64>,
}

/// Aggregate over trials for a (method, sweep position) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub x: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub n: usize,
}

/// One step of a gradient-descent trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub method: String,
    pub step: usize,
    pub loss: f64,
    pub score: f64,
    pub alpha: f64,
}

/// Full experiment output: per-trial rows, aggregates, optional descent
/// traces, and the seeds that produced everything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub x_label: String,
    pub value_labels: Vec<String>,
    pub master_seed: u64,
    pub seeds: Vec<u64>,
    pub rows: Vec<TrialRow>,
    pub summary: Vec<SummaryRow>,
    pub traces: Vec<TraceRow>,
}

impl ExperimentReport {
    /// Mean of the first value column for a (method, x) cell.
    pub fn mean_of(&self, method: &str, x: f64) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.method == method && (s.x - x).abs() < 1e-9)
            .and_then(|s| s.mean.first().copied())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-trial seed bundle derived from (master seed, trial index).
#[derive(Debug, Clone, Copy)]
struct TrialSeeds {
    scene: u64,
    response: u64,
    refine: u64,
}

fn trial_seeds(master: u64, trial: usize) -> TrialSeeds {
    let base = splitmix64(master ^ splitmix64(trial as u64));
    TrialSeeds {
        scene: splitmix64(base ^ 0x5343_454e),    // "SCEN"
        response: splitmix64(base ^ 0x5245_5350), // "RESP"
        refine: splitmix64(base ^ 0x5246_494e),   // "RFIN"
    }
}

/// Run trial bodies across up to `threads` workers and merge the results in
/// trial order, so the outcome is independent of scheduling.
fn run_trials<T, F>(n: usize, threads: usize, body: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let workers = threads.max(1).min(n.max(1));
    if workers <= 1 {
        return (0..n).map(body).collect();
    }
    let mut slots: Vec<Option<Result<T>>> = (0..n).map(|_| None).collect();
    std::thread::scope(|scope| {
        let body = &body;
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                scope.spawn(move || {
                    let mut out = Vec::new();
                    let mut t = w;
                    while t < n {
                        out.push((t, body(t)));
                        t += workers;
                    }
                    out
                })
            })
            .collect();
        for handle in handles {
            for (idx, result) in handle.join().expect("trial worker panicked") {
                slots[idx] = Some(result);
            }
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.expect("every trial produces a result"))
        .collect()
}

fn summarize(rows: &[TrialRow], num_values: usize) -> Vec<SummaryRow> {
    let mut cells: Vec<(String, f64)> = Vec::new();
    for row in rows {
        if !cells
            .iter()
            .any(|(m, x)| m == &row.method && (x - row.x).abs() < 1e-12)
        {
            cells.push((row.method.clone(), row.x));
        }
    }
    cells
        .into_iter()
        .map(|(method, x)| {
            let values: Vec<&TrialRow> = rows
                .iter()
                .filter(|r| r.method == method && (r.x - x).abs() < 1e-12)
                .collect();
            let n = values.len();
            let mut mean = vec![0.0; num_values];
            let mut std = vec![0.0; num_values];
            for v in 0..num_values {
                let sum: f64 = values.iter().map(|r| r.values[v]).sum();
                mean[v] = sum / n as f64;
                if n > 1 {
                    let var: f64 = values
                        .iter()
                        .map(|r| (r.values[v] - mean[v]).powi(2))
                        .sum::<f64>()
                        / (n - 1) as f64;
                    std[v] = var.sqrt();
                }
            }
            SummaryRow {
                method,
                x,
                mean,
                std,
                n,
            }
        })
        .collect()
}

pub const METHOD_TOPK: &str = "topk";
pub const METHOD_NMS: &str = "nms";

/// Compare top-k selection against duplicate removal at equal budgets.
/// Sweeps query budgets by default, or duplication factors (at the first
/// budget) when `recall.duplication_factors` is non-empty.
pub fn run_recall_experiment(cfg: &ExperimentConfig, threads: usize) -> Result<ExperimentReport> {
    cfg.validate()?;
    let rc = &cfg.recall;
    let factor_mode = !rc.duplication_factors.is_empty();
    // (x, duplication, budget) per sweep position.
    let sweep: Vec<(f64, usize, usize)> = if factor_mode {
        rc.duplication_factors
            .iter()
            .map(|&f| (f as f64, f, rc.budgets[0]))
            .collect()
    } else {
        rc.budgets
            .iter()
            .map(|&b| (b as f64, cfg.response.duplication, b))
            .collect()
    };

    let trial_rows = run_trials(cfg.trials, threads, |trial| {
        let seeds = trial_seeds(cfg.master_seed, trial);
        let scene = generate_scene(&cfg.scene, seeds.scene)?;
        let pyramid = build_pyramid(scene.image_w, scene.image_h)?;
        let mut rows = Vec::with_capacity(sweep.len() * 2);
        for &(x, duplication, budget) in &sweep {
            let model = ResponseModel {
                duplication,
                ..cfg.response.clone()
            };
            let queries = simulate_responses(&scene, &pyramid, &model, seeds.response)?;

            let selected_topk = topk_by_score(&queries, budget);
            let (selected_nms, _) = class_agnostic_nms(&queries, rc.nms_iou, Some(budget))?;
            for (method, selected) in [(METHOD_TOPK, &selected_topk), (METHOD_NMS, &selected_nms)] {
                let ar = crate::eval::recall_at(
                    &selected.scored_box_list(),
                    &scene.gts,
                    rc.recall_iou,
                    budget,
                );
                rows.push(TrialRow {
                    method: method.to_string(),
                    x,
                    seed: seeds.scene,
                    values: vec![ar],
                });
            }
        }
        Ok((seeds.scene, rows))
    })?;

    let seeds: Vec<u64> = trial_rows.iter().map(|(s, _)| *s).collect();
    let rows: Vec<TrialRow> = trial_rows.into_iter().flat_map(|(_, r)| r).collect();
    let summary = summarize(&rows, 1);
    Ok(ExperimentReport {
        experiment: ExperimentKind::Recall.to_string(),
        x_label: if factor_mode { "dup_factor" } else { "budget" }.to_string(),
        value_labels: vec!["AR".to_string()],
        master_seed: cfg.master_seed,
        seeds,
        rows,
        summary,
        traces: vec![],
    })
}

pub const METHOD_DUPLICATE: &str = "duplicate_pair";
pub const METHOD_DISTINCT: &str = "distinct";
pub const METHOD_DUPLICATE_HIGH: &str = "duplicate_pair_high";

/// Pool classification loss of two identical queries competing for one
/// ground truth under one-to-one matching: the matched query trains toward
/// 1, the other toward 0.
fn duplicate_pool_loss(p: f64) -> f64 {
    bce(p, true) + bce(p, false)
}

/// Measured gradient ratio via central finite differences of the pool and
/// solo losses.
fn measured_alpha(p: f64, h: f64) -> f64 {
    let g_pool = (duplicate_pool_loss(p + h) - duplicate_pool_loss(p - h)) / (2.0 * h);
    let g_solo = (bce(p + h, true) - bce(p - h, true)) / (2.0 * h);
    g_pool / g_solo
}

/// Score-only gradient descent of a pool of queries over one unit ground
/// truth; returns the per-step trace. The duplicated pool keeps its two
/// identical queries tied (they are copies of the same underlying query, so
/// they always score alike).
fn descent_trace(
    method: &str,
    duplicated: bool,
    p0: f64,
    steps: usize,
    lr: f64,
) -> Result<Vec<TraceRow>> {
    let gt = BBox::new(0.0, 0.0, 32.0, 32.0).unwrap();
    let gts = BoxList::new(vec![gt]);
    let mut p = p0;
    let mut trace = Vec::with_capacity(steps);
    for step in 0..steps {
        let n = if duplicated { 2 } else { 1 };
        let queries = QuerySet::from_parts(
            vec![gt; n],
            vec![p; n],
            vec![vec![]; n],
            (0..n)
                .map(|i| crate::pyramid::QueryOrigin { level: 3, index: i })
                .collect(),
        )?;
        let cost = build_cost_matrix(&queries, &gts, CostWeights::default(), 64.0, 64.0)?;
        let matching = hungarian(&cost);
        debug_assert_eq!(matching.pairs.len(), 1);

        let (loss, grad, alpha) = if duplicated {
            (
                duplicate_pool_loss(p),
                bce_grad(p, true) + bce_grad(p, false),
                duplicate_gradient_ratio(p)?,
            )
        } else {
            (bce(p, true), bce_grad(p, true), 1.0)
        };
        trace.push(TraceRow {
            method: method.to_string(),
            step,
            loss,
            score: p,
            alpha,
        });
        p = (p - lr * grad).clamp(0.01, 0.99);
    }
    Ok(trace)
}

/// Duplicate-gradient study: the measured-vs-analytic gradient ratio over a
/// probability grid, plus descent traces for duplicated and deduplicated
/// pools. Fully deterministic; seeds only label the output.
pub fn run_gradient_experiment(
    cfg: &ExperimentConfig,
    _threads: usize,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let gc = &cfg.gradient;
    let h = 1e-6;
    let mut rows = Vec::new();
    for &p in &gc.p_grid() {
        rows.push(TrialRow {
            method: METHOD_DUPLICATE.to_string(),
            x: p,
            seed: cfg.master_seed,
            values: vec![measured_alpha(p, h)],
        });
        // A deduplicated pool is its own solo baseline: the ratio is 1.
        rows.push(TrialRow {
            method: METHOD_DISTINCT.to_string(),
            x: p,
            seed: cfg.master_seed,
            values: vec![1.0],
        });
    }
    let summary = summarize(&rows, 1);

    let mut traces = Vec::new();
    traces.extend(descent_trace(
        METHOD_DISTINCT,
        false,
        gc.initial_p_low,
        gc.descent_steps,
        gc.learning_rate,
    )?);
    traces.extend(descent_trace(
        METHOD_DUPLICATE,
        true,
        gc.initial_p_low,
        gc.descent_steps,
        gc.learning_rate,
    )?);
    traces.extend(descent_trace(
        METHOD_DUPLICATE_HIGH,
        true,
        gc.initial_p_high,
        gc.descent_steps,
        gc.learning_rate,
    )?);

    Ok(ExperimentReport {
        experiment: ExperimentKind::Gradient.to_string(),
        x_label: "p".to_string(),
        value_labels: vec!["alpha".to_string()],
        master_seed: cfg.master_seed,
        seeds: vec![cfg.master_seed],
        rows,
        summary,
        traces,
    })
}

/// Contract surviving boxes towards their best ground truth by `shrink`
/// and re-score them under the response model with fresh noise.
fn refine_queries(
    queries: &QuerySet,
    scene: &Scene,
    model: &ResponseModel,
    shrink: f64,
    rng: &mut ChaCha12Rng,
) -> Result<QuerySet> {
    let (w, h) = (scene.image_w as f64, scene.image_h as f64);
    let mut boxes = Vec::with_capacity(queries.len());
    let mut scores = Vec::with_capacity(queries.len());
    for b in queries.boxes() {
        // Best-overlap ground truth, ties to the lower index.
        let mut target: Option<(f64, &BBox)> = None;
        for g in scene.gts.boxes() {
            let v = iou(b, g);
            if target.is_none_or(|(bv, _)| v > bv) {
                target = Some((v, g));
            }
        }
        let target = target.map(|(_, g)| g);
        let refined = match target {
            Some(gt) => {
                let bc = b.corners();
                let gc = gt.corners();
                let mut c = [0.0; 4];
                for k in 0..4 {
                    c[k] = gc[k] + (bc[k] - gc[k]) * shrink;
                }
                BBox::from_corners(c)?.clip(w, h)
            }
            None => *b,
        };
        let best_iou = scene
            .gts
            .boxes()
            .iter()
            .map(|g| iou(&refined, g))
            .fold(0.0_f64, f64::max);
        let eps: f64 = rng.sample(StandardNormal);
        let score = (best_iou.powf(model.score_gamma) * model.score_scale
            + model.noise_sigma * eps)
            .clamp(0.0, 1.0);
        boxes.push(refined);
        scores.push(score);
    }
    QuerySet::from_parts(
        boxes,
        scores,
        queries.features().to_vec(),
        queries.origins().to_vec(),
    )
}

pub const METHOD_CASCADE: &str = "cascade";

/// Staged selection: NMS with per-stage budgets, interleaved with a crude
/// refinement step (disabled entirely at `shrink = 1.0`). Reports AR and AP
/// of the survivors after each stage.
pub fn run_cascade_experiment(cfg: &ExperimentConfig, threads: usize) -> Result<ExperimentReport> {
    cfg.validate()?;
    let cc = &cfg.cascade;
    let dqr = DqrConfig::new(cc.nms_iou, cc.stage_budgets.clone())?;

    let trial_rows = run_trials(cfg.trials, threads, |trial| {
        let seeds = trial_seeds(cfg.master_seed, trial);
        let scene = generate_scene(&cfg.scene, seeds.scene)?;
        let pyramid = build_pyramid(scene.image_w, scene.image_h)?;
        let mut current = simulate_responses(&scene, &pyramid, &cfg.response, seeds.response)?;
        let mut rng = ChaCha12Rng::seed_from_u64(seeds.refine);

        let gt_records: Vec<GtRecord> = scene
            .gts
            .boxes()
            .iter()
            .map(|&bbox| GtRecord { image_id: 0, bbox })
            .collect();

        let mut rows = Vec::with_capacity(cc.stage_budgets.len());
        for stage in 0..cc.stage_budgets.len() {
            if stage > 0 && cc.shrink < 1.0 {
                current = refine_queries(&current, &scene, &cfg.response, cc.shrink, &mut rng)?;
            }
            current = cascade_select(&current, &dqr, stage)?;
            debug_assert!(current.len() <= cc.stage_budgets[stage]);

            let ar = crate::eval::recall_at(
                &current.scored_box_list(),
                &scene.gts,
                cc.recall_iou,
                cc.stage_budgets[stage],
            );
            let dets: Vec<DetectionRecord> = current
                .boxes()
                .iter()
                .zip(current.scores())
                .map(|(&bbox, &score)| DetectionRecord {
                    image_id: 0,
                    bbox,
                    score,
                })
                .collect();
            let metrics = average_precision(&dets, &gt_records, &coco_iou_thresholds(), &[])?;
            rows.push(TrialRow {
                method: METHOD_CASCADE.to_string(),
                x: stage as f64,
                seed: seeds.scene,
                values: vec![ar, metrics.ap, current.len() as f64],
            });
        }
        Ok((seeds.scene, rows))
    })?;

    let seeds: Vec<u64> = trial_rows.iter().map(|(s, _)| *s).collect();
    let rows: Vec<TrialRow> = trial_rows.into_iter().flat_map(|(_, r)| r).collect();
    let summary = summarize(&rows, 3);
    Ok(ExperimentReport {
        experiment: ExperimentKind::Cascade.to_string(),
        x_label: "stage".to_string(),
        value_labels: vec!["AR".to_string(), "AP".to_string(), "survivors".to_string()],
        master_seed: cfg.master_seed,
        seeds,
        rows,
        summary,
        traces: vec![],
    })
}

/// Dispatch on the configured experiment kind.
pub fn run_experiment(cfg: &ExperimentConfig, threads: usize) -> Result<ExperimentReport> {
    match cfg.experiment {
        ExperimentKind::Recall => run_recall_experiment(cfg, threads),
        ExperimentKind::Gradient => run_gradient_experiment(cfg, threads),
        ExperimentKind::Cascade => run_cascade_experiment(cfg, threads),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::config::{RecallConfig, SceneConfig};

    fn tiny_cfg() -> ExperimentConfig {
        ExperimentConfig {
            trials: 3,
            scene: SceneConfig {
                image_w: 64,
                image_h: 64,
                gt_count: 4,
                min_gt_size: 10.0,
                max_gt_size: 24.0,
                ..SceneConfig::default()
            },
            recall: RecallConfig {
                budgets: vec![8, 32],
                ..RecallConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn recall_report_is_thread_invariant() {
        let cfg = tiny_cfg();
        let a = run_recall_experiment(&cfg, 1).unwrap();
        let b = run_recall_experiment(&cfg, 8).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 3 * 2 * 2);
        assert_eq!(a.x_label, "budget");
    }

    #[test]
    fn recall_saturates_when_budget_covers_everything() {
        // Noiseless, duplication-free, budget beyond the query count: both
        // methods must reach identical recall.
        let mut cfg = tiny_cfg();
        cfg.response.noise_sigma = 0.0;
        cfg.response.box_noise_px = 0.0;
        cfg.recall.budgets = vec![10_000];
        let report = run_recall_experiment(&cfg, 1).unwrap();
        let topk = report.mean_of(METHOD_TOPK, 10_000.0).unwrap();
        let nms = report.mean_of(METHOD_NMS, 10_000.0).unwrap();
        assert_eq!(topk, nms);
        assert!(topk > 0.7, "saturated recall unexpectedly low: {topk}");
    }

    #[test]
    fn heavy_duplication_keeps_nms_ahead_at_every_budget() {
        // Duplication factor 8 with moderate noise: duplicate removal must
        // match or beat top-k selection at every budget in the sweep.
        let cfg = ExperimentConfig {
            master_seed: 42,
            trials: 12,
            scene: SceneConfig {
                image_w: 128,
                image_h: 128,
                gt_count: 14,
                min_gt_size: 8.0,
                max_gt_size: 36.0,
                max_overlap: 0.10,
                max_attempts: 50_000,
            },
            response: crate::sim::config::ResponseModel {
                score_gamma: 2.0,
                score_scale: 0.9,
                noise_sigma: 0.10,
                box_noise_px: 2.5,
                duplication: 8,
                feature_dim: 0,
            },
            recall: RecallConfig {
                budgets: vec![25, 50, 100, 200, 300],
                ..RecallConfig::default()
            },
            ..ExperimentConfig::default()
        };
        let report = run_recall_experiment(&cfg, 4).unwrap();
        for &budget in &[25.0, 50.0, 100.0, 200.0, 300.0] {
            let gap = report.mean_of(METHOD_NMS, budget).unwrap()
                - report.mean_of(METHOD_TOPK, budget).unwrap();
            assert!(gap >= 0.0, "mean gap at budget {budget} is {gap}");
        }
    }

    #[test]
    fn gradient_alpha_matches_closed_form_on_grid() {
        let cfg = ExperimentConfig {
            experiment: ExperimentKind::Gradient,
            ..ExperimentConfig::default()
        };
        let report = run_gradient_experiment(&cfg, 1).unwrap();
        for row in report.rows.iter().filter(|r| r.method == METHOD_DUPLICATE) {
            let expected = duplicate_gradient_ratio(row.x).unwrap();
            assert!(
                (row.values[0] - expected).abs() < 1e-4,
                "alpha mismatch at p={}: measured {} vs {}",
                row.x,
                row.values[0],
                expected
            );
        }
        for row in report.rows.iter().filter(|r| r.method == METHOD_DISTINCT) {
            assert_eq!(row.values[0], 1.0);
        }
    }

    #[test]
    fn gradient_traces_show_stall_and_negative_training() {
        let cfg = ExperimentConfig {
            experiment: ExperimentKind::Gradient,
            ..ExperimentConfig::default()
        };
        let report = run_gradient_experiment(&cfg, 1).unwrap();
        let last = |method: &str| report.traces.iter().rfind(|t| t.method == method).unwrap();
        // The distinct pool converges towards the clamp.
        assert!(last(METHOD_DISTINCT).score > 0.9);
        // The duplicated pool stalls at the 0.5 equilibrium.
        assert!((last(METHOD_DUPLICATE).score - 0.5).abs() < 0.05);
        // Starting above 0.5 the gradient has flipped sign (negative
        // training): alpha < 0 while the score exceeds 0.5.
        for t in report
            .traces
            .iter()
            .filter(|t| t.method == METHOD_DUPLICATE_HIGH)
        {
            if t.score > 0.5 + 1e-9 {
                assert!(t.alpha < 0.0, "alpha {} at p {}", t.alpha, t.score);
            }
        }
        // And the score decays back towards 0.5 rather than converging up.
        assert!((last(METHOD_DUPLICATE_HIGH).score - 0.5).abs() < 0.05);
    }

    #[test]
    fn cascade_respects_budgets_and_is_deterministic() {
        let mut cfg = tiny_cfg();
        cfg.experiment = ExperimentKind::Cascade;
        cfg.cascade.stage_budgets = vec![32, 16];
        let a = run_cascade_experiment(&cfg, 1).unwrap();
        let b = run_cascade_experiment(&cfg, 4).unwrap();
        assert_eq!(a, b);
        for row in &a.rows {
            let stage = row.x as usize;
            assert!(row.values[2] <= cfg.cascade.stage_budgets[stage] as f64);
        }
    }

    #[test]
    fn cascade_without_refinement_never_improves() {
        // shrink = 1.0 disables refinement: selection can only lose recall.
        let mut cfg = tiny_cfg();
        cfg.experiment = ExperimentKind::Cascade;
        cfg.cascade.shrink = 1.0;
        cfg.cascade.stage_budgets = vec![64, 8];
        let report = run_cascade_experiment(&cfg, 1).unwrap();
        for trial in report.seeds.iter() {
            let per_trial: Vec<&TrialRow> =
                report.rows.iter().filter(|r| r.seed == *trial).collect();
            for w in per_trial.windows(2) {
                assert!(w[1].values[0] <= w[0].values[0] + 1e-12);
            }
        }
    }
}

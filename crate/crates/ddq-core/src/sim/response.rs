//! Parametric query responses over a pyramid: each point emits one or more
//! jittered box proposals whose scores follow the configured IoU-to-score
//! model plus Gaussian noise.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::geometry::{iou, BBox};
use crate::pyramid::{FeaturePyramid, QueryOrigin, QuerySet};

use super::config::ResponseModel;
use super::scene::Scene;

/// Nearest ground truth by center distance; ties resolve to the lower index.
fn nearest_gt(scene: &Scene, px: f64, py: f64) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (i, gt) in scene.gts.boxes().iter().enumerate() {
        let [cx, cy, _, _] = gt.center_form();
        let d2 = (px - cx).powi(2) + (py - cy).powi(2);
        if best.is_none_or(|(bd, _)| d2 < bd) {
            best = Some((d2, i));
        }
    }
    best.map(|(_, i)| i)
}

/// Simulate dense query responses: `duplication` queries per pyramid point,
/// boxes jittered around the nearest ground truth (with error growing with
/// distance), scores from `max_gt iou^gamma * scale + sigma * eps`, all
/// clamped to the unit interval. Deterministic per seed.
pub fn simulate_responses(
    scene: &Scene,
    pyramid: &FeaturePyramid,
    model: &ResponseModel,
    seed: u64,
) -> Result<QuerySet> {
    model.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let (w, h) = (scene.image_w as f64, scene.image_h as f64);
    let n = pyramid.num_points() * model.duplication;

    let mut boxes = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n);
    let mut origins = Vec::with_capacity(n);

    for (level, index, px, py) in pyramid.points() {
        let stride = (1u32 << level) as f64;
        let target = nearest_gt(scene, px, py);
        for _ in 0..model.duplication {
            let bbox = match target {
                Some(gi) => {
                    let gt = scene.gts.get(gi);
                    let [cx, cy, gw, gh] = gt.center_form();
                    let dist = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt();
                    let diag = (gw * gw + gh * gh).sqrt().max(1.0);
                    let sigma = model.box_noise_px * (1.0 + dist / diag);
                    let mut c = gt.corners();
                    for v in &mut c {
                        let eps: f64 = rng.sample(StandardNormal);
                        *v += sigma * eps;
                    }
                    // Repair inversions introduced by the jitter.
                    let (x1, x2) = (c[0].min(c[2]), c[0].max(c[2]));
                    let (y1, y2) = (c[1].min(c[3]), c[1].max(c[3]));
                    BBox::new(x1, y1, x2, y2)?.clip(w, h)
                }
                // No objects: a stride-sized box around the point.
                None => BBox::new(
                    px - 0.5 * stride,
                    py - 0.5 * stride,
                    px + 0.5 * stride,
                    py + 0.5 * stride,
                )?
                .clip(w, h),
            };

            let best_iou = scene
                .gts
                .boxes()
                .iter()
                .map(|g| iou(&bbox, g))
                .fold(0.0_f64, f64::max);
            let eps: f64 = rng.sample(StandardNormal);
            let score = (best_iou.powf(model.score_gamma) * model.score_scale
                + model.noise_sigma * eps)
                .clamp(0.0, 1.0);

            let feature = synth_feature(model.feature_dim, &bbox, score, level, w, h);
            boxes.push(bbox);
            scores.push(score);
            features.push(feature);
            origins.push(QueryOrigin { level, index });
        }
    }
    QuerySet::from_parts(boxes, scores, features, origins)
}

/// Deterministic geometric feature vector; a stand-in for learned
/// embeddings, enough to exercise the fusion plumbing.
fn synth_feature(dim: usize, bbox: &BBox, score: f64, level: u8, w: f64, h: f64) -> Vec<f64> {
    let [cx, cy, bw, bh] = bbox.center_form();
    let base = [cx / w, cy / h, bw / w, bh / h, score, level as f64 / 7.0];
    (0..dim)
        .map(|i| base.get(i).copied().unwrap_or(0.0))
        .collect()
}

/// Render per-level feature maps for a scene, in the grid format the RoI
/// operators consume (and serialize as JSON). Each cell holds, per channel:
/// objectness (max IoU of the cell's stride box against the ground truths),
/// inverse distance to the nearest center, and normalized x / y position;
/// further channels repeat the cycle scaled down. Deterministic.
pub fn render_feature_maps(
    scene: &Scene,
    pyramid: &FeaturePyramid,
    channels: usize,
) -> Result<Vec<crate::roi::FeatureMap>> {
    let (w, h) = (scene.image_w as f64, scene.image_h as f64);
    pyramid
        .levels()
        .iter()
        .map(|lvl| {
            let stride = lvl.stride as f64;
            crate::roi::FeatureMap::from_fn(
                lvl.level,
                channels,
                lvl.grid_h as usize,
                lvl.grid_w as usize,
                |row, col, c| {
                    let (px, py) = lvl.point(row as u32, col as u32);
                    let cell = BBox {
                        x1: px - 0.5 * stride,
                        y1: py - 0.5 * stride,
                        x2: px + 0.5 * stride,
                        y2: py + 0.5 * stride,
                    };
                    let objectness = scene
                        .gts
                        .boxes()
                        .iter()
                        .map(|g| iou(&cell, g))
                        .fold(0.0_f64, f64::max);
                    let proximity = match nearest_gt(scene, px, py) {
                        Some(gi) => {
                            let [cx, cy, _, _] = scene.gts.get(gi).center_form();
                            let d = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt();
                            1.0 / (1.0 + d / stride)
                        }
                        None => 0.0,
                    };
                    let cycle = [objectness, proximity, px / w, py / h];
                    let scale = 1.0 / (1 + c / cycle.len()) as f64;
                    cycle[c % cycle.len()] * scale
                },
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pyramid::build_pyramid;
    use crate::sim::config::SceneConfig;
    use crate::sim::scene::generate_scene;

    fn small_scene() -> Scene {
        let cfg = SceneConfig {
            image_w: 64,
            image_h: 64,
            gt_count: 3,
            min_gt_size: 12.0,
            max_gt_size: 24.0,
            ..SceneConfig::default()
        };
        generate_scene(&cfg, 11).unwrap()
    }

    #[test]
    fn noiseless_scores_equal_best_iou() {
        let scene = small_scene();
        let pyramid = build_pyramid(scene.image_w, scene.image_h).unwrap();
        let model = ResponseModel {
            noise_sigma: 0.0,
            box_noise_px: 0.0,
            score_gamma: 1.0,
            score_scale: 1.0,
            duplication: 1,
            ..ResponseModel::default()
        };
        let q = simulate_responses(&scene, &pyramid, &model, 5).unwrap();
        for (i, b) in q.boxes().iter().enumerate() {
            let best = scene
                .gts
                .boxes()
                .iter()
                .map(|g| iou(b, g))
                .fold(0.0_f64, f64::max);
            assert!((q.scores()[i] - best).abs() < 1e-12);
        }
    }

    #[test]
    fn duplication_scales_query_count() {
        let scene = small_scene();
        let pyramid = build_pyramid(scene.image_w, scene.image_h).unwrap();
        let model = ResponseModel {
            duplication: 3,
            ..ResponseModel::default()
        };
        let q = simulate_responses(&scene, &pyramid, &model, 5).unwrap();
        assert_eq!(q.len(), 3 * pyramid.num_points());
        // Copies of one point share its origin tag.
        assert_eq!(q.origins()[0], q.origins()[1]);
        assert_eq!(q.origins()[0], q.origins()[2]);
        assert_ne!(q.origins()[2], q.origins()[3]);
    }

    #[test]
    fn deterministic_per_seed() {
        let scene = small_scene();
        let pyramid = build_pyramid(scene.image_w, scene.image_h).unwrap();
        let model = ResponseModel::default();
        let a = simulate_responses(&scene, &pyramid, &model, 9).unwrap();
        let b = simulate_responses(&scene, &pyramid, &model, 9).unwrap();
        assert_eq!(a, b);
        let c = simulate_responses(&scene, &pyramid, &model, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn empty_scene_gives_low_scores_without_noise() {
        let cfg = SceneConfig {
            gt_count: 0,
            ..SceneConfig::default()
        };
        let scene = generate_scene(&cfg, 3).unwrap();
        let pyramid = build_pyramid(scene.image_w, scene.image_h).unwrap();
        let model = ResponseModel {
            noise_sigma: 0.0,
            ..ResponseModel::default()
        };
        let q = simulate_responses(&scene, &pyramid, &model, 3).unwrap();
        assert!(q.scores().iter().all(|&s| s == 0.0));
        // Boxes stay inside the image.
        for b in q.boxes() {
            assert!(b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= 128.0 && b.y2 <= 128.0);
        }
    }

    #[test]
    fn rendered_maps_match_pyramid_and_feed_roi_ops() {
        let scene = small_scene();
        let pyramid = build_pyramid(scene.image_w, scene.image_h).unwrap();
        let maps = render_feature_maps(&scene, &pyramid, 4).unwrap();
        assert_eq!(maps.len(), pyramid.levels().len());
        for (map, lvl) in maps.iter().zip(pyramid.levels()) {
            assert_eq!(map.level, lvl.level);
            assert_eq!(map.height, lvl.grid_h as usize);
            assert_eq!(map.width, lvl.grid_w as usize);
        }
        // Objectness peaks inside a ground truth at level 3.
        let gt = scene.gts.get(0);
        let [cx, cy, _, _] = gt.center_form();
        let l3 = &maps[0];
        let row = ((cy / 8.0) as usize).min(l3.height - 1);
        let col = ((cx / 8.0) as usize).min(l3.width - 1);
        assert!(l3.get(row, col, 0) > 0.0);

        // The grid format round-trips through JSON and drives the pooling
        // operators directly.
        let json = serde_json::to_string(&maps[0]).unwrap();
        let back: crate::roi::FeatureMap = serde_json::from_str(&json).unwrap();
        assert_eq!(&back, &maps[0]);
        let pooled = crate::roi::frf_roi_align(&maps, gt, (3, 3), 2).unwrap();
        assert_eq!((pooled.height, pooled.width, pooled.channels), (3, 3, 4));

        // Deterministic by construction.
        assert_eq!(render_feature_maps(&scene, &pyramid, 4).unwrap(), maps);
    }
}

//! Shared fixtures for the benchmark suite.

use ddq_core::sim::{ResponseModel, SceneConfig};
use ddq_core::{
    build_pyramid, generate_scene, simulate_responses, FeaturePyramid, QuerySet, Scene,
};

/// A deterministic mid-sized scene with duplicated dense responses.
pub fn dense_fixture(image: u32, duplication: usize) -> (Scene, FeaturePyramid, QuerySet) {
    let cfg = SceneConfig {
        image_w: image,
        image_h: image,
        gt_count: 12,
        min_gt_size: 10.0,
        max_gt_size: (image as f64 / 4.0).max(12.0),
        ..SceneConfig::default()
    };
    let scene = generate_scene(&cfg, 42).expect("fixture scene");
    let pyramid = build_pyramid(image, image).expect("fixture pyramid");
    let model = ResponseModel {
        duplication,
        feature_dim: 0,
        ..ResponseModel::default()
    };
    let queries = simulate_responses(&scene, &pyramid, &model, 43).expect("fixture responses");
    (scene, pyramid, queries)
}

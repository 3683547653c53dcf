//! Core algorithms for dense-distinct-query object detection experiments:
//! box geometry, dense pyramid priors, duplicate query removal, center-prior
//! bipartite assignment, quality-aware losses with analytic gradients,
//! multi-level RoI feature pooling, recall/AP metrics, and a deterministic
//! synthetic simulator that compares query selection strategies.

pub mod assign;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod loss;
pub mod matrix;
pub mod nms;
pub mod pyramid;
pub mod roi;
pub mod sim;

pub use assign::{
    build_cost_matrix, center_prior_candidates, center_prior_match, hungarian, AssignmentResult,
    CandidateMask, CostMatrix, CostWeights, MatchedPair, PairCost,
};
pub use error::{Error, Result};
pub use eval::{average_precision, recall_at, DetectionRecord, GtRecord, MetricReport};
pub use geometry::{
    convert, giou, iou, normalized_center_l1, pairwise_iou, BBox, BoxFormat, BoxList,
};
pub use loss::{
    bce, bce_grad, duplicate_gradient_ratio, qfl, qfl_grad, regression_loss, set_prediction_loss,
    ClsLossKind, LossBreakdown,
};
pub use matrix::Matrix;
pub use nms::{cascade_select, class_agnostic_nms, nms_indices, topk_by_score, DqrConfig};
pub use pyramid::{
    build_pyramid, count_queries, decode_boxes, make_query_set, EdgeOffsets, FeaturePyramid,
    PyramidLevel, QueryOrigin, QueryRecord, QuerySet,
};
pub use roi::{assign_level, frf_roi_align, qde_fuse, roi_align, FeatureMap, RoiTensor};
pub use sim::{
    generate_scene, render_feature_maps, run_cascade_experiment, run_gradient_experiment,
    run_recall_experiment, simulate_responses, ExperimentConfig, ExperimentReport, ResponseModel,
    Scene, SceneConfig,
};

//! Synthetic scenes, parametric query responses, and the experiment
//! harness comparing dense query selection strategies at desk scale.

pub mod config;
pub mod experiment;
pub mod report;
pub mod response;
pub mod scene;

pub use config::{
    CascadeConfig, ExperimentConfig, ExperimentKind, GradientConfig, RecallConfig, ResponseModel,
    SceneConfig, SCHEMA_VERSION,
};
pub use experiment::{
    run_cascade_experiment, run_experiment, run_gradient_experiment, run_recall_experiment,
    ExperimentReport, SummaryRow, TraceRow, TrialRow, METHOD_CASCADE, METHOD_DISTINCT,
    METHOD_DUPLICATE, METHOD_DUPLICATE_HIGH, METHOD_NMS, METHOD_TOPK,
};
pub use report::{to_csv, to_json, to_svg};
pub use response::{render_feature_maps, simulate_responses};
pub use scene::{generate_scene, Scene};

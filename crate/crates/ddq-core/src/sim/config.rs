//! Experiment configuration: a versioned, human-readable schema shared by
//! the library and the CLI. Every knob of the synthetic response model is
//! explicit here; none of the defaults are claims about trained detectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Current config schema version. Files with a different version are
/// refused with a migration hint.
pub const SCHEMA_VERSION: u32 = 1;

/// Which experiment a config drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Recall,
    Gradient,
    Cascade,
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExperimentKind::Recall => write!(f, "recall"),
            ExperimentKind::Gradient => write!(f, "gradient"),
            ExperimentKind::Cascade => write!(f, "cascade"),
        }
    }
}

/// Synthetic scene parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub image_w: u32,
    pub image_h: u32,
    pub gt_count: usize,
    pub min_gt_size: f64,
    pub max_gt_size: f64,
    /// Maximum pairwise IoU tolerated between ground truths.
    pub max_overlap: f64,
    /// Rejection-sampling bound before generation gives up.
    pub max_attempts: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            image_w: 128,
            image_h: 128,
            gt_count: 12,
            min_gt_size: 14.0,
            max_gt_size: 40.0,
            max_overlap: 0.3,
            max_attempts: 10_000,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_w == 0 || self.image_h == 0 {
            return Err(Error::Config("scene image size must be positive".into()));
        }
        if self.min_gt_size <= 0.0 || self.max_gt_size < self.min_gt_size {
            return Err(Error::Config(format!(
                "gt size range [{}, {}] is invalid",
                self.min_gt_size, self.max_gt_size
            )));
        }
        if self.min_gt_size > self.image_w.min(self.image_h) as f64 {
            return Err(Error::Config(format!(
                "min gt size {} exceeds the image extent",
                self.min_gt_size
            )));
        }
        if !(0.0..=1.0).contains(&self.max_overlap) {
            return Err(Error::Config("max_overlap must lie in [0, 1]".into()));
        }
        if self.max_attempts == 0 {
            return Err(Error::Config("max_attempts must be positive".into()));
        }
        Ok(())
    }
}

/// Parametric stand-in for a trained RPN head:
/// `score = clamp(max_gt iou(box, gt)^gamma * scale + sigma * eps, 0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResponseModel {
    pub score_gamma: f64,
    pub score_scale: f64,
    pub noise_sigma: f64,
    /// Corner jitter scale in pixels; grows with distance from the target.
    pub box_noise_px: f64,
    /// Jittered copies emitted per pyramid point.
    pub duplication: usize,
    /// Dimension of the synthesized query feature vectors.
    pub feature_dim: usize,
}

impl Default for ResponseModel {
    fn default() -> Self {
        Self {
            score_gamma: 1.0,
            score_scale: 0.9,
            noise_sigma: 0.12,
            box_noise_px: 5.0,
            duplication: 1,
            feature_dim: 8,
        }
    }
}

impl ResponseModel {
    pub fn validate(&self) -> Result<()> {
        if self.score_gamma <= 0.0 {
            return Err(Error::Config("score_gamma must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.score_scale) {
            return Err(Error::Config("score_scale must lie in [0, 1]".into()));
        }
        if self.noise_sigma < 0.0 || self.box_noise_px < 0.0 {
            return Err(Error::Config("noise scales must be non-negative".into()));
        }
        if self.duplication == 0 {
            return Err(Error::Config("duplication factor must be >= 1".into()));
        }
        Ok(())
    }
}

/// Recall experiment: sweep either the query budget or the duplication
/// factor and compare top-k selection against duplicate removal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecallConfig {
    pub budgets: Vec<usize>,
    /// When non-empty, the sweep runs over duplication factors at the
    /// first budget instead of over budgets.
    pub duplication_factors: Vec<usize>,
    pub nms_iou: f64,
    pub recall_iou: f64,
}

impl Default for RecallConfig {
    fn default() -> Self {
        Self {
            budgets: vec![50, 100, 200, 300],
            duplication_factors: vec![],
            nms_iou: 0.7,
            recall_iou: 0.5,
        }
    }
}

impl RecallConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budgets.is_empty() {
            return Err(Error::Config("recall budgets must be non-empty".into()));
        }
        if self.budgets.contains(&0) || self.duplication_factors.contains(&0) {
            return Err(Error::Config(
                "budgets and duplication factors must be positive".into(),
            ));
        }
        if !(self.nms_iou > 0.0 && self.nms_iou < 1.0) {
            return Err(Error::Config(
                "nms_iou must lie strictly inside (0, 1)".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.recall_iou) {
            return Err(Error::Config("recall_iou must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Gradient experiment: the duplicate-pair gradient ratio over a probability
/// grid plus score-only descent traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradientConfig {
    pub p_grid_start: f64,
    pub p_grid_step: f64,
    pub p_grid_end: f64,
    pub descent_steps: usize,
    pub learning_rate: f64,
    /// Starting score of the converging traces.
    pub initial_p_low: f64,
    /// Starting score of the negative-training trace.
    pub initial_p_high: f64,
}

impl Default for GradientConfig {
    fn default() -> Self {
        Self {
            p_grid_start: 0.05,
            p_grid_step: 0.05,
            p_grid_end: 0.95,
            descent_steps: 200,
            learning_rate: 0.005,
            initial_p_low: 0.3,
            initial_p_high: 0.7,
        }
    }
}

impl GradientConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_grid_start > 0.0 && self.p_grid_end < 1.0 && self.p_grid_step > 0.0) {
            return Err(Error::Config(
                "p grid must lie strictly inside (0, 1) with a positive step".into(),
            ));
        }
        if self.p_grid_end < self.p_grid_start {
            return Err(Error::Config("p grid end precedes its start".into()));
        }
        for p in [self.initial_p_low, self.initial_p_high] {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Config(format!(
                    "descent starting score {p} must lie strictly inside (0, 1)"
                )));
            }
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }

    pub fn p_grid(&self) -> Vec<f64> {
        let mut grid = Vec::new();
        let mut i = 0usize;
        loop {
            let p = self.p_grid_start + i as f64 * self.p_grid_step;
            if p > self.p_grid_end + 1e-12 {
                break;
            }
            grid.push(p);
            i += 1;
        }
        grid
    }
}

/// Cascade experiment: staged selection with a crude refinement step that
/// contracts surviving boxes towards their best ground truth and re-scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CascadeConfig {
    pub stage_budgets: Vec<usize>,
    pub nms_iou: f64,
    /// Residual box error multiplier per refinement; 1.0 disables
    /// refinement entirely (selection only).
    pub shrink: f64,
    pub recall_iou: f64,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            stage_budgets: vec![300, 200],
            nms_iou: 0.7,
            shrink: 0.5,
            recall_iou: 0.5,
        }
    }
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<()> {
        crate::nms::DqrConfig::new(self.nms_iou, self.stage_budgets.clone())?;
        if !(self.shrink > 0.0 && self.shrink <= 1.0) {
            return Err(Error::Config("shrink must lie in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.recall_iou) {
            return Err(Error::Config("recall_iou must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Top-level experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: ExperimentKind,
    pub master_seed: u64,
    pub trials: usize,
    pub scene: SceneConfig,
    pub response: ResponseModel,
    pub recall: RecallConfig,
    pub gradient: GradientConfig,
    pub cascade: CascadeConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            experiment: ExperimentKind::Recall,
            master_seed: 0,
            trials: 20,
            scene: SceneConfig::default(),
            response: ResponseModel::default(),
            recall: RecallConfig::default(),
            gradient: GradientConfig::default(),
            cascade: CascadeConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parse from TOML, refusing schema versions this build does not know.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "config schema_version {} is not supported by this build (expected \
                 {SCHEMA_VERSION}); regenerate the config or migrate it manually",
                cfg.schema_version
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        self.scene.validate()?;
        self.response.validate()?;
        self.recall.validate()?;
        self.gradient.validate()?;
        self.cascade.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml_string();
        let parsed = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn schema_version_mismatch_refused() {
        let text = "schema_version = 99\nexperiment = \"recall\"\n";
        let err = ExperimentConfig::from_toml_str(text).unwrap_err();
        assert!(err.to_string().contains("schema_version 99"));
        assert!(err.to_string().contains("migrate"));
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = ExperimentConfig::from_toml_str("experiment = \"gradient\"\n").unwrap();
        assert_eq!(cfg.experiment, ExperimentKind::Gradient);
        assert_eq!(cfg.schema_version, SCHEMA_VERSION);
        assert_eq!(cfg.trials, 20);
    }

    #[test]
    fn p_grid_covers_range_inclusive() {
        let g = GradientConfig::default().p_grid();
        assert_eq!(g.len(), 19);
        assert!((g[0] - 0.05).abs() < 1e-12);
        assert!((g[18] - 0.95).abs() < 1e-12);
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut cfg = ExperimentConfig::default();
        cfg.scene.min_gt_size = 500.0;
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.response.duplication = 0;
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.cascade.stage_budgets = vec![100, 300];
        assert!(cfg.validate().is_err());
    }
}

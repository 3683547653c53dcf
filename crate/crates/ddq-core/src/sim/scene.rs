//! Synthetic ground-truth scenes, deterministic per seed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox, BoxList};

use super::config::SceneConfig;

/// A synthetic image: its size, ground-truth boxes and the seed that
/// produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub image_w: u32,
    pub image_h: u32,
    pub gts: BoxList,
    pub seed: u64,
}

/// Rejection-sample `gt_count` boxes inside the image whose pairwise IoU
/// stays at or below `max_overlap`. Deterministic given the seed; errors
/// after `max_attempts` draws when constraints cannot be met.
pub fn generate_scene(cfg: &SceneConfig, seed: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let (w, h) = (cfg.image_w as f64, cfg.image_h as f64);
    let mut boxes: Vec<BBox> = Vec::with_capacity(cfg.gt_count);
    let mut attempts = 0usize;

    while boxes.len() < cfg.gt_count {
        if attempts >= cfg.max_attempts {
            return Err(Error::SceneGeneration(format!(
                "gave up after {attempts} attempts: {} of {} boxes placed under \
                 max_overlap {}",
                boxes.len(),
                cfg.gt_count,
                cfg.max_overlap
            )));
        }
        attempts += 1;

        let bw = rng.random_range(cfg.min_gt_size..=cfg.max_gt_size).min(w);
        let bh = rng.random_range(cfg.min_gt_size..=cfg.max_gt_size).min(h);
        let x1 = rng.random_range(0.0..=(w - bw));
        let y1 = rng.random_range(0.0..=(h - bh));
        let candidate = BBox::new(x1, y1, x1 + bw, y1 + bh)?.clip(w, h);

        if boxes.iter().all(|b| iou(b, &candidate) <= cfg.max_overlap) {
            boxes.push(candidate);
        }
    }

    Ok(Scene {
        image_w: cfg.image_w,
        image_h: cfg.image_h,
        gts: BoxList::new(boxes),
        seed,
    })
}

//! A small single-scale dense detector with an optional contextual attention
//! block, trained on synthetic scenes.

mod ablate;
mod checkpoint;
mod model;
mod rng;
mod scene;
mod train;

use std::fmt::Write as _;

pub use ablate::{ablate, context_matrix, data_volume_matrix, AblationRow, AblationTable, RunOutcome};
pub use checkpoint::{checkpoint_bytes, parse_checkpoint, read_checkpoint, write_checkpoint};
pub use model::{
    decode_box, encode_box, infer, loss_and_gradients, nms, prepare, DetectorParams, PreparedScene, Prediction,
    HEAD_OUTPUTS,
};
pub use rng::{sub_rng, Stream};
pub use scene::{generate_scene, generate_scenes, generate_val_scenes, Distractor, Hand, SceneParams, SyntheticScene, PALETTE};
pub use train::{evaluate_scenes, train, EpochLog, TrainOutcome, TrainStep};

use crate::attention::ContextSwitches;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorConfig {
    pub scene: SceneParams,
    /// Backbone and head width `m`.
    pub channels: usize,
    /// Number of part categories `K`.
    pub parts: usize,
    pub switches: ContextSwitches,
    pub lambda: f64,
    pub learning_rate: f64,
    /// Learning-rate multiplier for the semantic weights `α`, `μ` and `σ`.
    /// Their gradients are far smaller than the weight matrices' and, at the
    /// base rate, `μ` and `σ` move by a fraction of a cell over a whole run.
    pub prior_lr_scale: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub score_threshold: f64,
    pub nms_iou: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            scene: SceneParams::default(),
            channels: 32,
            parts: crate::attention::DEFAULT_PARTS,
            switches: ContextSwitches::FULL,
            lambda: 0.1,
            learning_rate: 1e-2,
            prior_lr_scale: 30.0,
            momentum: 0.9,
            epochs: 20,
            batch_size: 8,
            grad_clip: 5.0,
            seed: 0,
            train_scenes: 400,
            val_scenes: 100,
            score_threshold: 0.05,
            nms_iou: 0.5,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{value}` is not a valid value for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "on" | "1" | "yes" => Ok(true),
        "false" | "off" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("`{value}` is not a boolean for `{key}`"))),
    }
}

impl DetectorConfig {
    pub fn stride(&self) -> usize {
        self.scene.cell
    }

    pub fn grid(&self) -> usize {
        self.scene.grid()
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        let positive = [
            ("channels", self.channels),
            ("parts", self.parts),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("train_scenes", self.train_scenes),
            ("val_scenes", self.val_scenes),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be at least 1")));
            }
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be finite and ≥ 0, got {}", self.lambda)));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.prior_lr_scale.is_finite() && self.prior_lr_scale > 0.0) {
            return Err(Error::Config(format!("prior_lr_scale must be positive, got {}", self.prior_lr_scale)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.grad_clip.is_finite() && self.grad_clip >= 0.0) {
            return Err(Error::Config("grad_clip must be finite and ≥ 0".into()));
        }
        if !(0.0..=1.0).contains(&self.score_threshold) || !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) {
            return Err(Error::Config("score_threshold must be in [0, 1] and nms_iou in (0, 1]".into()));
        }
        Ok(())
    }

    /// Epoch at which the learning rate drops by ×0.1.
    pub fn decay_epoch(&self) -> usize {
        (2 * self.epochs).div_ceil(3)
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if epoch >= self.decay_epoch() {
            self.learning_rate * 0.1
        } else {
            self.learning_rate
        }
    }

    pub const KEYS: [&'static str; 27] = [
        "image_size",
        "cell",
        "min_hands",
        "max_hands",
        "min_distractors",
        "max_distractors",
        "shared_tone_prob",
        "near_arm_prob",
        "arm_min",
        "arm_max",
        "noise",
        "channels",
        "parts",
        "similarity",
        "semantic",
        "lambda",
        "lr",
        "prior_lr_scale",
        "momentum",
        "epochs",
        "batch_size",
        "grad_clip",
        "seed",
        "train_scenes",
        "val_scenes",
        "score_threshold",
        "nms_iou",
    ];

    /// Sets one field from its `key=value` spelling.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let s = &mut self.scene;
        match key {
            "image_size" => s.image_size = parse(key, value)?,
            "cell" | "stride" => s.cell = parse(key, value)?,
            "min_hands" => s.min_hands = parse(key, value)?,
            "max_hands" => s.max_hands = parse(key, value)?,
            "min_distractors" => s.min_distractors = parse(key, value)?,
            "max_distractors" => s.max_distractors = parse(key, value)?,
            "shared_tone_prob" => s.shared_tone_prob = parse(key, value)?,
            "near_arm_prob" => s.near_arm_prob = parse(key, value)?,
            "arm_min" => s.arm_length.0 = parse(key, value)?,
            "arm_max" => s.arm_length.1 = parse(key, value)?,
            "noise" => s.noise = parse(key, value)?,
            "channels" => self.channels = parse(key, value)?,
            "parts" | "k" => self.parts = parse(key, value)?,
            "similarity" => self.switches.similarity = parse_bool(key, value)?,
            "semantic" => self.switches.semantic = parse_bool(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "lr" | "learning_rate" => self.learning_rate = parse(key, value)?,
            "prior_lr_scale" => self.prior_lr_scale = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "grad_clip" => self.grad_clip = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "train_scenes" => self.train_scenes = parse(key, value)?,
            "val_scenes" => self.val_scenes = parse(key, value)?,
            "score_threshold" => self.score_threshold = parse(key, value)?,
            "nms_iou" => self.nms_iou = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown detector setting `{key}`"))),
        }
        Ok(())
    }

    /// Every setting as `key=value` lines, in [`Self::KEYS`] order.
    pub fn to_kv(&self) -> String {
        let s = &self.scene;
        let values: [String; 27] = [
            s.image_size.to_string(),
            s.cell.to_string(),
            s.min_hands.to_string(),
            s.max_hands.to_string(),
            s.min_distractors.to_string(),
            s.max_distractors.to_string(),
            s.shared_tone_prob.to_string(),
            s.near_arm_prob.to_string(),
            s.arm_length.0.to_string(),
            s.arm_length.1.to_string(),
            s.noise.to_string(),
            self.channels.to_string(),
            self.parts.to_string(),
            self.switches.similarity.to_string(),
            self.switches.semantic.to_string(),
            self.lambda.to_string(),
            self.learning_rate.to_string(),
            self.prior_lr_scale.to_string(),
            self.momentum.to_string(),
            self.epochs.to_string(),
            self.batch_size.to_string(),
            self.grad_clip.to_string(),
            self.seed.to_string(),
            self.train_scenes.to_string(),
            self.val_scenes.to_string(),
            self.score_threshold.to_string(),
            self.nms_iou.to_string(),
        ];
        let mut out = String::new();
        for (k, v) in Self::KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    /// Short label for the context switches, as used in ablation tables.
    pub fn context_label(&self) -> &'static str {
        match (self.switches.similarity, self.switches.semantic) {
            (true, true) => "full-context",
            (true, false) => "similarity-only",
            (false, true) => "semantic-only",
            (false, false) => "no-context",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let mut cfg = DetectorConfig::default();
        cfg.switches.semantic = false;
        cfg.lambda = 0.25;
        cfg.scene.arm_length = (10.0, 12.5);
        let mut back = DetectorConfig::default();
        for line in cfg.to_kv().lines() {
            let (k, v) = line.split_once('=').unwrap();
            back.set(k, v).unwrap();
        }
        assert_eq!(back, cfg);
        assert!(back.set("nope", "1").is_err());
        assert!(back.set("similarity", "maybe").is_err());
    }

    #[test]
    fn validation_and_schedule() {
        let mut cfg = DetectorConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.decay_epoch(), 14);
        assert_eq!(cfg.learning_rate_at(13), 1e-2);
        assert!((cfg.learning_rate_at(14) - 1e-3).abs() < 1e-18);
        cfg.lambda = -0.1;
        assert!(cfg.validate().is_err());
        let mut cfg = DetectorConfig::default();
        cfg.scene.cell = 7;
        assert!(cfg.validate().is_err());
    }
}

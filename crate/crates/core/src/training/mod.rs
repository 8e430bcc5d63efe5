//! Pre-training objectives and loop, fine-tuning with task heads, prediction.

mod finetune;
mod heads;
mod optim;
mod pretrain;

use serde::{Deserialize, Serialize};

pub use finetune::{
    encode_example, finetune, predict, FinetuneOptions, Label, Prediction, TaskExample, TaskKind, TaskModel,
    TaskSpec,
};
pub use heads::{mlm_loss, pair_logits, pair_loss, softmax_xent, MlmLoss, PretrainHeads};
pub use optim::{clip_global_norm, learning_rate, AdamConfig, AdamW};
pub use pretrain::{pretrain, LossRow, LossTrace, Pretrainer};

use crate::settings::{get, Settings};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub dropout: f64,
}

impl Default for TrainHyper {
    /// Base-scale values (BERT's 1M steps); desk runs override them.
    fn default() -> Self {
        TrainHyper {
            learning_rate: 1e-4,
            warmup_steps: 10_000,
            total_steps: 1_000_000,
            batch_size: 256,
            seed: 0,
            weight_decay: 0.01,
            clip_norm: 1.0,
            dropout: 0.1,
        }
    }
}

impl TrainHyper {
    /// A few hundred steps on a tiny model.
    pub fn desk() -> Self {
        TrainHyper {
            learning_rate: 2e-3,
            warmup_steps: 50,
            total_steps: 500,
            batch_size: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.total_steps == 0 || self.batch_size == 0 {
            return bad("total_steps and batch_size must be positive");
        }
        if self.warmup_steps > self.total_steps {
            return bad("warmup_steps exceeds total_steps");
        }
        if !(self.weight_decay >= 0.0) || !(self.clip_norm > 0.0) {
            return bad("weight_decay must be non-negative and clip_norm positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn to_settings(&self) -> Settings {
        let mut s = Settings::new();
        s.insert("learning_rate".into(), self.learning_rate.to_string());
        s.insert("warmup_steps".into(), self.warmup_steps.to_string());
        s.insert("total_steps".into(), self.total_steps.to_string());
        s.insert("batch_size".into(), self.batch_size.to_string());
        s.insert("seed".into(), self.seed.to_string());
        s.insert("weight_decay".into(), self.weight_decay.to_string());
        s.insert("clip_norm".into(), self.clip_norm.to_string());
        s.insert("dropout".into(), self.dropout.to_string());
        s
    }

    /// Reads the hyperparameter keys of `s`, filling the rest from `base`.
    pub fn from_settings(s: &Settings, base: &TrainHyper) -> Result<Self> {
        let h = TrainHyper {
            learning_rate: get(s, "learning_rate")?.unwrap_or(base.learning_rate),
            warmup_steps: get(s, "warmup_steps")?.unwrap_or(base.warmup_steps),
            total_steps: get(s, "total_steps")?.unwrap_or(base.total_steps),
            batch_size: get(s, "batch_size")?.unwrap_or(base.batch_size),
            seed: get(s, "seed")?.unwrap_or(base.seed),
            weight_decay: get(s, "weight_decay")?.unwrap_or(base.weight_decay),
            clip_norm: get(s, "clip_norm")?.unwrap_or(base.clip_norm),
            dropout: get(s, "dropout")?.unwrap_or(base.dropout),
        };
        h.validate()?;
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hyper_settings_round_trip() {
        let h = TrainHyper { seed: 9, ..TrainHyper::desk() };
        assert_eq!(TrainHyper::from_settings(&h.to_settings(), &TrainHyper::default()).unwrap(), h);
        let mut s = h.to_settings();
        s.insert("warmup_steps".into(), "501".into());
        assert!(TrainHyper::from_settings(&s, &h).unwrap_err().is_config());
    }
}

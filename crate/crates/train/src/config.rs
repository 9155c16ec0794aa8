use crate::loss::Loss;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrain,
    Finetune,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: Stage,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
    /// `None` runs until early stopping.
    pub max_epochs: Option<usize>,
    pub patience: usize,
    pub loss: Loss,
    /// Train / validation / test fractions.
    pub split: [f64; 3],
    pub seed: u64,
    /// Global gradient-norm bound; `None` disables clipping.
    pub clip: Option<f64>,
    /// Draw training batches with class-balancing weights instead of a shuffle.
    pub weighted: bool,
    pub bins_per_dim: usize,
}

impl TrainConfig {
    pub fn pretrain() -> Self {
        Self {
            stage: Stage::Pretrain,
            lr: 2e-4,
            weight_decay: 1e-5,
            batch: 512,
            max_epochs: Some(150),
            patience: 30,
            loss: Loss::Mse,
            split: [0.8, 0.1, 0.1],
            seed: 0,
            clip: Some(5.0),
            weighted: false,
            bins_per_dim: 3,
        }
    }

    pub fn finetune() -> Self {
        Self {
            stage: Stage::Finetune,
            lr: 2e-6,
            weight_decay: 1e-4,
            batch: 64,
            max_epochs: None,
            patience: 50,
            loss: Loss::focal(),
            split: [0.7, 0.15, 0.15],
            seed: 0,
            clip: Some(5.0),
            weighted: true,
            bins_per_dim: 3,
        }
    }

    pub fn for_stage(stage: Stage) -> Self {
        match stage {
            Stage::Pretrain => Self::pretrain(),
            Stage::Finetune => Self::finetune(),
        }
    }

    /// CPU-sized pretraining for a few thousand events.
    pub fn desk_pretrain() -> Self {
        Self {
            lr: 1e-3,
            batch: 16,
            max_epochs: Some(30),
            patience: 8,
            ..Self::pretrain()
        }
    }

    /// CPU-sized fine-tuning on a few hundred events.
    pub fn desk_finetune() -> Self {
        Self {
            lr: 2e-4,
            batch: 16,
            max_epochs: Some(30),
            patience: 8,
            ..Self::finetune()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 || self.split.iter().any(|f| *f < 0.0) {
            return Err(format!(
                "split fractions {:?} must be non-negative and sum to 1",
                self.split
            ));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(format!("learning rate {} must be positive", self.lr));
        }
        if self.patience == 0 || self.batch == 0 || self.bins_per_dim == 0 {
            return Err("patience, batch and bins_per_dim must be at least 1".into());
        }
        if self.weight_decay < 0.0 || self.clip.is_some_and(|c| !(c > 0.0)) {
            return Err("weight decay must be >= 0 and clip > 0".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for c in [
            TrainConfig::pretrain(),
            TrainConfig::finetune(),
            TrainConfig::desk_pretrain(),
            TrainConfig::desk_finetune(),
        ] {
            c.validate().unwrap();
        }
        let mut c = TrainConfig::pretrain();
        c.split = [0.8, 0.1, 0.2];
        assert!(c.validate().is_err());
        c = TrainConfig::pretrain();
        c.patience = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let c = TrainConfig::finetune();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&s).unwrap(), c);
        assert!(s.contains("focal_l1"));
    }
}

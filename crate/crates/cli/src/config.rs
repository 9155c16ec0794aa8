use serde::{Deserialize, Serialize};
use sourcenet_core::forward::SimConfig;
use sourcenet_core::generate::{RegionConfig, StationSelection};
use sourcenet_core::psdr::{NoiseParams, PsdrConfig};
use sourcenet_nn::ModelConfig;
use sourcenet_train::TrainConfig;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
}

/// One experiment: generation, model and both training stages. Missing
/// sections fall back to the desk preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub region: RegionConfig,
    pub stations: StationSelection,
    pub psdr: PsdrConfig,
    pub sim: SimConfig,
    pub noise: NoiseParams,
    pub model: ModelConfig,
    pub train: TrainSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    /// CPU-sized: small model, a few thousand events, nearby stations only.
    pub fn desk() -> Self {
        Self {
            seed: 0,
            region: RegionConfig::default(),
            stations: StationSelection {
                max_dist_km: 80.0,
                ..StationSelection::default()
            },
            psdr: PsdrConfig::default(),
            sim: SimConfig::default(),
            noise: NoiseParams::default(),
            model: ModelConfig::desk(),
            train: TrainSection {
                pretrain: TrainConfig::desk_pretrain(),
                finetune: TrainConfig::desk_finetune(),
            },
        }
    }

    /// Full-size model and training schedule.
    pub fn paper() -> Self {
        Self {
            stations: StationSelection::default(),
            model: ModelConfig::default(),
            train: TrainSection {
                pretrain: TrainConfig::pretrain(),
                finetune: TrainConfig::finetune(),
            },
            ..Self::desk()
        }
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| e.to_string())?;
        cfg.train.pretrain.validate()?;
        cfg.train.finetune.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, crate::CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| crate::CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| crate::CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// Applies a run seed to generation and to both training stages.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.pretrain.seed = seed;
        self.train.finetune.seed = seed;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_and_unknown_keys_fail() {
        for cfg in [RunConfig::desk(), RunConfig::paper()] {
            let text = serde_json::to_string_pretty(&cfg).unwrap();
            assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
        }
        assert_eq!(RunConfig::parse("{}").unwrap(), RunConfig::desk());
        assert!(RunConfig::parse(r#"{"sed": 3}"#).is_err());
        assert!(RunConfig::parse(r#"{"region": {"lat": [0, 1], "x": 1}}"#).is_err());
        assert!(RunConfig::parse(r#"{"sim": {"rate": 20, "dur": 1}}"#).is_err());
    }

    #[test]
    fn invalid_training_section_is_rejected() {
        let mut cfg = RunConfig::desk();
        cfg.train.finetune.split = [0.5, 0.5, 0.5];
        assert!(RunConfig::parse(&serde_json::to_string(&cfg).unwrap()).is_err());
    }

    #[test]
    fn seed_reaches_every_stage() {
        let mut cfg = RunConfig::desk();
        cfg.set_seed(11);
        assert_eq!(
            (cfg.seed, cfg.train.pretrain.seed, cfg.train.finetune.seed),
            (11, 11, 11)
        );
    }
}

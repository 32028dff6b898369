//! Experiment configuration, read from a TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dataset::DatasetSpec;
use crate::calibration::{BetaVariant, ModelPhase, StepScaling};
use crate::error::{Error, Result};
use crate::sampling::{Fidelity, NoiseSpec, WeightNoiseMode};
use crate::training::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShape {
    pub n_visible: usize,
    pub n_hidden: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            n_visible: 12,
            n_hidden: 6,
        }
    }
}

/// Online estimation against a fixed model, as run in the noise sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationSchedule {
    /// Annealer samples per estimator call.
    pub batch_samples: usize,
    pub calls: usize,
    /// Leading calls that use the single-factor rule for every component.
    pub unified_calls: usize,
    pub eta: f64,
    /// The learning rate of call `k` is `eta / (1 + k / eta_half_life)`;
    /// zero keeps it constant.
    pub eta_half_life: f64,
    pub inner_iters: usize,
    pub model_phase: ModelPhase,
    pub scaling: StepScaling,
}

impl Default for EstimationSchedule {
    fn default() -> Self {
        Self {
            batch_samples: 100_000,
            calls: 60,
            unified_calls: 10,
            eta: 0.8,
            eta_half_life: 10.0,
            inner_iters: 3,
            model_phase: ModelPhase::Cd { layer_updates: 2 },
            scaling: StepScaling::Variance { damping: 1e-3 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub sigmas: Vec<f64>,
    pub variants: Vec<BetaVariant>,
    pub weight_modes: Vec<WeightNoiseMode>,
    pub repetitions: usize,
    /// Calibrated samples drawn per cell for the KL measurement.
    pub kl_samples: usize,
    pub pretrain_epochs: usize,
    pub pretrain_eta: f64,
    /// Noise realizations pooled into each annealer call (1 = no pooling).
    pub pool_noise_draws: usize,
    pub fidelity: Fidelity,
    pub estimation: EstimationSchedule,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            sigmas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            variants: BetaVariant::ALL.to_vec(),
            weight_modes: vec![WeightNoiseMode::Constant, WeightNoiseMode::Gaussian],
            repetitions: 10,
            kl_samples: 1_000_000,
            pretrain_epochs: 1000,
            pretrain_eta: 0.1,
            pool_noise_draws: 1,
            fidelity: Fidelity::Exact,
            estimation: EstimationSchedule::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComparisonConfig {
    /// One run of every scheme per seed.
    pub seeds: Vec<u64>,
    pub variants: Vec<BetaVariant>,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3, 4, 5],
            variants: BetaVariant::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub model: ModelShape,
    pub dataset: DatasetSpec,
    pub noise: NoiseSpec,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
    pub comparison: ComparisonConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            model: ModelShape::default(),
            dataset: DatasetSpec::default(),
            noise: NoiseSpec::default(),
            train: TrainConfig::default(),
            sweep: SweepConfig::default(),
            comparison: ComparisonConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let cfg = Self::from_toml_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.n_visible == 0 || self.model.n_hidden == 0 {
            return Err(Error::Config("model layers must be positive".into()));
        }
        if let Some(width) = self.dataset.width() {
            if width != self.model.n_visible {
                return Err(Error::Config(format!(
                    "dataset produces {width}-bit vectors, model has {} visible units",
                    self.model.n_visible
                )));
            }
        }
        match &self.dataset {
            DatasetSpec::File { path } | DatasetSpec::CoarseGrainedImages { path, .. } if !path.exists() => {
                return Err(Error::Config(format!("dataset file {} does not exist", path.display())));
            }
            _ => {}
        }
        self.train.validate()?;
        let sweep = &self.sweep;
        if sweep.sigmas.is_empty() || sweep.variants.is_empty() || sweep.weight_modes.is_empty() {
            return Err(Error::Config("sweep grids must be non-empty".into()));
        }
        if sweep.sigmas.iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::Config("sweep sigmas must be >= 0".into()));
        }
        let est = &sweep.estimation;
        if sweep.repetitions == 0
            || sweep.kl_samples == 0
            || sweep.pool_noise_draws == 0
            || est.batch_samples == 0
            || est.inner_iters == 0
            || est.unified_calls > est.calls
            || !(est.eta > 0.0)
            || !(est.eta_half_life >= 0.0)
        {
            return Err(Error::Config("invalid sweep or estimation schedule".into()));
        }
        if self.comparison.seeds.is_empty() {
            return Err(Error::Config("comparison needs at least one seed".into()));
        }
        Ok(())
    }

    /// Hash of the canonical serialization, output directory excluded;
    /// stamped on every output row.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(&Self {
            output_dir: PathBuf::new(),
            ..self.clone()
        })
        .expect("config serializes");
        hex::encode(&Sha256::digest(canonical.as_bytes())[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.digest(), cfg.digest());
    }

    #[test]
    fn digest_ignores_the_output_directory() {
        let cfg = ExperimentConfig::default();
        let moved = ExperimentConfig { output_dir: "elsewhere".into(), ..cfg.clone() };
        assert_eq!(moved.digest(), cfg.digest());
        let reseeded = ExperimentConfig { seed: 99, ..cfg.clone() };
        assert_ne!(reseeded.digest(), cfg.digest());
    }

    #[test]
    fn defaults_match_the_reference_experiments() {
        let cfg = ExperimentConfig::default();
        assert_eq!((cfg.model.n_visible, cfg.model.n_hidden), (12, 6));
        assert_eq!((cfg.noise.w_mean, cfg.noise.b_mean, cfg.noise.c_mean), (6.8, 7.0, 4.5));
        assert_eq!(cfg.sweep.estimation.inner_iters, 3);
        assert_eq!(cfg.sweep.estimation.model_phase, ModelPhase::Cd { layer_updates: 2 });
        let t = &cfg.train;
        assert_eq!((t.epochs, t.beta_updates_per_epoch, t.unified_update_epochs), (1500, 5, 500));
        assert_eq!(t.beta_model_phase, ModelPhase::Cd { layer_updates: 2 });
        assert_eq!(cfg.comparison.seeds.len(), 5);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            seed = 7
            [model]
            n_visible = 4
            n_hidden = 2
            [dataset]
            kind = "bars_and_stripes"
            rows = 2
            cols = 2
            [train]
            epochs = 10
            unified_update_epochs = 5
            variant = "three_parameter"
            batch = { minibatch = 2 }
            [train.beta_model_phase]
            cd = { layer_updates = 4 }
            [sweep]
            sigmas = [0.0, 0.5]
            "#,
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.variant, BetaVariant::ThreeParameter);
        assert_eq!(cfg.train.beta_model_phase, ModelPhase::Cd { layer_updates: 4 });
        assert_eq!(cfg.sweep.repetitions, 10);
    }

    #[test]
    fn inconsistent_configs_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.model.n_visible = 10;
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.sweep.sigmas.clear();
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.dataset = DatasetSpec::File {
            path: "/definitely/not/here.txt".into(),
        };
        assert!(cfg.validate().is_err());

        assert!(ExperimentConfig::from_toml_str("bogus_key = 1").is_err());
    }
}

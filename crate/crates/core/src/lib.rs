//! Restricted Boltzmann machines trained on samples from an imperfect
//! sampler whose per-term distortion is estimated during training.
//!
//! Layout:
//! - [`rbm`]: parameters, energies and exact enumeration oracles
//! - [`sampling`]: Gibbs, CD-k, exact table and simulated noisy-annealer samplers
//! - [`calibration`]: distortion estimates, compensation and online estimation
//! - [`training`]: the training loop and its negative-phase providers
//! - [`evaluation`]: KL divergences and energy histograms
//! - [`harness`]: datasets, experiment configs and the sweep/comparison drivers

pub mod calibration;
pub mod error;
pub mod evaluation;
pub mod harness;
pub mod rbm;
pub mod sampling;
pub mod training;

pub use calibration::{compensate, expand, BetaEstimator, BetaSet, BetaTrace, BetaVariant};
pub use error::{Error, Result};
pub use rbm::{energy, exact_distribution, Configuration, ExactDistribution, RbmParams};
pub use sampling::{NoiseModel, NoiseSpec, SampleSet, SourceTag};
pub use training::{train, TrainConfig, TrainMode};

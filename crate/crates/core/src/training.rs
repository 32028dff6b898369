//! Likelihood-gradient training with interchangeable negative phases.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::calibration::{compensate, BetaEstimator, BetaSet, BetaTrace, BetaVariant, ModelPhase, StepScaling, UpdateRule};
use crate::error::{Error, Result};
use crate::evaluation::{kl_visible, EmpiricalDistribution};
use crate::rbm::{logistic, log_partition, model_expectations, RbmParams, DEFAULT_ENUMERATION_CAP};
use crate::sampling::{
    cd_negative_phase, gibbs_sample, noisy_annealer_sample, Fidelity, GibbsSchedule, NoiseModel, SampleSet,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Cd,
    Gibbs,
    AnnealerCalibrated,
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::Cd => "cd",
            TrainMode::Gibbs => "gibbs",
            TrainMode::AnnealerCalibrated => "annealer_calibrated",
        })
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "cd" => TrainMode::Cd,
            "gibbs" => TrainMode::Gibbs,
            "annealer_calibrated" | "annealer" => TrainMode::AnnealerCalibrated,
            other => return Err(Error::invalid(format!("unknown training mode {other:?}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchPolicy {
    FullBatch,
    Minibatch(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub eta_theta: f64,
    pub eta_beta: f64,
    pub batch: BatchPolicy,
    pub cd_k: usize,
    /// Estimator iterations per epoch on that epoch's annealer samples.
    pub beta_updates_per_epoch: usize,
    /// Epochs during which every beta component follows the single-factor rule.
    pub unified_update_epochs: usize,
    pub variant: BetaVariant,
    pub annealer_samples_per_epoch: usize,
    pub annealer_fidelity: Fidelity,
    pub beta_model_phase: ModelPhase,
    pub beta_step_scaling: StepScaling,
    pub initial_beta: f64,
    pub gibbs: GibbsSchedule,
    /// Standard deviation of the initial weights; biases start at zero.
    pub init_scale: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1500,
            eta_theta: 0.05,
            eta_beta: 0.01,
            batch: BatchPolicy::FullBatch,
            cd_k: 1,
            beta_updates_per_epoch: 5,
            unified_update_epochs: 500,
            variant: BetaVariant::OneParameter,
            annealer_samples_per_epoch: 1000,
            annealer_fidelity: Fidelity::Exact,
            beta_model_phase: ModelPhase::Cd { layer_updates: 2 },
            beta_step_scaling: StepScaling::Plain,
            initial_beta: 1.0,
            gibbs: GibbsSchedule::default(),
            init_scale: 0.01,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("cd_k", self.cd_k),
            ("beta_updates_per_epoch", self.beta_updates_per_epoch),
            ("annealer_samples_per_epoch", self.annealer_samples_per_epoch),
            ("gibbs.thinning", self.gibbs.thinning),
            ("gibbs.chains", self.gibbs.chains),
        ];
        for (name, x) in positive {
            if x == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if let BatchPolicy::Minibatch(0) = self.batch {
            return Err(Error::Config("minibatch size must be positive".into()));
        }
        if self.unified_update_epochs > self.epochs {
            return Err(Error::Config(format!(
                "unified_update_epochs ({}) exceeds epochs ({})",
                self.unified_update_epochs, self.epochs
            )));
        }
        for (name, x) in [("eta_theta", self.eta_theta), ("eta_beta", self.eta_beta)] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.initial_beta > 0.0) || !(self.init_scale >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(
                "initial_beta must be positive; init_scale and weight_decay non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Likelihood gradient in `theta`, before the learning rate.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

fn data_phase(params: &RbmParams, data: &[Vec<u8>]) -> Result<Gradient> {
    let (n, m) = (params.n_visible(), params.n_hidden());
    if data.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let mut g = Gradient {
        w: vec![0.0; n * m],
        b: vec![0.0; n],
        c: vec![0.0; m],
    };
    let nd = data.len() as f64;
    let mut ph = vec![0.0; m];
    for v in data {
        if v.len() != n {
            return Err(Error::DimensionMismatch {
                what: "data row",
                expected: n,
                found: v.len(),
            });
        }
        ph.copy_from_slice(params.hidden_bias());
        params.add_hidden_fields(v, &mut ph);
        ph.iter_mut().for_each(|x| *x = logistic(*x));
        for (cj, &p) in g.c.iter_mut().zip(&ph) {
            *cj += p / nd;
        }
        for i in (0..n).filter(|&i| v[i] != 0) {
            g.b[i] += 1.0 / nd;
            for (wij, &p) in g.w[i * m..(i + 1) * m].iter_mut().zip(&ph) {
                *wij += p / nd;
            }
        }
    }
    Ok(g)
}

/// Data statistics (with exact hidden conditionals) minus sample statistics.
pub fn rbm_gradient(params: &RbmParams, data: &[Vec<u8>], negative: &SampleSet) -> Result<Gradient> {
    let (n, m) = (params.n_visible(), params.n_hidden());
    if negative.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    if negative.n_visible() != n || negative.n_hidden() != m {
        return Err(Error::DimensionMismatch {
            what: "negative sample width",
            expected: n + m,
            found: negative.n_visible() + negative.n_hidden(),
        });
    }
    let mut g = data_phase(params, data)?;
    let ns = negative.len() as f64;
    for (v, h) in negative.rows() {
        for (cj, &hj) in g.c.iter_mut().zip(h) {
            *cj -= f64::from(hj) / ns;
        }
        for i in (0..n).filter(|&i| v[i] != 0) {
            g.b[i] -= 1.0 / ns;
            for (wij, &hj) in g.w[i * m..(i + 1) * m].iter_mut().zip(h) {
                *wij -= f64::from(hj) / ns;
            }
        }
    }
    Ok(g)
}

/// The log-likelihood gradient with the negative phase from exact model
/// expectations.
pub fn exact_rbm_gradient(params: &RbmParams, data: &[Vec<u8>]) -> Result<Gradient> {
    let mut g = data_phase(params, data)?;
    let mom = model_expectations(params)?;
    for (x, e) in g.w.iter_mut().zip(&mom.vh).chain(g.b.iter_mut().zip(&mom.v)).chain(g.c.iter_mut().zip(&mom.h)) {
        *x -= e;
    }
    Ok(g)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub kl: Option<f64>,
    pub reconstruction_error: f64,
    pub w_norm: f64,
    pub b_norm: f64,
    pub c_norm: f64,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainRecord {
    pub epochs: Vec<EpochRecord>,
}

impl TrainRecord {
    /// `(epoch, kl)` of the smallest recorded KL.
    pub fn min_kl(&self) -> Option<(usize, f64)> {
        self.epochs
            .iter()
            .filter_map(|e| e.kl.map(|k| (e.epoch, k)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }

    /// One row per epoch. Wall time is left out so reruns compare byte-equal.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "epoch,kl,reconstruction_error,w_norm,b_norm,c_norm")?;
        for e in &self.epochs {
            let kl = e.kl.map(|k| k.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{}",
                e.epoch, kl, e.reconstruction_error, e.w_norm, e.b_norm, e.c_norm
            )?;
        }
        Ok(())
    }

    pub fn total_wall_time_s(&self) -> f64 {
        self.epochs.iter().map(|e| e.wall_time_s).sum()
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: RbmParams,
    pub record: TrainRecord,
    pub trace: BetaTrace,
}

/// What the per-epoch observer sees.
pub struct EpochView<'a> {
    pub record: &'a EpochRecord,
    pub params: &'a RbmParams,
    pub beta: Option<&'a BetaSet>,
}

pub fn train(
    data: &[Vec<u8>],
    n_hidden: usize,
    config: &TrainConfig,
    mode: TrainMode,
    noise: Option<&NoiseModel>,
) -> Result<TrainOutcome> {
    train_with(data, n_hidden, config, mode, noise, |_| Ok(()))
}

/// Mean squared error of a mean-field reconstruction `v -> P(h|v) -> P(v|h)`.
pub fn reconstruction_error(params: &RbmParams, data: &[Vec<u8>]) -> f64 {
    let (n, m) = (params.n_visible(), params.n_hidden());
    let mut total = 0.0;
    for v in data {
        let mut ph = params.hidden_bias().to_vec();
        params.add_hidden_fields(v, &mut ph);
        ph.iter_mut().for_each(|x| *x = logistic(*x));
        for i in 0..n {
            let a = params.visible_bias()[i]
                + (0..m).map(|j| params.w(i, j) * ph[j]).sum::<f64>();
            total += (f64::from(v[i]) - logistic(a)).powi(2);
        }
    }
    total / (data.len() * n) as f64
}

fn norm(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// [`train`] with an observer called after every epoch.
pub fn train_with(
    data: &[Vec<u8>],
    n_hidden: usize,
    config: &TrainConfig,
    mode: TrainMode,
    noise: Option<&NoiseModel>,
    mut observer: impl FnMut(EpochView<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let n_visible = match data.first() {
        Some(v) => v.len(),
        None => return Err(Error::Config("training data is empty".into())),
    };
    if n_visible == 0 || n_hidden == 0 {
        return Err(Error::Config("layer sizes must be positive".into()));
    }
    let noise = match (mode, noise) {
        (TrainMode::AnnealerCalibrated, None) => {
            return Err(Error::Config("annealer_calibrated mode needs a noise model".into()))
        }
        (TrainMode::AnnealerCalibrated, Some(nm)) => {
            let mult = nm.multipliers();
            if mult.n_visible != n_visible || mult.n_hidden != n_hidden {
                return Err(Error::Config(format!(
                    "noise model is {}x{}, model is {n_visible}x{n_hidden}",
                    mult.n_visible, mult.n_hidden
                )));
            }
            Some(nm)
        }
        (_, nm) => nm,
    };
    let q_data = EmpiricalDistribution::from_visible(n_visible, data)?;
    let kl_evaluable = n_visible.min(n_hidden) <= DEFAULT_ENUMERATION_CAP;

    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut params = RbmParams::zeros(n_visible, n_hidden);
    if config.init_scale > 0.0 {
        let normal = Normal::new(0.0, config.init_scale).expect("validated");
        let (w, _, _) = params.parts_mut();
        w.iter_mut().for_each(|x| *x = normal.sample(&mut init_rng));
    }

    let calibrating = mode == TrainMode::AnnealerCalibrated;
    let mut beta = BetaSet::uniform(config.variant, n_visible, n_hidden, config.initial_beta);
    let estimator = BetaEstimator {
        eta: config.eta_beta,
        inner_iters: config.beta_updates_per_epoch,
        model_phase: config.beta_model_phase,
        scaling: config.beta_step_scaling,
    };
    let mut record = TrainRecord::default();
    let mut trace = BetaTrace::new();
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let batches: Vec<Vec<Vec<u8>>> = match config.batch {
            BatchPolicy::FullBatch => vec![data.to_vec()],
            BatchPolicy::Minibatch(size) => {
                order.shuffle(&mut rng);
                order
                    .chunks(size)
                    .map(|idx| idx.iter().map(|&k| data[k].clone()).collect())
                    .collect()
            }
        };
        for batch in &batches {
            let negative = match mode {
                TrainMode::Cd => cd_negative_phase(&params, batch, config.cd_k, &mut rng)?,
                TrainMode::Gibbs => {
                    gibbs_sample(&params, config.annealer_samples_per_epoch, &config.gibbs, &mut rng)?
                }
                TrainMode::AnnealerCalibrated => {
                    let noise = noise.expect("checked above");
                    let programmed = compensate(&params, &beta)?;
                    let samples = noisy_annealer_sample(
                        &programmed,
                        noise,
                        config.annealer_samples_per_epoch,
                        &mut rng,
                        config.annealer_fidelity,
                    )?;
                    let rule = if epoch < config.unified_update_epochs {
                        UpdateRule::Collapsed
                    } else {
                        UpdateRule::PerComponent
                    };
                    beta = estimator.step(&params, &samples, &beta, rule, &mut rng)?;
                    samples
                }
            };
            let g = rbm_gradient(&params, batch, &negative)?;
            let eta = config.eta_theta;
            let decay = config.weight_decay;
            let (w, b, c) = params.parts_mut();
            for (x, d) in w.iter_mut().zip(&g.w) {
                *x += eta * (d - decay * *x);
            }
            for (x, d) in b.iter_mut().zip(&g.b) {
                *x += eta * d;
            }
            for (x, d) in c.iter_mut().zip(&g.c) {
                *x += eta * d;
            }
            if !params.weights().iter().all(|x| x.is_finite()) {
                return Err(Error::invalid(format!("parameters diverged at epoch {epoch}")));
            }
        }
        let kl = if kl_evaluable {
            Some(kl_visible(&q_data, &params, Some(log_partition(&params)?))?)
        } else {
            None
        };
        let rec = EpochRecord {
            epoch,
            kl,
            reconstruction_error: reconstruction_error(&params, data),
            w_norm: norm(params.weights()),
            b_norm: norm(params.visible_bias()),
            c_norm: norm(params.hidden_bias()),
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        if calibrating {
            trace.push(epoch, beta.clone())?;
        }
        observer(EpochView {
            record: &rec,
            params: &params,
            beta: calibrating.then_some(&beta),
        })?;
        record.epochs.push(rec);
    }
    Ok(TrainOutcome {
        params,
        record,
        trace,
    })
}

//! Calibration of an imperfect sampler.
//!
//! The sampler is modelled as drawing from the Boltzmann distribution of the
//! programmed parameters multiplied, term by term, by unknown positive
//! factors. A [`BetaSet`] is an estimate of those factors under one of three
//! parameterizations. Programming `params / beta` ([`compensate`]) makes the
//! sampler realize the intended model once `beta` is right, and
//! [`BetaEstimator`] refines `beta` online from the sampler's own output with
//! a contrastive-divergence style update.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rbm::{divided_params, model_expectations, scaled_params, Multipliers, RbmParams};
use crate::sampling::{sample_hidden, sample_visible, SampleSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaVariant {
    OneParameter,
    ThreeParameter,
    OneAndAllBias,
}

impl BetaVariant {
    pub const ALL: [BetaVariant; 3] = [
        BetaVariant::OneParameter,
        BetaVariant::ThreeParameter,
        BetaVariant::OneAndAllBias,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            BetaVariant::OneParameter => "one_parameter",
            BetaVariant::ThreeParameter => "three_parameter",
            BetaVariant::OneAndAllBias => "one_and_all_bias",
        }
    }

    /// Column names in component order.
    pub fn component_names(&self, n_visible: usize, n_hidden: usize) -> Vec<String> {
        match self {
            BetaVariant::OneParameter => vec!["beta_eff".into()],
            BetaVariant::ThreeParameter => {
                vec!["beta_vh".into(), "beta_v".into(), "beta_h".into()]
            }
            BetaVariant::OneAndAllBias => std::iter::once("beta_vh".to_string())
                .chain((0..n_visible).map(|i| format!("beta_v{i}")))
                .chain((0..n_hidden).map(|j| format!("beta_h{j}")))
                .collect(),
        }
    }
}

impl fmt::Display for BetaVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BetaVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BetaVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variant {s:?}")))
    }
}

/// Estimated per-term inverse-temperature factors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum BetaSet {
    OneParameter {
        beta_eff: f64,
    },
    ThreeParameter {
        beta_vh: f64,
        beta_v: f64,
        beta_h: f64,
    },
    OneAndAllBias {
        beta_vh: f64,
        beta_v: Vec<f64>,
        beta_h: Vec<f64>,
    },
}

impl BetaSet {
    /// Every component equal to `value`.
    pub fn uniform(variant: BetaVariant, n_visible: usize, n_hidden: usize, value: f64) -> Self {
        match variant {
            BetaVariant::OneParameter => BetaSet::OneParameter { beta_eff: value },
            BetaVariant::ThreeParameter => BetaSet::ThreeParameter {
                beta_vh: value,
                beta_v: value,
                beta_h: value,
            },
            BetaVariant::OneAndAllBias => BetaSet::OneAndAllBias {
                beta_vh: value,
                beta_v: vec![value; n_visible],
                beta_h: vec![value; n_hidden],
            },
        }
    }

    pub fn identity(variant: BetaVariant, n_visible: usize, n_hidden: usize) -> Self {
        Self::uniform(variant, n_visible, n_hidden, 1.0)
    }

    pub fn variant(&self) -> BetaVariant {
        match self {
            BetaSet::OneParameter { .. } => BetaVariant::OneParameter,
            BetaSet::ThreeParameter { .. } => BetaVariant::ThreeParameter,
            BetaSet::OneAndAllBias { .. } => BetaVariant::OneAndAllBias,
        }
    }

    pub fn components(&self) -> Vec<f64> {
        match self {
            BetaSet::OneParameter { beta_eff } => vec![*beta_eff],
            BetaSet::ThreeParameter {
                beta_vh,
                beta_v,
                beta_h,
            } => vec![*beta_vh, *beta_v, *beta_h],
            BetaSet::OneAndAllBias {
                beta_vh,
                beta_v,
                beta_h,
            } => std::iter::once(*beta_vh)
                .chain(beta_v.iter().copied())
                .chain(beta_h.iter().copied())
                .collect(),
        }
    }

    /// Same variant and shape with new component values.
    pub fn with_components(&self, values: &[f64]) -> Result<Self> {
        let expected = self.components().len();
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "beta components",
                expected,
                found: values.len(),
            });
        }
        Ok(match self {
            BetaSet::OneParameter { .. } => BetaSet::OneParameter { beta_eff: values[0] },
            BetaSet::ThreeParameter { .. } => BetaSet::ThreeParameter {
                beta_vh: values[0],
                beta_v: values[1],
                beta_h: values[2],
            },
            BetaSet::OneAndAllBias { beta_v, .. } => {
                let n = beta_v.len();
                BetaSet::OneAndAllBias {
                    beta_vh: values[0],
                    beta_v: values[1..1 + n].to_vec(),
                    beta_h: values[1 + n..].to_vec(),
                }
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.components().iter().all(|&x| x > 0.0 && x.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "beta components must be strictly positive: {:?}",
                self.components()
            )))
        }
    }

    /// Componentwise product.
    pub fn hadamard(&self, other: &BetaSet) -> Result<BetaSet> {
        if self.variant() != other.variant() {
            return Err(Error::invalid("cannot combine different beta variants"));
        }
        let a = self.components();
        let b = other.components();
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch {
                what: "beta components",
                expected: a.len(),
                found: b.len(),
            });
        }
        self.with_components(&a.iter().zip(&b).map(|(x, y)| x * y).collect::<Vec<_>>())
    }
}

/// Broadcasts a [`BetaSet`] to one multiplier per energy term.
pub fn expand(beta: &BetaSet, n_visible: usize, n_hidden: usize) -> Result<Multipliers> {
    let nm = n_visible * n_hidden;
    Ok(match beta {
        BetaSet::OneParameter { beta_eff } => Multipliers::uniform(n_visible, n_hidden, *beta_eff),
        BetaSet::ThreeParameter {
            beta_vh,
            beta_v,
            beta_h,
        } => Multipliers {
            n_visible,
            n_hidden,
            w: vec![*beta_vh; nm],
            b: vec![*beta_v; n_visible],
            c: vec![*beta_h; n_hidden],
        },
        BetaSet::OneAndAllBias {
            beta_vh,
            beta_v,
            beta_h,
        } => {
            if beta_v.len() != n_visible || beta_h.len() != n_hidden {
                return Err(Error::DimensionMismatch {
                    what: "per-bias betas",
                    expected: n_visible + n_hidden,
                    found: beta_v.len() + beta_h.len(),
                });
            }
            Multipliers {
                n_visible,
                n_hidden,
                w: vec![*beta_vh; nm],
                b: beta_v.clone(),
                c: beta_h.clone(),
            }
        }
    })
}

/// Parameters to program so that a sampler distorted by `beta` realizes
/// `params`.
pub fn compensate(params: &RbmParams, beta: &BetaSet) -> Result<RbmParams> {
    beta.validate()?;
    divided_params(params, &expand(beta, params.n_visible(), params.n_hidden())?)
}

/// Components of a one-and-all-bias set whose bias is exactly zero; their
/// gradient vanishes identically, so the estimator leaves them untouched.
pub fn unidentifiable_components(params: &RbmParams, beta: &BetaSet) -> Vec<String> {
    if beta.variant() != BetaVariant::OneAndAllBias {
        return Vec::new();
    }
    let names = beta
        .variant()
        .component_names(params.n_visible(), params.n_hidden());
    params
        .visible_bias()
        .iter()
        .chain(params.hidden_bias())
        .zip(&names[1..])
        .filter(|(&x, _)| x == 0.0)
        .map(|(_, name)| name.clone())
        .collect()
}

/// Averages of the negated energy terms: `sum w_ij v_i h_j`, `sum b_i v_i`,
/// `sum c_j h_j` and their per-bias pieces.
#[derive(Clone, Debug, PartialEq)]
pub struct TermAverages {
    pub vh: f64,
    pub v: f64,
    pub h: f64,
    pub v_each: Vec<f64>,
    pub h_each: Vec<f64>,
}

impl TermAverages {
    /// `-<E>`.
    pub fn total(&self) -> f64 {
        self.vh + self.v + self.h
    }
}

/// Term averages under the empirical distribution of `samples`, with terms
/// evaluated at `params`.
pub fn sample_term_averages(params: &RbmParams, samples: &SampleSet) -> Result<TermAverages> {
    if samples.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    if samples.n_visible() != params.n_visible() || samples.n_hidden() != params.n_hidden() {
        return Err(Error::DimensionMismatch {
            what: "sample width",
            expected: params.total_bits(),
            found: samples.n_visible() + samples.n_hidden(),
        });
    }
    let (n, m) = (params.n_visible(), params.n_hidden());
    let mut vh = 0.0;
    let mut v_on = vec![0u64; n];
    let mut h_on = vec![0u64; m];
    let mut fields = vec![0.0; m];
    for (v, h) in samples.rows() {
        fields.iter_mut().for_each(|x| *x = 0.0);
        params.add_hidden_fields(v, &mut fields);
        vh += fields
            .iter()
            .zip(h)
            .filter(|(_, &hj)| hj != 0)
            .map(|(a, _)| a)
            .sum::<f64>();
        for (c, &x) in v_on.iter_mut().zip(v) {
            *c += u64::from(x);
        }
        for (c, &x) in h_on.iter_mut().zip(h) {
            *c += u64::from(x);
        }
    }
    let total = samples.len() as f64;
    let v_each: Vec<f64> = params
        .visible_bias()
        .iter()
        .zip(&v_on)
        .map(|(b, &k)| b * k as f64 / total)
        .collect();
    let h_each: Vec<f64> = params
        .hidden_bias()
        .iter()
        .zip(&h_on)
        .map(|(c, &k)| c * k as f64 / total)
        .collect();
    Ok(TermAverages {
        vh: vh / total,
        v: v_each.iter().sum(),
        h: h_each.iter().sum(),
        v_each,
        h_each,
    })
}

/// Exact term averages (terms evaluated at `params`) under the Boltzmann
/// distribution of `sampling`.
pub fn model_term_averages(params: &RbmParams, sampling: &RbmParams) -> Result<TermAverages> {
    let mom = model_expectations(sampling)?;
    let v_each: Vec<f64> = params
        .visible_bias()
        .iter()
        .zip(&mom.v)
        .map(|(b, p)| b * p)
        .collect();
    let h_each: Vec<f64> = params
        .hidden_bias()
        .iter()
        .zip(&mom.h)
        .map(|(c, p)| c * p)
        .collect();
    Ok(TermAverages {
        vh: params.weights().iter().zip(&mom.vh).map(|(w, p)| w * p).sum(),
        v: v_each.iter().sum(),
        h: h_each.iter().sum(),
        v_each,
        h_each,
    })
}

/// Unscaled update direction for a [`BetaSet`], one entry per component.
#[derive(Clone, Debug, PartialEq)]
pub struct BetaDelta {
    pub variant: BetaVariant,
    pub components: Vec<f64>,
}

fn check_bundles(a: &TermAverages, b: &TermAverages) -> Result<()> {
    if a.v_each.len() != b.v_each.len() || a.h_each.len() != b.h_each.len() {
        return Err(Error::DimensionMismatch {
            what: "term average bundles",
            expected: a.v_each.len() + a.h_each.len(),
            found: b.v_each.len() + b.h_each.len(),
        });
    }
    Ok(())
}

/// Log-likelihood gradient in `beta`: sample averages minus model averages
/// of the negated energy terms each component multiplies.
///
/// For a single factor this is `<E>_model - <E>_samples`.
pub fn beta_gradient(
    variant: BetaVariant,
    samples: &TermAverages,
    model: &TermAverages,
) -> Result<BetaDelta> {
    check_bundles(samples, model)?;
    let components = match variant {
        BetaVariant::OneParameter => vec![samples.total() - model.total()],
        BetaVariant::ThreeParameter => vec![
            samples.vh - model.vh,
            samples.v - model.v,
            samples.h - model.h,
        ],
        BetaVariant::OneAndAllBias => std::iter::once(samples.vh - model.vh)
            .chain(samples.v_each.iter().zip(&model.v_each).map(|(s, m)| s - m))
            .chain(samples.h_each.iter().zip(&model.h_each).map(|(s, m)| s - m))
            .collect(),
    };
    Ok(BetaDelta {
        variant,
        components,
    })
}

/// The single-factor gradient broadcast to every component of `variant`.
pub fn collapsed_beta_gradient(
    variant: BetaVariant,
    samples: &TermAverages,
    model: &TermAverages,
) -> Result<BetaDelta> {
    check_bundles(samples, model)?;
    let d = samples.total() - model.total();
    let len = match variant {
        BetaVariant::OneParameter => 1,
        BetaVariant::ThreeParameter => 3,
        BetaVariant::OneAndAllBias => 1 + samples.v_each.len() + samples.h_each.len(),
    };
    Ok(BetaDelta {
        variant,
        components: vec![d; len],
    })
}

/// How `<...>_model` is obtained inside an estimation step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelPhase {
    /// Evolve the returned samples by this many layer updates (visible
    /// first, since the samples already carry hidden bits).
    Cd { layer_updates: usize },
    /// Exact enumeration; for oracle runs on small models.
    Exact,
}

/// How a gradient component becomes a step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepScaling {
    /// `eta * gradient`.
    #[default]
    Plain,
    /// `eta * gradient / (variance + damping * max variance)`, the variance
    /// being that of the component's energy term over the observed samples
    /// (a damped diagonal Fisher step).
    Variance { damping: f64 },
}

/// Which gradient the estimator applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateRule {
    PerComponent,
    /// Every component moves by the single-factor gradient.
    Collapsed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaEstimator {
    pub eta: f64,
    pub inner_iters: usize,
    pub model_phase: ModelPhase,
    #[serde(default)]
    pub scaling: StepScaling,
}

impl Default for BetaEstimator {
    fn default() -> Self {
        Self {
            eta: 0.01,
            inner_iters: 3,
            model_phase: ModelPhase::Cd { layer_updates: 2 },
            scaling: StepScaling::Plain,
        }
    }
}

impl BetaEstimator {
    /// One estimation step.
    ///
    /// `samples` must come from the sampler programmed with
    /// `compensate(params, beta_old)`. They then follow the model with
    /// residual factors `beta_tmp = beta_true / beta_old`; `beta_tmp` is fitted
    /// starting from 1 and the result is `beta_tmp * beta_old`.
    pub fn step<R: Rng + ?Sized>(
        &self,
        params: &RbmParams,
        samples: &SampleSet,
        beta_old: &BetaSet,
        rule: UpdateRule,
        rng: &mut R,
    ) -> Result<BetaSet> {
        if self.inner_iters == 0 {
            return Err(Error::invalid("inner_iters must be >= 1"));
        }
        if let StepScaling::Variance { damping } = self.scaling {
            if !(damping >= 0.0) {
                return Err(Error::invalid("damping must be >= 0"));
            }
        }
        if let ModelPhase::Cd { layer_updates: 0 } = self.model_phase {
            return Err(Error::invalid("layer_updates must be >= 1"));
        }
        beta_old.validate()?;
        let (n, m) = (params.n_visible(), params.n_hidden());
        let variant = beta_old.variant();
        let observed = sample_term_averages(params, samples)?;
        let collapsed = rule == UpdateRule::Collapsed;
        let scale: Vec<f64> = match self.scaling {
            StepScaling::Plain => vec![1.0; beta_old.components().len()],
            StepScaling::Variance { damping } => {
                let vars = term_variances(params, samples, variant, collapsed);
                let floor = damping * vars.iter().cloned().fold(0.0, f64::max);
                vars.iter()
                    .map(|&var| if var + floor > 1e-12 { 1.0 / (var + floor) } else { 1.0 })
                    .collect()
            }
        };
        let mut tmp = BetaSet::identity(variant, n, m);
        let mut evolved = samples.clone();
        for _ in 0..self.inner_iters {
            let sampling = scaled_params(params, &expand(&tmp, n, m)?)?;
            let model = match self.model_phase {
                ModelPhase::Exact => model_term_averages(params, &sampling)?,
                ModelPhase::Cd { layer_updates } => {
                    evolved.clone_from(samples);
                    evolve(&sampling, &mut evolved, layer_updates, rng);
                    sample_term_averages(params, &evolved)?
                }
            };
            let delta = match rule {
                UpdateRule::PerComponent => beta_gradient(variant, &observed, &model)?,
                UpdateRule::Collapsed => collapsed_beta_gradient(variant, &observed, &model)?,
            };
            let next: Vec<f64> = tmp
                .components()
                .iter()
                .zip(&delta.components)
                .zip(&scale)
                .map(|((&b, &d), &k)| {
                    let x = b + self.eta * k * d;
                    // an overshoot past zero halves the factor instead
                    if x > 0.0 {
                        x
                    } else {
                        0.5 * b
                    }
                })
                .collect();
            tmp = tmp.with_components(&next)?;
        }
        tmp.hadamard(beta_old)
    }
}

/// Sample variance of the energy term behind each component; under the
/// collapsed rule every component gets the variance of the total energy.
fn term_variances(params: &RbmParams, samples: &SampleSet, variant: BetaVariant, collapsed: bool) -> Vec<f64> {
    let (n, m) = (params.n_visible(), params.n_hidden());
    let total = samples.len() as f64;
    let mut fields = vec![0.0; m];
    // per-sample (vh, v, h) terms
    let terms: Vec<[f64; 3]> = samples
        .rows()
        .map(|(v, h)| {
            fields.iter_mut().for_each(|x| *x = 0.0);
            params.add_hidden_fields(v, &mut fields);
            let vh: f64 = fields.iter().zip(h).filter(|(_, &hj)| hj != 0).map(|(a, _)| a).sum();
            let bv: f64 = params.visible_bias().iter().zip(v).filter(|(_, &x)| x != 0).map(|(b, _)| b).sum();
            let ch: f64 = params.hidden_bias().iter().zip(h).filter(|(_, &x)| x != 0).map(|(c, _)| c).sum();
            [vh, bv, ch]
        })
        .collect();
    let variance = |f: &dyn Fn(&[f64; 3]) -> f64| {
        let mean = terms.iter().map(f).sum::<f64>() / total;
        terms.iter().map(|t| (f(t) - mean).powi(2)).sum::<f64>() / total
    };
    let len = variant.component_names(n, m).len();
    if collapsed {
        return vec![variance(&|t| t[0] + t[1] + t[2]); len];
    }
    match variant {
        BetaVariant::OneParameter => vec![variance(&|t| t[0] + t[1] + t[2])],
        BetaVariant::ThreeParameter => vec![variance(&|t| t[0]), variance(&|t| t[1]), variance(&|t| t[2])],
        BetaVariant::OneAndAllBias => {
            let mut v_on = vec![0u64; n];
            let mut h_on = vec![0u64; m];
            for (v, h) in samples.rows() {
                v_on.iter_mut().zip(v).for_each(|(c, &x)| *c += u64::from(x));
                h_on.iter_mut().zip(h).for_each(|(c, &x)| *c += u64::from(x));
            }
            let bernoulli = |bias: f64, on: u64| {
                let p = on as f64 / total;
                bias * bias * p * (1.0 - p)
            };
            std::iter::once(variance(&|t| t[0]))
                .chain(params.visible_bias().iter().zip(&v_on).map(|(&b, &k)| bernoulli(b, k)))
                .chain(params.hidden_bias().iter().zip(&h_on).map(|(&c, &k)| bernoulli(c, k)))
                .collect()
        }
    }
}

/// Alternating layer updates in place, starting with the visible layer.
fn evolve<R: Rng + ?Sized>(params: &RbmParams, set: &mut SampleSet, layer_updates: usize, rng: &mut R) {
    let mut sv = vec![0.0; params.n_visible()];
    let mut sh = vec![0.0; params.n_hidden()];
    for (v, h) in set.rows_mut() {
        for k in 0..layer_updates {
            if k % 2 == 0 {
                sample_visible(params, h, v, &mut sv, rng);
            } else {
                sample_hidden(params, v, h, &mut sh, rng);
            }
        }
    }
}

/// Per-epoch snapshots of the estimate.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BetaTrace {
    entries: Vec<(usize, BetaSet)>,
}

impl BetaTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, epoch: usize, beta: BetaSet) -> Result<()> {
        if let Some((last, prev)) = self.entries.last() {
            if epoch <= *last {
                return Err(Error::invalid(format!(
                    "trace epochs must increase: {epoch} after {last}"
                )));
            }
            if prev.variant() != beta.variant() {
                return Err(Error::invalid("trace mixes beta variants"));
            }
        }
        self.entries.push((epoch, beta));
        Ok(())
    }

    pub fn entries(&self) -> &[(usize, BetaSet)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last(&self) -> Option<&BetaSet> {
        self.entries.last().map(|e| &e.1)
    }

    /// CSV with columns `epoch,variant,<component names>`.
    pub fn write_csv<W: Write>(&self, mut out: W, n_visible: usize, n_hidden: usize) -> Result<()> {
        let Some((_, first)) = self.entries.first() else {
            writeln!(out, "epoch,variant")?;
            return Ok(());
        };
        let names = first.variant().component_names(n_visible, n_hidden);
        writeln!(out, "epoch,variant,{}", names.join(","))?;
        for (epoch, beta) in &self.entries {
            write!(out, "{epoch},{}", beta.variant())?;
            for x in beta.components() {
                write!(out, ",{x}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rbm::{energy, Configuration};
    use crate::sampling::SourceTag;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn expand_patterns() {
        let one = expand(&BetaSet::identity(BetaVariant::OneParameter, 3, 2), 3, 2).unwrap();
        assert_eq!(one, Multipliers::ones(3, 2));

        let three = BetaSet::ThreeParameter {
            beta_vh: 2.0,
            beta_v: 3.0,
            beta_h: 4.0,
        };
        let e = expand(&three, 2, 2).unwrap();
        assert_eq!(e.w, vec![2.0; 4]);
        assert_eq!(e.b, vec![3.0, 3.0]);
        assert_eq!(e.c, vec![4.0, 4.0]);

        let nested = BetaSet::OneAndAllBias {
            beta_vh: 2.0,
            beta_v: vec![3.0; 2],
            beta_h: vec![4.0; 2],
        };
        assert_eq!(expand(&nested, 2, 2).unwrap(), e);
        assert!(expand(&nested, 3, 2).is_err());
    }

    #[test]
    fn compensate_identity_and_inverse() {
        let mut r = rng(1);
        let p = RbmParams::random_uniform(3, 2, 2.0, &mut r);
        assert_eq!(compensate(&p, &BetaSet::identity(BetaVariant::ThreeParameter, 3, 2)).unwrap(), p);
        let beta = BetaSet::OneAndAllBias {
            beta_vh: 6.8,
            beta_v: vec![7.0, 6.5, 7.7],
            beta_h: vec![4.5, 4.1],
        };
        let back = scaled_params(&compensate(&p, &beta).unwrap(), &expand(&beta, 3, 2).unwrap()).unwrap();
        for (a, b) in back
            .weights()
            .iter()
            .chain(back.visible_bias())
            .chain(back.hidden_bias())
            .zip(p.weights().iter().chain(p.visible_bias()).chain(p.hidden_bias()))
        {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn compensate_rejects_non_positive() {
        let p = RbmParams::zeros(2, 2);
        let bad = BetaSet::ThreeParameter {
            beta_vh: 1.0,
            beta_v: 0.0,
            beta_h: 1.0,
        };
        assert!(compensate(&p, &bad).is_err());
    }

    #[test]
    fn component_round_trip_and_names() {
        let b = BetaSet::uniform(BetaVariant::OneAndAllBias, 2, 1, 3.0);
        assert_eq!(b.components(), vec![3.0; 4]);
        let c = b.with_components(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(
            c,
            BetaSet::OneAndAllBias {
                beta_vh: 1.0,
                beta_v: vec![2.0, 3.0],
                beta_h: vec![4.0]
            }
        );
        assert_eq!(
            BetaVariant::OneAndAllBias.component_names(2, 1),
            ["beta_vh", "beta_v0", "beta_v1", "beta_h0"]
        );
        assert!(b.with_components(&[1.0]).is_err());
    }

    #[test]
    fn term_averages_of_zero_sample() {
        let mut r = rng(2);
        let p = RbmParams::random_uniform(3, 2, 1.0, &mut r);
        let mut s = SampleSet::new(3, 2, SourceTag::Exact);
        s.push(&[0, 0, 0], &[0, 0]);
        let t = sample_term_averages(&p, &s).unwrap();
        assert_eq!(t.total(), 0.0);
        assert!(t.v_each.iter().chain(&t.h_each).all(|&x| x == 0.0));
    }

    #[test]
    fn term_averages_match_energy() {
        let mut r = rng(3);
        let p = RbmParams::random_uniform(3, 2, 1.0, &mut r);
        let mut s = SampleSet::new(3, 2, SourceTag::Exact);
        let cfg = Configuration::new(vec![1, 0, 1], vec![1, 1]);
        s.push_config(&cfg);
        let t = sample_term_averages(&p, &s).unwrap();
        assert!((t.total() + energy(&p, &cfg)).abs() < 1e-12);
    }

    #[test]
    fn term_averages_reject_empty() {
        let p = RbmParams::zeros(3, 2);
        let s = SampleSet::new(3, 2, SourceTag::Exact);
        assert!(matches!(sample_term_averages(&p, &s), Err(Error::EmptySampleSet)));
    }

    #[test]
    fn identical_bundles_give_zero_delta() {
        let t = TermAverages {
            vh: 1.0,
            v: -2.0,
            h: 0.5,
            v_each: vec![-1.0, -1.0],
            h_each: vec![0.5],
        };
        for variant in BetaVariant::ALL {
            let d = beta_gradient(variant, &t, &t).unwrap();
            assert!(d.components.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn one_parameter_delta_sign() {
        // <E>_S = -3 and <E>_model = -5: the samples are hotter than the
        // model, so the factor must come down.
        let s = TermAverages {
            vh: 3.0,
            v: 0.0,
            h: 0.0,
            v_each: vec![0.0],
            h_each: vec![0.0],
        };
        let model = TermAverages { vh: 5.0, ..s.clone() };
        let d = beta_gradient(BetaVariant::OneParameter, &s, &model).unwrap();
        assert_eq!(d.components, vec![-2.0]);
    }

    #[test]
    fn mismatched_bundles_error() {
        let a = TermAverages {
            vh: 0.0,
            v: 0.0,
            h: 0.0,
            v_each: vec![0.0; 2],
            h_each: vec![0.0; 1],
        };
        let b = TermAverages {
            v_each: vec![0.0; 3],
            ..a.clone()
        };
        assert!(beta_gradient(BetaVariant::OneAndAllBias, &a, &b).is_err());
    }

    #[test]
    fn collapsed_rule_broadcasts() {
        let s = TermAverages {
            vh: 1.0,
            v: 2.0,
            h: 3.0,
            v_each: vec![1.0, 1.0],
            h_each: vec![3.0],
        };
        let m = TermAverages {
            vh: 0.0,
            v: 0.0,
            h: 0.0,
            v_each: vec![0.0; 2],
            h_each: vec![0.0],
        };
        let d = collapsed_beta_gradient(BetaVariant::OneAndAllBias, &s, &m).unwrap();
        assert_eq!(d.components, vec![6.0; 4]);
    }

    #[test]
    fn zero_bias_components_reported() {
        let p = RbmParams::new(2, 1, vec![1.0, 1.0], vec![0.0, 0.3], vec![0.0]).unwrap();
        let beta = BetaSet::identity(BetaVariant::OneAndAllBias, 2, 1);
        assert_eq!(unidentifiable_components(&p, &beta), ["beta_v0", "beta_h0"]);
        assert!(unidentifiable_components(&p, &BetaSet::identity(BetaVariant::ThreeParameter, 2, 1)).is_empty());
    }

    #[test]
    fn estimator_rejects_bad_input() {
        let p = RbmParams::zeros(2, 1);
        let beta = BetaSet::identity(BetaVariant::OneParameter, 2, 1);
        let empty = SampleSet::new(2, 1, SourceTag::NoisyAnnealer);
        let est = BetaEstimator::default();
        assert!(est.step(&p, &empty, &beta, UpdateRule::PerComponent, &mut rng(1)).is_err());
        let mut s = empty.clone();
        s.push(&[1, 0], &[1]);
        let zero = BetaEstimator {
            inner_iters: 0,
            ..est
        };
        assert!(zero.step(&p, &s, &beta, UpdateRule::PerComponent, &mut rng(1)).is_err());
    }

    #[test]
    fn trace_requires_increasing_epochs() {
        let mut t = BetaTrace::new();
        let b = BetaSet::identity(BetaVariant::ThreeParameter, 2, 1);
        t.push(0, b.clone()).unwrap();
        t.push(3, b.clone()).unwrap();
        assert!(t.push(3, b.clone()).is_err());
        let mut out = Vec::new();
        t.write_csv(&mut out, 2, 1).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "epoch,variant,beta_vh,beta_v,beta_h\n0,three_parameter,1,1,1\n3,three_parameter,1,1,1\n"
        );
    }

    #[test]
    fn beta_set_json_is_tagged() {
        let b = BetaSet::ThreeParameter {
            beta_vh: 6.8,
            beta_v: 7.0,
            beta_h: 4.5,
        };
        let s = serde_json::to_string(&b).unwrap();
        assert_eq!(s, r#"{"variant":"three_parameter","beta_vh":6.8,"beta_v":7.0,"beta_h":4.5}"#);
        assert_eq!(serde_json::from_str::<BetaSet>(&s).unwrap(), b);
    }
}

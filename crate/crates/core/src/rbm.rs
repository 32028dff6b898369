//! Bipartite energy model over binary {0,1} units.
//!
//! Everything here is exact: energies, conditionals, the enumerated joint
//! table and closed-form marginals. The same functions double as the oracle
//! that the sampling and calibration code is checked against.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Largest `n_visible + n_hidden` for which the joint table is enumerated.
pub const DEFAULT_ENUMERATION_CAP: usize = 24;

/// Weights `w` (row-major, `n_visible x n_hidden`), visible biases `b` and
/// hidden biases `c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct RbmParams {
    n_visible: usize,
    n_hidden: usize,
    w: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
}

#[derive(Deserialize)]
struct RawParams {
    n_visible: usize,
    n_hidden: usize,
    w: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
}

impl TryFrom<RawParams> for RbmParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        RbmParams::new(raw.n_visible, raw.n_hidden, raw.w, raw.b, raw.c)
    }
}

impl RbmParams {
    pub fn new(
        n_visible: usize,
        n_hidden: usize,
        w: Vec<f64>,
        b: Vec<f64>,
        c: Vec<f64>,
    ) -> Result<Self> {
        if n_visible == 0 || n_hidden == 0 {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        check_len("weights", n_visible * n_hidden, w.len())?;
        check_len("visible biases", n_visible, b.len())?;
        check_len("hidden biases", n_hidden, c.len())?;
        if !w.iter().chain(&b).chain(&c).all(|x| x.is_finite()) {
            return Err(Error::invalid("parameters must be finite"));
        }
        Ok(Self {
            n_visible,
            n_hidden,
            w,
            b,
            c,
        })
    }

    pub fn zeros(n_visible: usize, n_hidden: usize) -> Self {
        assert!(n_visible > 0 && n_hidden > 0, "layer sizes must be positive");
        Self {
            n_visible,
            n_hidden,
            w: vec![0.0; n_visible * n_hidden],
            b: vec![0.0; n_visible],
            c: vec![0.0; n_hidden],
        }
    }

    /// Every entry drawn uniformly from `[-scale, scale]`.
    pub fn random_uniform<R: Rng + ?Sized>(
        n_visible: usize,
        n_hidden: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::zeros(n_visible, n_hidden);
        for x in p.w.iter_mut().chain(p.b.iter_mut()).chain(p.c.iter_mut()) {
            *x = rng.gen_range(-scale..=scale);
        }
        p
    }

    pub fn n_visible(&self) -> usize {
        self.n_visible
    }

    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    pub fn total_bits(&self) -> usize {
        self.n_visible + self.n_hidden
    }

    #[inline]
    pub fn w(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.n_hidden + j]
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn visible_bias(&self) -> &[f64] {
        &self.b
    }

    pub fn hidden_bias(&self) -> &[f64] {
        &self.c
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [f64], &mut [f64], &mut [f64]) {
        (&mut self.w, &mut self.b, &mut self.c)
    }

    /// Same model with the roles of the two layers exchanged.
    pub fn transposed(&self) -> Self {
        let (n, m) = (self.n_visible, self.n_hidden);
        let mut w = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                w[j * n + i] = self.w[i * m + j];
            }
        }
        Self {
            n_visible: m,
            n_hidden: n,
            w,
            b: self.c.clone(),
            c: self.b.clone(),
        }
    }

    /// Short content hash, stable across runs and platforms.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.n_visible as u64).to_le_bytes());
        hasher.update((self.n_hidden as u64).to_le_bytes());
        for x in self.w.iter().chain(&self.b).chain(&self.c) {
            hasher.update(x.to_bits().to_le_bytes());
        }
        hex::encode(&hasher.finalize()[..8])
    }

    /// Input field of every hidden unit, `c_j + sum_i w_ij v_i`.
    pub fn hidden_fields(&self, v: &[u8]) -> Vec<f64> {
        let mut out = self.c.clone();
        self.add_hidden_fields(v, &mut out);
        out
    }

    /// Input field of every visible unit, `b_i + sum_j w_ij h_j`.
    pub fn visible_fields(&self, h: &[u8]) -> Vec<f64> {
        let mut out = self.b.clone();
        self.add_visible_fields(h, &mut out);
        out
    }

    #[inline]
    pub(crate) fn add_hidden_fields(&self, v: &[u8], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.n_visible);
        for (row, &vi) in self.w.chunks_exact(self.n_hidden).zip(v) {
            let x = f64::from(vi);
            for (o, &wij) in out.iter_mut().zip(row) {
                *o += wij * x;
            }
        }
    }

    #[inline]
    pub(crate) fn add_visible_fields(&self, h: &[u8], out: &mut [f64]) {
        debug_assert_eq!(h.len(), self.n_hidden);
        for (o, row) in out.iter_mut().zip(self.w.chunks_exact(self.n_hidden)) {
            *o += row.iter().zip(h).map(|(w, &hj)| w * f64::from(hj)).sum::<f64>();
        }
    }
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        });
    }
    Ok(())
}

/// One joint state of the two layers.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Configuration {
    pub v: Vec<u8>,
    pub h: Vec<u8>,
}

impl Configuration {
    pub fn new(v: Vec<u8>, h: Vec<u8>) -> Self {
        debug_assert!(v.iter().chain(&h).all(|&x| x <= 1));
        Self { v, h }
    }

    pub fn zeros(n_visible: usize, n_hidden: usize) -> Self {
        Self {
            v: vec![0; n_visible],
            h: vec![0; n_hidden],
        }
    }

    /// Table index: visible bits little-endian first, then hidden bits.
    pub fn index(&self) -> u64 {
        config_index(&self.v, &self.h)
    }

    pub fn from_index(index: u64, n_visible: usize, n_hidden: usize) -> Self {
        let mut v = vec![0; n_visible];
        let mut h = vec![0; n_hidden];
        decode_index(index, &mut v, &mut h);
        Self { v, h }
    }
}

pub fn config_index(v: &[u8], h: &[u8]) -> u64 {
    assert!(v.len() + h.len() <= 64, "configuration index needs <= 64 bits");
    v.iter()
        .chain(h)
        .enumerate()
        .fold(0u64, |acc, (k, &bit)| acc | (u64::from(bit) << k))
}

pub fn decode_index(index: u64, v: &mut [u8], h: &mut [u8]) {
    let n = v.len();
    for (i, vi) in v.iter_mut().enumerate() {
        *vi = ((index >> i) & 1) as u8;
    }
    for (j, hj) in h.iter_mut().enumerate() {
        *hj = ((index >> (n + j)) & 1) as u8;
    }
}

/// `-sum w_ij v_i h_j - sum b_i v_i - sum c_j h_j`.
///
/// Panics if the configuration does not match the parameter shape.
pub fn energy(params: &RbmParams, cfg: &Configuration) -> f64 {
    assert_eq!(cfg.v.len(), params.n_visible, "visible length mismatch");
    assert_eq!(cfg.h.len(), params.n_hidden, "hidden length mismatch");
    energy_bits(params, &cfg.v, &cfg.h)
}

#[inline]
pub(crate) fn energy_bits(params: &RbmParams, v: &[u8], h: &[u8]) -> f64 {
    let t = TermEnergies::of(params, v, h);
    t.total()
}

/// The energy split into its coupling, visible-bias and hidden-bias parts.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TermEnergies {
    pub vh: f64,
    pub v: f64,
    pub h: f64,
}

impl TermEnergies {
    #[inline]
    pub fn of(params: &RbmParams, v: &[u8], h: &[u8]) -> Self {
        let m = params.n_hidden;
        let mut vh = 0.0;
        let mut ev = 0.0;
        for (i, &vi) in v.iter().enumerate() {
            if vi != 0 {
                ev += params.b[i];
                let row = &params.w[i * m..(i + 1) * m];
                for (wij, &hj) in row.iter().zip(h) {
                    if hj != 0 {
                        vh += wij;
                    }
                }
            }
        }
        let eh: f64 = params
            .c
            .iter()
            .zip(h)
            .filter(|(_, &hj)| hj != 0)
            .map(|(c, _)| c)
            .sum();
        Self {
            vh: -vh,
            v: -ev,
            h: -eh,
        }
    }

    pub fn total(&self) -> f64 {
        self.vh + self.v + self.h
    }
}

/// Per-term multipliers with the same shape as [`RbmParams`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub n_visible: usize,
    pub n_hidden: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl Multipliers {
    pub fn uniform(n_visible: usize, n_hidden: usize, value: f64) -> Self {
        Self {
            n_visible,
            n_hidden,
            w: vec![value; n_visible * n_hidden],
            b: vec![value; n_visible],
            c: vec![value; n_hidden],
        }
    }

    pub fn ones(n_visible: usize, n_hidden: usize) -> Self {
        Self::uniform(n_visible, n_hidden, 1.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.w.iter().chain(&self.b).chain(&self.c)
    }

    pub(crate) fn check_shape(&self, params: &RbmParams) -> Result<()> {
        check_len("multiplier rows", params.n_visible, self.n_visible)?;
        check_len("multiplier columns", params.n_hidden, self.n_hidden)?;
        check_len("weight multipliers", self.n_visible * self.n_hidden, self.w.len())?;
        check_len("visible multipliers", self.n_visible, self.b.len())?;
        check_len("hidden multipliers", self.n_hidden, self.c.len())
    }
}

fn map_params(
    params: &RbmParams,
    mult: &Multipliers,
    f: impl Fn(f64, f64) -> f64,
) -> Result<RbmParams> {
    mult.check_shape(params)?;
    let zip = |p: &[f64], m: &[f64]| p.iter().zip(m).map(|(&p, &m)| f(p, m)).collect();
    RbmParams::new(
        params.n_visible,
        params.n_hidden,
        zip(&params.w, &mult.w),
        zip(&params.b, &mult.b),
        zip(&params.c, &mult.c),
    )
}

/// Elementwise product of every parameter with its multiplier.
pub fn scaled_params(params: &RbmParams, mult: &Multipliers) -> Result<RbmParams> {
    map_params(params, mult, |p, m| p * m)
}

/// Elementwise quotient; the inverse of [`scaled_params`].
pub fn divided_params(params: &RbmParams, mult: &Multipliers) -> Result<RbmParams> {
    if !mult.iter().all(|&m| m > 0.0 && m.is_finite()) {
        return Err(Error::invalid("multipliers must be strictly positive"));
    }
    map_params(params, mult, |p, m| p / m)
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// `P(h_j = 1 | v)` for every hidden unit.
pub fn conditional_hidden(params: &RbmParams, v: &[u8]) -> Vec<f64> {
    assert_eq!(v.len(), params.n_visible, "visible length mismatch");
    let mut a = params.hidden_fields(v);
    a.iter_mut().for_each(|x| *x = logistic(*x));
    a
}

/// `P(v_i = 1 | h)` for every visible unit.
pub fn conditional_visible(params: &RbmParams, h: &[u8]) -> Vec<f64> {
    assert_eq!(h.len(), params.n_hidden, "hidden length mismatch");
    let mut a = params.visible_fields(h);
    a.iter_mut().for_each(|x| *x = logistic(*x));
    a
}

fn check_cap(bits: usize, cap: usize) -> Result<()> {
    if bits > cap {
        return Err(Error::EnumerationCap { bits, cap });
    }
    Ok(())
}

/// Enumerated joint distribution over all `2^(n_visible + n_hidden)` states.
#[derive(Clone, Debug)]
pub struct ExactDistribution {
    params_digest: String,
    n_visible: usize,
    n_hidden: usize,
    probabilities: Vec<f64>,
    log_probabilities: Vec<f64>,
    log_z: f64,
}

impl ExactDistribution {
    /// Builds a distribution from an explicit table; used for synthetic oracles.
    pub fn from_probabilities(
        n_visible: usize,
        n_hidden: usize,
        probabilities: Vec<f64>,
    ) -> Result<Self> {
        check_len("probability table", 1usize << (n_visible + n_hidden), probabilities.len())?;
        if probabilities.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::invalid("probabilities must be finite and non-negative"));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("probabilities sum to {total}, not 1")));
        }
        let log_probabilities = probabilities.iter().map(|p| p.ln()).collect();
        Ok(Self {
            params_digest: "explicit".to_string(),
            n_visible,
            n_hidden,
            probabilities,
            log_probabilities,
            log_z: 0.0,
        })
    }

    pub fn params_digest(&self) -> &str {
        &self.params_digest
    }

    pub fn n_visible(&self) -> usize {
        self.n_visible
    }

    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    /// Always finite for distributions built from parameters, even where the
    /// probability itself underflows.
    pub fn log_probabilities(&self) -> &[f64] {
        &self.log_probabilities
    }

    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    /// Half the L1 distance to another table of the same shape.
    pub fn total_variation(&self, other: &[f64]) -> f64 {
        assert_eq!(other.len(), self.probabilities.len());
        0.5 * self
            .probabilities
            .iter()
            .zip(other)
            .map(|(p, q)| (p - q).abs())
            .sum::<f64>()
    }
}

pub fn exact_distribution(params: &RbmParams) -> Result<ExactDistribution> {
    exact_distribution_with_cap(params, DEFAULT_ENUMERATION_CAP)
}

pub fn exact_distribution_with_cap(params: &RbmParams, cap: usize) -> Result<ExactDistribution> {
    check_cap(params.total_bits(), cap)?;
    let (n, m) = (params.n_visible, params.n_hidden);
    let block = 1usize << n;
    let mut logits = vec![0.0; block << m];
    let mut h = vec![0u8; m];
    for (hb, chunk) in logits.chunks_exact_mut(block).enumerate() {
        for (j, hj) in h.iter_mut().enumerate() {
            *hj = ((hb >> j) & 1) as u8;
        }
        let a = params.visible_fields(&h);
        let ch: f64 = params
            .c
            .iter()
            .zip(&h)
            .filter(|(_, &hj)| hj != 0)
            .map(|(c, _)| c)
            .sum();
        chunk[0] = ch;
        for vb in 1..block {
            chunk[vb] = chunk[vb & (vb - 1)] + a[vb.trailing_zeros() as usize];
        }
    }
    let log_z = log_sum_exp(&logits);
    let mut probabilities: Vec<f64> = logits.iter().map(|&x| (x - log_z).exp()).collect();
    // fold the residual rounding of the exponentials back into Z
    let total: f64 = probabilities.iter().sum();
    probabilities.iter_mut().for_each(|p| *p /= total);
    let log_z = log_z + total.ln();
    let log_probabilities = logits.iter().map(|&x| x - log_z).collect();
    Ok(ExactDistribution {
        params_digest: params.digest(),
        n_visible: n,
        n_hidden: m,
        probabilities,
        log_probabilities,
        log_z,
    })
}

/// Unnormalized visible log-weight: `b.v + sum_j softplus(c_j + sum_i w_ij v_i)`.
pub fn visible_log_weight(params: &RbmParams, v: &[u8]) -> f64 {
    let bv: f64 = params
        .b
        .iter()
        .zip(v)
        .filter(|(_, &vi)| vi != 0)
        .map(|(b, _)| b)
        .sum();
    bv + params
        .hidden_fields(v)
        .into_iter()
        .map(softplus)
        .sum::<f64>()
}

/// `log Z`, enumerating only the smaller layer. The cap applies to the
/// number of enumerated bits.
pub fn log_partition(params: &RbmParams) -> Result<f64> {
    log_partition_with_cap(params, DEFAULT_ENUMERATION_CAP)
}

pub fn log_partition_with_cap(params: &RbmParams, cap: usize) -> Result<f64> {
    if params.n_hidden < params.n_visible {
        return log_partition_with_cap(&params.transposed(), cap);
    }
    check_cap(params.n_visible, cap)?;
    let n = params.n_visible;
    let mut v = vec![0u8; n];
    let weights: Vec<f64> = (0..1u64 << n)
        .map(|vb| {
            for (i, vi) in v.iter_mut().enumerate() {
                *vi = ((vb >> i) & 1) as u8;
            }
            visible_log_weight(params, &v)
        })
        .collect();
    Ok(log_sum_exp(&weights))
}

/// `log P(v)`; computes `log Z` when it is not supplied.
pub fn marginal_visible_log_prob(params: &RbmParams, v: &[u8], log_z: Option<f64>) -> Result<f64> {
    check_len("visible vector", params.n_visible, v.len())?;
    let log_z = match log_z {
        Some(z) => z,
        None => log_partition(params)?,
    };
    Ok(visible_log_weight(params, v) - log_z)
}

/// Exact first and second moments under the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    /// `<v_i h_j>`, row-major.
    pub vh: Vec<f64>,
    pub v: Vec<f64>,
    pub h: Vec<f64>,
}

pub fn model_expectations(params: &RbmParams) -> Result<Moments> {
    model_expectations_with_cap(params, DEFAULT_ENUMERATION_CAP)
}

pub fn model_expectations_with_cap(params: &RbmParams, cap: usize) -> Result<Moments> {
    check_cap(params.total_bits(), cap)?;
    if params.n_hidden < params.n_visible {
        let t = model_expectations_with_cap(&params.transposed(), cap)?;
        let (n, m) = (params.n_visible, params.n_hidden);
        let mut vh = vec![0.0; n * m];
        for j in 0..m {
            for i in 0..n {
                vh[i * m + j] = t.vh[j * n + i];
            }
        }
        return Ok(Moments { vh, v: t.h, h: t.v });
    }
    let (n, m) = (params.n_visible, params.n_hidden);
    let mut v = vec![0u8; n];
    let states: Vec<(u64, f64)> = (0..1u64 << n)
        .map(|vb| {
            for (i, vi) in v.iter_mut().enumerate() {
                *vi = ((vb >> i) & 1) as u8;
            }
            (vb, visible_log_weight(params, &v))
        })
        .collect();
    let log_z = log_sum_exp(&states.iter().map(|s| s.1).collect::<Vec<_>>());
    let mut out = Moments {
        vh: vec![0.0; n * m],
        v: vec![0.0; n],
        h: vec![0.0; m],
    };
    for (vb, lw) in states {
        let p = (lw - log_z).exp();
        for (i, vi) in v.iter_mut().enumerate() {
            *vi = ((vb >> i) & 1) as u8;
        }
        let ph = conditional_hidden(params, &v);
        for (hj, &q) in out.h.iter_mut().zip(&ph) {
            *hj += p * q;
        }
        for i in (0..n).filter(|&i| v[i] != 0) {
            out.v[i] += p;
            for (j, &q) in ph.iter().enumerate() {
                out.vh[i * m + j] += p * q;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit(n: usize, m: usize) -> RbmParams {
        RbmParams::new(n, m, vec![1.0; n * m], vec![1.0; n], vec![1.0; m]).unwrap()
    }

    // Independent double loop written directly from the energy definition.
    fn naive_energy(p: &RbmParams, v: &[u8], h: &[u8]) -> f64 {
        let mut e = 0.0;
        for i in 0..p.n_visible() {
            for j in 0..p.n_hidden() {
                e -= p.w(i, j) * f64::from(v[i]) * f64::from(h[j]);
            }
        }
        for i in 0..p.n_visible() {
            e -= p.visible_bias()[i] * f64::from(v[i]);
        }
        for j in 0..p.n_hidden() {
            e -= p.hidden_bias()[j] * f64::from(h[j]);
        }
        e
    }

    #[test]
    fn energy_of_zero_state_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = RbmParams::random_uniform(4, 3, 2.0, &mut rng);
        assert_eq!(energy(&p, &Configuration::zeros(4, 3)), 0.0);
    }

    #[test]
    fn energy_single_unit_arithmetic() {
        let p = RbmParams::new(1, 1, vec![2.0], vec![-1.0], vec![3.0]).unwrap();
        let cfg = Configuration::new(vec![1], vec![1]);
        assert_eq!(energy(&p, &cfg), -4.0);
    }

    #[test]
    fn energy_matches_double_loop_on_all_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = RbmParams::random_uniform(3, 2, 2.0, &mut rng);
        for idx in 0..32 {
            let cfg = Configuration::from_index(idx, 3, 2);
            let e = energy(&p, &cfg);
            assert!((e - naive_energy(&p, &cfg.v, &cfg.h)).abs() < 1e-12);
        }
    }

    #[test]
    #[should_panic]
    fn energy_rejects_mismatched_configuration() {
        energy(&RbmParams::zeros(3, 2), &Configuration::zeros(2, 2));
    }

    #[test]
    fn index_layout_is_visible_first_little_endian() {
        let cfg = Configuration::new(vec![1, 0, 1], vec![0, 1]);
        assert_eq!(cfg.index(), 0b10_101);
        assert_eq!(Configuration::from_index(0b10_101, 3, 2), cfg);
    }

    #[test]
    fn scaling_identity_and_paper_multipliers() {
        let p = unit(3, 2);
        assert_eq!(scaled_params(&p, &Multipliers::ones(3, 2)).unwrap(), p);

        let mult = Multipliers {
            n_visible: 3,
            n_hidden: 2,
            w: vec![6.8; 6],
            b: vec![7.0; 3],
            c: vec![4.5; 2],
        };
        let s = scaled_params(&p, &mult).unwrap();
        assert!(s.weights().iter().all(|&x| x == 6.8));
        assert!(s.visible_bias().iter().all(|&x| x == 7.0));
        assert!(s.hidden_bias().iter().all(|&x| x == 4.5));
    }

    #[test]
    fn uniform_scaling_doubles_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = RbmParams::random_uniform(3, 2, 2.0, &mut rng);
        let s = scaled_params(&p, &Multipliers::uniform(3, 2, 2.0)).unwrap();
        for idx in 0..32 {
            let cfg = Configuration::from_index(idx, 3, 2);
            assert!((energy(&s, &cfg) - 2.0 * energy(&p, &cfg)).abs() < 1e-12);
        }
    }

    #[test]
    fn scaling_rejects_wrong_shape() {
        let err = scaled_params(&unit(3, 2), &Multipliers::ones(2, 2)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn conditionals_of_zero_model_are_fair() {
        let p = RbmParams::zeros(3, 2);
        assert_eq!(conditional_hidden(&p, &[1, 0, 1]), vec![0.5, 0.5]);
        assert_eq!(conditional_visible(&p, &[1, 1]), vec![0.5; 3]);
    }

    #[test]
    fn conditionals_saturate() {
        let p = RbmParams::new(2, 2, vec![0.0; 4], vec![50.0; 2], vec![50.0; 2]).unwrap();
        assert!(conditional_hidden(&p, &[0, 0]).iter().all(|&x| (1.0 - x) < 1e-10));
        assert!(conditional_visible(&p, &[0, 0]).iter().all(|&x| (1.0 - x) < 1e-10));
    }

    #[test]
    fn logistic_and_softplus_are_stable() {
        assert_eq!(logistic(-1000.0), 0.0);
        assert_eq!(logistic(1000.0), 1.0);
        assert!((softplus(1000.0) - 1000.0).abs() < 1e-12);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn zero_model_distribution_is_uniform() {
        let d = exact_distribution(&RbmParams::zeros(3, 2)).unwrap();
        assert!(d.probabilities().iter().all(|&p| (p - 1.0 / 32.0).abs() < 1e-15));
        assert!((d.log_z() - 5.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn exact_distribution_refuses_above_cap() {
        let err = exact_distribution(&RbmParams::zeros(20, 5)).unwrap_err();
        assert!(err.to_string().contains("24"), "{err}");
        assert!(exact_distribution_with_cap(&RbmParams::zeros(3, 2), 4).is_err());
    }

    #[test]
    fn exact_distribution_matches_naive_exponentials() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = RbmParams::random_uniform(3, 2, 1.0, &mut rng);
        let d = exact_distribution(&p).unwrap();
        let weights: Vec<f64> = (0..32)
            .map(|idx| {
                let c = Configuration::from_index(idx, 3, 2);
                (-naive_energy(&p, &c.v, &c.h)).exp()
            })
            .collect();
        let z: f64 = weights.iter().sum();
        for (a, w) in d.probabilities().iter().zip(&weights) {
            assert!((a - w / z).abs() < 1e-10);
        }
        assert!((d.log_z() - z.ln()).abs() < 1e-10);
    }

    #[test]
    fn log_partition_matches_table() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for (n, m) in [(3, 2), (2, 4), (4, 3)] {
            let p = RbmParams::random_uniform(n, m, 2.0, &mut rng);
            let d = exact_distribution(&p).unwrap();
            assert!((log_partition(&p).unwrap() - d.log_z()).abs() < 1e-10);
        }
    }

    #[test]
    fn marginal_of_zero_model() {
        let p = RbmParams::zeros(4, 2);
        let lp = marginal_visible_log_prob(&p, &[1, 0, 0, 1], None).unwrap();
        assert!((lp + 4.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn marginal_rejects_wrong_length() {
        assert!(marginal_visible_log_prob(&RbmParams::zeros(4, 2), &[1, 0], None).is_err());
    }

    #[test]
    fn zero_model_expectations() {
        let e = model_expectations(&RbmParams::zeros(3, 4)).unwrap();
        assert!(e.vh.iter().all(|&x| (x - 0.25).abs() < 1e-14));
        assert!(e.v.iter().chain(&e.h).all(|&x| (x - 0.5).abs() < 1e-14));
    }

    #[test]
    fn transposed_twice_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = RbmParams::random_uniform(3, 5, 1.0, &mut rng);
        assert_eq!(p.transposed().transposed(), p);
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = RbmParams::random_uniform(4, 3, 3.0, &mut rng);
        let text = serde_json::to_string(&p).unwrap();
        let back: RbmParams = serde_json::from_str(&text).unwrap();
        assert_eq!(back, p);
        assert!(text.starts_with(r#"{"n_visible":4,"n_hidden":3,"w":["#));
    }

    #[test]
    fn json_rejects_inconsistent_shapes() {
        let bad = r#"{"n_visible":2,"n_hidden":2,"w":[1,2,3],"b":[0,0],"c":[0,0]}"#;
        assert!(serde_json::from_str::<RbmParams>(bad).is_err());
    }
}

//! Samplers: block Gibbs chains, CD-k, exact table sampling and the
//! simulated noisy annealer.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, WeightedAliasIndex};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rbm::{
    config_index, decode_index, exact_distribution, scaled_params, Configuration,
    ExactDistribution, Multipliers, RbmParams,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    Gibbs,
    Cd,
    Exact,
    NoisyAnnealer,
}

impl fmt::Display for SourceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceTag::Gibbs => "gibbs",
            SourceTag::Cd => "cd",
            SourceTag::Exact => "exact",
            SourceTag::NoisyAnnealer => "noisy_annealer",
        })
    }
}

impl FromStr for SourceTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "gibbs" => SourceTag::Gibbs,
            "cd" => SourceTag::Cd,
            "exact" => SourceTag::Exact,
            "noisy_annealer" => SourceTag::NoisyAnnealer,
            other => return Err(Error::invalid(format!("unknown source tag {other:?}"))),
        })
    }
}

/// A multiset of joint configurations, stored as flat rows of bits
/// (visible bits then hidden bits).
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    n_visible: usize,
    n_hidden: usize,
    bits: Vec<u8>,
    source: SourceTag,
}

impl SampleSet {
    pub fn new(n_visible: usize, n_hidden: usize, source: SourceTag) -> Self {
        Self {
            n_visible,
            n_hidden,
            bits: Vec::new(),
            source,
        }
    }

    pub fn with_capacity(n_visible: usize, n_hidden: usize, source: SourceTag, rows: usize) -> Self {
        Self {
            bits: Vec::with_capacity(rows * (n_visible + n_hidden)),
            ..Self::new(n_visible, n_hidden, source)
        }
    }

    pub fn n_visible(&self) -> usize {
        self.n_visible
    }

    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    pub fn source(&self) -> SourceTag {
        self.source
    }

    pub fn set_source(&mut self, source: SourceTag) {
        self.source = source;
    }

    fn width(&self) -> usize {
        self.n_visible + self.n_hidden
    }

    pub fn total_count(&self) -> usize {
        self.bits.len() / self.width()
    }

    pub fn len(&self) -> usize {
        self.total_count()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn push(&mut self, v: &[u8], h: &[u8]) {
        assert_eq!(v.len(), self.n_visible, "visible length mismatch");
        assert_eq!(h.len(), self.n_hidden, "hidden length mismatch");
        self.bits.extend_from_slice(v);
        self.bits.extend_from_slice(h);
    }

    pub fn push_config(&mut self, cfg: &Configuration) {
        self.push(&cfg.v, &cfg.h);
    }

    /// `(v, h)` of row `k`.
    pub fn row(&self, k: usize) -> (&[u8], &[u8]) {
        let w = self.width();
        self.bits[k * w..(k + 1) * w].split_at(self.n_visible)
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[u8], &[u8])> + '_ {
        self.bits
            .chunks_exact(self.width())
            .map(move |r| r.split_at(self.n_visible))
    }

    pub(crate) fn rows_mut(&mut self) -> impl Iterator<Item = (&mut [u8], &mut [u8])> + '_ {
        let n = self.n_visible;
        let w = self.width();
        self.bits.chunks_exact_mut(w).map(move |r| r.split_at_mut(n))
    }

    pub fn indices(&self) -> impl Iterator<Item = u64> + '_ {
        self.rows().map(|(v, h)| config_index(v, h))
    }

    /// Concatenates `other` after `self`.
    pub fn extend(&mut self, other: &SampleSet) -> Result<()> {
        if other.n_visible != self.n_visible || other.n_hidden != self.n_hidden {
            return Err(Error::DimensionMismatch {
                what: "sample set width",
                expected: self.width(),
                found: other.width(),
            });
        }
        self.bits.extend_from_slice(&other.bits);
        Ok(())
    }

    /// Writes the text format: a `#` header line followed by one
    /// `"<visible bits> <hidden bits>"` line per sample.
    pub fn write_to<W: Write>(&self, mut out: W, seed: u64) -> Result<()> {
        writeln!(
            out,
            "# n_visible={} n_hidden={} source_tag={} seed={}",
            self.n_visible, self.n_hidden, self.source, seed
        )?;
        let mut line = Vec::with_capacity(self.width() + 2);
        for (v, h) in self.rows() {
            line.clear();
            line.extend(v.iter().map(|&b| b'0' + b));
            line.push(b' ');
            line.extend(h.iter().map(|&b| b'0' + b));
            line.push(b'\n');
            out.write_all(&line)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path, seed: u64) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(f, seed)
    }

    /// Parses the text format; returns the set and the seed from its header.
    pub fn read_from<R: BufRead>(input: R, path: &Path) -> Result<(Self, u64)> {
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing header".into()))??;
        let fields = header
            .strip_prefix('#')
            .ok_or_else(|| parse_err(1, "header must start with '#'".into()))?;
        let (mut n, mut m, mut tag, mut seed) = (None, None, None, None);
        for kv in fields.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| parse_err(1, format!("bad header field {kv:?}")))?;
            let num = || v.parse::<u64>().map_err(|e| parse_err(1, format!("{k}: {e}")));
            match k {
                "n_visible" => n = Some(num()? as usize),
                "n_hidden" => m = Some(num()? as usize),
                "seed" => seed = Some(num()?),
                "source_tag" => tag = Some(v.parse::<SourceTag>().map_err(|e| parse_err(1, e.to_string()))?),
                _ => {}
            }
        }
        let (n, m, tag) = match (n, m, tag) {
            (Some(n), Some(m), Some(t)) if n > 0 && m > 0 => (n, m, t),
            _ => return Err(parse_err(1, "header needs n_visible, n_hidden, source_tag".into())),
        };
        let mut set = SampleSet::new(n, m, tag);
        for (k, line) in lines.enumerate() {
            let lineno = k + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (vs, hs) = line
                .trim()
                .split_once(' ')
                .ok_or_else(|| parse_err(lineno, "expected '<visible> <hidden>'".into()))?;
            let v = parse_bits(vs).map_err(|m| parse_err(lineno, m))?;
            let h = parse_bits(hs).map_err(|m| parse_err(lineno, m))?;
            if v.len() != n || h.len() != m {
                return Err(parse_err(
                    lineno,
                    format!("expected {n}+{m} bits, found {}+{}", v.len(), h.len()),
                ));
            }
            set.push(&v, &h);
        }
        Ok((set, seed.unwrap_or(0)))
    }

    pub fn load(path: &Path) -> Result<(Self, u64)> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(f, path)
    }
}

pub(crate) fn parse_bits(s: &str) -> std::result::Result<Vec<u8>, String> {
    s.bytes()
        .map(|c| match c {
            b'0' => Ok(0),
            b'1' => Ok(1),
            other => Err(format!("non-binary character {:?}", other as char)),
        })
        .collect()
}

/// Draws a unit with `P(on) = logistic(field)`. Compares
/// `u * (1 + exp(-field)) < 1`, which is exact at both extremes and keeps
/// the inner loops free of branches.
#[inline]
fn bernoulli_logit<R: Rng + ?Sized>(field: f64, rng: &mut R) -> u8 {
    u8::from(rng.gen::<f64>() * (1.0 + (-field).exp()) < 1.0)
}

/// Resamples `h` from `P(h | v)`. `scratch` has length `n_hidden`.
#[inline]
pub(crate) fn sample_hidden<R: Rng + ?Sized>(
    params: &RbmParams,
    v: &[u8],
    h: &mut [u8],
    scratch: &mut [f64],
    rng: &mut R,
) {
    scratch.copy_from_slice(params.hidden_bias());
    params.add_hidden_fields(v, scratch);
    for (hj, &a) in h.iter_mut().zip(scratch.iter()) {
        *hj = bernoulli_logit(a, rng);
    }
}

/// Resamples `v` from `P(v | h)`. `scratch` has length `n_visible`.
#[inline]
pub(crate) fn sample_visible<R: Rng + ?Sized>(
    params: &RbmParams,
    h: &[u8],
    v: &mut [u8],
    scratch: &mut [f64],
    rng: &mut R,
) {
    scratch.copy_from_slice(params.visible_bias());
    params.add_visible_fields(h, scratch);
    for (vi, &a) in v.iter_mut().zip(scratch.iter()) {
        *vi = bernoulli_logit(a, rng);
    }
}

/// One block update: `h ~ P(h|v)`, then `v ~ P(v|h)`.
pub fn block_gibbs_step<R: Rng + ?Sized>(
    params: &RbmParams,
    cfg: &Configuration,
    rng: &mut R,
) -> Configuration {
    assert_eq!(cfg.v.len(), params.n_visible());
    assert_eq!(cfg.h.len(), params.n_hidden());
    let mut next = cfg.clone();
    let mut sh = vec![0.0; params.n_hidden()];
    let mut sv = vec![0.0; params.n_visible()];
    sample_hidden(params, &cfg.v, &mut next.h, &mut sh, rng);
    sample_visible(params, &next.h, &mut next.v, &mut sv, rng);
    next
}

/// Chain schedule for [`gibbs_sample`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GibbsSchedule {
    pub burn_in: usize,
    pub thinning: usize,
    pub chains: usize,
}

impl Default for GibbsSchedule {
    fn default() -> Self {
        Self {
            burn_in: 1000,
            thinning: 10,
            chains: 4,
        }
    }
}

/// Pools `n_samples` draws from `schedule.chains` independent chains.
///
/// Chain `k` runs on stream `k` of a generator seeded once from `rng`, so
/// the result does not depend on how chains are scheduled onto threads.
pub fn gibbs_sample<R: Rng + ?Sized>(
    params: &RbmParams,
    n_samples: usize,
    schedule: &GibbsSchedule,
    rng: &mut R,
) -> Result<SampleSet> {
    if n_samples == 0 || schedule.thinning == 0 || schedule.chains == 0 {
        return Err(Error::invalid("n_samples, thinning and chains must be positive"));
    }
    let chain_seed: u64 = rng.gen();
    let chains = schedule.chains.min(n_samples);
    let (n, m) = (params.n_visible(), params.n_hidden());
    let parts: Vec<SampleSet> = (0..chains)
        .into_par_iter()
        .map(|k| {
            let quota = n_samples / chains + usize::from(k < n_samples % chains);
            let mut crng = ChaCha8Rng::seed_from_u64(chain_seed);
            crng.set_stream(k as u64);
            let mut v: Vec<u8> = (0..n).map(|_| crng.gen_range(0..=1)).collect();
            let mut h = vec![0u8; m];
            let mut sh = vec![0.0; m];
            let mut sv = vec![0.0; n];
            let mut step = |v: &mut [u8], h: &mut [u8], crng: &mut ChaCha8Rng| {
                sample_hidden(params, v, h, &mut sh, crng);
                sample_visible(params, h, v, &mut sv, crng);
            };
            for _ in 0..schedule.burn_in {
                step(&mut v, &mut h, &mut crng);
            }
            let mut out = SampleSet::with_capacity(n, m, SourceTag::Gibbs, quota);
            for _ in 0..quota {
                for _ in 0..schedule.thinning {
                    step(&mut v, &mut h, &mut crng);
                }
                out.push(&v, &h);
            }
            out
        })
        .collect();
    let mut all = SampleSet::with_capacity(n, m, SourceTag::Gibbs, n_samples);
    for p in &parts {
        all.extend(p)?;
    }
    Ok(all)
}

/// CD-k negative phase: each data row is lifted to `(v, h ~ P(h|v))` and
/// then alternated `k` times.
pub fn cd_negative_phase<R: Rng + ?Sized>(
    params: &RbmParams,
    data: &[Vec<u8>],
    k: usize,
    rng: &mut R,
) -> Result<SampleSet> {
    if k == 0 {
        return Err(Error::invalid("CD needs k >= 1"));
    }
    let (n, m) = (params.n_visible(), params.n_hidden());
    let mut out = SampleSet::with_capacity(n, m, SourceTag::Cd, data.len());
    let mut v = vec![0u8; n];
    let mut h = vec![0u8; m];
    let mut sh = vec![0.0; m];
    let mut sv = vec![0.0; n];
    for row in data {
        if row.len() != n {
            return Err(Error::DimensionMismatch {
                what: "data row",
                expected: n,
                found: row.len(),
            });
        }
        v.copy_from_slice(row);
        sample_hidden(params, &v, &mut h, &mut sh, rng);
        for _ in 0..k {
            sample_visible(params, &h, &mut v, &mut sv, rng);
            sample_hidden(params, &v, &mut h, &mut sh, rng);
        }
        out.push(&v, &h);
    }
    Ok(out)
}

/// I.i.d. draws from an enumerated table (alias method).
pub fn exact_sample<R: Rng + ?Sized>(
    dist: &ExactDistribution,
    n_samples: usize,
    rng: &mut R,
) -> Result<SampleSet> {
    let (n, m) = (dist.n_visible(), dist.n_hidden());
    let alias = WeightedAliasIndex::new(dist.probabilities().to_vec())
        .map_err(|e| Error::invalid(format!("cannot sample table: {e}")))?;
    let mut out = SampleSet::with_capacity(n, m, SourceTag::Exact, n_samples);
    let mut v = vec![0u8; n];
    let mut h = vec![0u8; m];
    for _ in 0..n_samples {
        decode_index(alias.sample(rng) as u64, &mut v, &mut h);
        out.push(&v, &h);
    }
    Ok(out)
}

/// Ground-truth per-term distortion applied by the simulated annealer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    multipliers: Multipliers,
}

impl NoiseModel {
    pub fn new(multipliers: Multipliers) -> Result<Self> {
        if !multipliers.iter().all(|&x| x > 0.0 && x.is_finite()) {
            return Err(Error::invalid("noise multipliers must be positive and finite"));
        }
        if multipliers.w.len() != multipliers.n_visible * multipliers.n_hidden
            || multipliers.b.len() != multipliers.n_visible
            || multipliers.c.len() != multipliers.n_hidden
        {
            return Err(Error::invalid("noise multipliers have inconsistent shape"));
        }
        Ok(Self { multipliers })
    }

    pub fn identity(n_visible: usize, n_hidden: usize) -> Self {
        Self {
            multipliers: Multipliers::ones(n_visible, n_hidden),
        }
    }

    pub fn uniform(n_visible: usize, n_hidden: usize, beta: f64) -> Result<Self> {
        Self::new(Multipliers::uniform(n_visible, n_hidden, beta))
    }

    /// Block-constant multipliers for weights, visible and hidden biases.
    pub fn blocks(n_visible: usize, n_hidden: usize, w: f64, b: f64, c: f64) -> Result<Self> {
        Self::new(Multipliers {
            n_visible,
            n_hidden,
            w: vec![w; n_visible * n_hidden],
            b: vec![b; n_visible],
            c: vec![c; n_hidden],
        })
    }

    pub fn multipliers(&self) -> &Multipliers {
        &self.multipliers
    }

    pub fn beta_err_w(&self) -> &[f64] {
        &self.multipliers.w
    }

    pub fn beta_err_b(&self) -> &[f64] {
        &self.multipliers.b
    }

    pub fn beta_err_c(&self) -> &[f64] {
        &self.multipliers.c
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightNoiseMode {
    Constant,
    Gaussian,
}

/// Recipe for drawing a [`NoiseModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub w_mode: WeightNoiseMode,
    pub w_mean: f64,
    pub w_sigma: f64,
    pub b_mean: f64,
    pub b_sigma: f64,
    pub c_mean: f64,
    pub c_sigma: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            w_mode: WeightNoiseMode::Constant,
            w_mean: 6.8,
            w_sigma: 0.0,
            b_mean: 7.0,
            b_sigma: 0.0,
            c_mean: 4.5,
            c_sigma: 0.0,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    /// Same sigma on every gaussian block.
    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.w_sigma = sigma;
        self.b_sigma = sigma;
        self.c_sigma = sigma;
        self
    }
}

/// Draws a noise model. Each block uses its own stream of the seed, so
/// switching the weight block between modes leaves the bias draws alone.
/// Non-positive gaussian draws are redrawn.
pub fn make_noise_model(spec: &NoiseSpec, n_visible: usize, n_hidden: usize) -> Result<NoiseModel> {
    let blocks = [
        ("w", spec.w_mean, spec.w_sigma),
        ("b", spec.b_mean, spec.b_sigma),
        ("c", spec.c_mean, spec.c_sigma),
    ];
    for (name, mean, sigma) in blocks {
        if !(mean > 0.0 && mean.is_finite()) {
            return Err(Error::invalid(format!("{name}_mean must be positive, got {mean}")));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("{name}_sigma must be >= 0, got {sigma}")));
        }
    }
    let draw = |stream: u64, len: usize, mean: f64, sigma: f64| -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(stream);
        let normal = Normal::new(mean, sigma).expect("validated above");
        (0..len)
            .map(|_| loop {
                let x = normal.sample(&mut rng);
                if x > 0.0 {
                    break x;
                }
            })
            .collect()
    };
    let w = match spec.w_mode {
        WeightNoiseMode::Constant => vec![spec.w_mean; n_visible * n_hidden],
        WeightNoiseMode::Gaussian => draw(0, n_visible * n_hidden, spec.w_mean, spec.w_sigma),
    };
    NoiseModel::new(Multipliers {
        n_visible,
        n_hidden,
        w,
        b: draw(1, n_visible, spec.b_mean, spec.b_sigma),
        c: draw(2, n_hidden, spec.c_mean, spec.c_sigma),
    })
}

/// How the simulated annealer realizes its (distorted) Boltzmann distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fidelity {
    Exact,
    Gibbs(GibbsSchedule),
}

/// Samples from the Boltzmann distribution of the noise-scaled parameters.
pub fn noisy_annealer_sample<R: Rng + ?Sized>(
    params: &RbmParams,
    noise: &NoiseModel,
    n_samples: usize,
    rng: &mut R,
    fidelity: Fidelity,
) -> Result<SampleSet> {
    let distorted = scaled_params(params, noise.multipliers())?;
    let mut set = match fidelity {
        Fidelity::Exact => exact_sample(&exact_distribution(&distorted)?, n_samples, rng)?,
        Fidelity::Gibbs(schedule) => gibbs_sample(&distorted, n_samples, &schedule, rng)?,
    };
    set.set_source(SourceTag::NoisyAnnealer);
    Ok(set)
}

/// Splits the sample budget evenly over several noise realizations, the
/// desk analogue of pooling runs from several embeddings of one model.
pub fn noisy_annealer_sample_pooled<R: Rng + ?Sized>(
    params: &RbmParams,
    noises: &[NoiseModel],
    n_samples: usize,
    rng: &mut R,
    fidelity: Fidelity,
) -> Result<SampleSet> {
    if noises.is_empty() {
        return Err(Error::invalid("no noise models to pool"));
    }
    let mut all = SampleSet::with_capacity(
        params.n_visible(),
        params.n_hidden(),
        SourceTag::NoisyAnnealer,
        n_samples,
    );
    for (k, noise) in noises.iter().enumerate() {
        let quota = n_samples / noises.len() + usize::from(k < n_samples % noises.len());
        if quota > 0 {
            all.extend(&noisy_annealer_sample(params, noise, quota, rng, fidelity)?)?;
        }
    }
    Ok(all)
}

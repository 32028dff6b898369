//! Figures of merit: KL divergences and per-term energy histograms.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rbm::{config_index, log_partition, visible_log_weight, ExactDistribution, RbmParams, TermEnergies};
use crate::sampling::SampleSet;

/// Counts over configuration indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EmpiricalDistribution {
    n_bits: usize,
    counts: BTreeMap<u64, u64>,
    total: u64,
}

impl EmpiricalDistribution {
    pub fn from_indices(n_bits: usize, indices: impl IntoIterator<Item = u64>) -> Result<Self> {
        let mut sorted: Vec<u64> = indices.into_iter().collect();
        sorted.sort_unstable();
        if let Some(&last) = sorted.last() {
            if n_bits < 64 && last >> n_bits != 0 {
                return Err(Error::invalid(format!("index {last} outside 2^{n_bits}")));
            }
        }
        let mut counts = BTreeMap::new();
        for chunk in sorted.chunk_by(|a, b| a == b) {
            counts.insert(chunk[0], chunk.len() as u64);
        }
        Ok(Self {
            n_bits,
            counts,
            total: sorted.len() as u64,
        })
    }

    /// Joint `(v, h)` distribution of a sample set.
    pub fn from_samples(samples: &SampleSet) -> Result<Self> {
        Self::from_indices(samples.n_visible() + samples.n_hidden(), samples.indices())
    }

    /// Distribution over visible vectors only.
    pub fn from_visible(n_visible: usize, data: &[Vec<u8>]) -> Result<Self> {
        for row in data {
            if row.len() != n_visible {
                return Err(Error::DimensionMismatch {
                    what: "visible vector",
                    expected: n_visible,
                    found: row.len(),
                });
            }
        }
        Self::from_indices(n_visible, data.iter().map(|v| config_index(v, &[])))
    }

    /// Arbitrary weights; used to build exact marginals as a distribution.
    pub fn from_counts(n_bits: usize, counts: BTreeMap<u64, u64>) -> Self {
        let total = counts.values().sum();
        Self {
            n_bits,
            counts,
            total,
        }
    }

    pub fn n_bits(&self) -> usize {
        self.n_bits
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn counts(&self) -> &BTreeMap<u64, u64> {
        &self.counts
    }

    pub fn probability(&self, index: u64) -> f64 {
        self.counts.get(&index).map_or(0.0, |&c| c as f64 / self.total as f64)
    }

    pub fn iter_probabilities(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        let total = self.total as f64;
        self.counts.iter().map(move |(&k, &c)| (k, c as f64 / total))
    }
}

/// `D(Q || P)` between an empirical joint distribution and an exact table.
pub fn kl_joint(q: &EmpiricalDistribution, p: &ExactDistribution) -> Result<f64> {
    let bits = p.n_visible() + p.n_hidden();
    if q.n_bits != bits {
        return Err(Error::DimensionMismatch {
            what: "distribution width",
            expected: bits,
            found: q.n_bits,
        });
    }
    if q.total == 0 {
        return Err(Error::EmptySampleSet);
    }
    let log_p = p.log_probabilities();
    Ok(q
        .iter_probabilities()
        .map(|(k, qk)| qk * (qk.ln() - log_p[k as usize]))
        .sum())
}

/// `D(Q_D || P(v))` between a distribution over visible vectors and the
/// model marginal. `log_z` is computed when not supplied.
pub fn kl_visible(q: &EmpiricalDistribution, params: &RbmParams, log_z: Option<f64>) -> Result<f64> {
    let n = params.n_visible();
    if q.n_bits != n {
        return Err(Error::DimensionMismatch {
            what: "visible distribution width",
            expected: n,
            found: q.n_bits,
        });
    }
    if q.total == 0 {
        return Err(Error::EmptySampleSet);
    }
    let log_z = match log_z {
        Some(z) => z,
        None => log_partition(params)?,
    };
    let mut v = vec![0u8; n];
    Ok(q
        .iter_probabilities()
        .map(|(k, qk)| {
            for (i, vi) in v.iter_mut().enumerate() {
                *vi = ((k >> i) & 1) as u8;
            }
            qk * (qk.ln() - (visible_log_weight(params, &v) - log_z))
        })
        .sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyTerm {
    Total,
    Vh,
    V,
    H,
}

impl EnergyTerm {
    pub const ALL: [EnergyTerm; 4] = [EnergyTerm::Total, EnergyTerm::Vh, EnergyTerm::V, EnergyTerm::H];

    pub fn of(&self, t: &TermEnergies) -> f64 {
        match self {
            EnergyTerm::Total => t.total(),
            EnergyTerm::Vh => t.vh,
            EnergyTerm::V => t.v,
            EnergyTerm::H => t.h,
        }
    }
}

impl fmt::Display for EnergyTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnergyTerm::Total => "E_total",
            EnergyTerm::Vh => "E_vh",
            EnergyTerm::V => "E_v",
            EnergyTerm::H => "E_h",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyHistogram {
    pub term: EnergyTerm,
    /// Source tag or a caller-chosen label for the sample set.
    pub label: String,
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Mean of the raw (unbinned) values.
    pub mean: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binning {
    Fixed(usize),
    /// Freedman-Diaconis width on the pooled values.
    FreedmanDiaconis,
}

const MAX_BINS: usize = 512;

/// Per-sample energy split, in row order.
pub fn term_energies(params: &RbmParams, samples: &SampleSet) -> Vec<TermEnergies> {
    samples
        .rows()
        .map(|(v, h)| TermEnergies::of(params, v, h))
        .collect()
}

/// Mean of each term over a sample set.
pub fn mean_term_energies(params: &RbmParams, samples: &SampleSet) -> Result<TermEnergies> {
    if samples.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let n = samples.len() as f64;
    let mut acc = TermEnergies::default();
    for t in term_energies(params, samples) {
        acc.vh += t.vh;
        acc.v += t.v;
        acc.h += t.h;
    }
    Ok(TermEnergies {
        vh: acc.vh / n,
        v: acc.v / n,
        h: acc.h / n,
    })
}

fn edges_for(values: &[f64], binning: Binning) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 1e-12 * (1.0 + lo.abs()) {
        return vec![lo - 0.5, lo + 0.5];
    }
    let bins = match binning {
        Binning::Fixed(k) => k.max(1),
        Binning::FreedmanDiaconis => {
            let mut sorted = values.to_vec();
            sorted.sort_by(f64::total_cmp);
            let q = |f: f64| sorted[((sorted.len() - 1) as f64 * f).round() as usize];
            let iqr = q(0.75) - q(0.25);
            let n = sorted.len() as f64;
            if iqr > 0.0 {
                let width = 2.0 * iqr / n.cbrt();
                ((hi - lo) / width).ceil() as usize
            } else {
                // Sturges
                n.log2().ceil() as usize + 1
            }
        }
    }
    .clamp(1, MAX_BINS);
    let width = (hi - lo) / bins as f64;
    let mut edges: Vec<f64> = (0..bins).map(|k| lo + k as f64 * width).collect();
    edges.push(hi);
    edges
}

fn bin_counts(values: &[f64], edges: &[f64]) -> Vec<u64> {
    let bins = edges.len() - 1;
    let lo = edges[0];
    let width = (edges[bins] - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &x in values {
        let k = (((x - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        counts[k] += 1;
    }
    counts
}

/// Histograms of the total energy and its three terms, one group of four per
/// sample set. Edges for each term are shared across all sets (computed on
/// the pooled values), so groups can be overlaid directly.
pub fn energy_histograms(
    params: &RbmParams,
    sets: &[(&str, &SampleSet)],
    binning: Binning,
) -> Result<Vec<Vec<EnergyHistogram>>> {
    if sets.is_empty() || sets.iter().any(|(_, s)| s.is_empty()) {
        return Err(Error::EmptySampleSet);
    }
    let per_set: Vec<Vec<TermEnergies>> = sets.iter().map(|(_, s)| term_energies(params, s)).collect();
    let mut out: Vec<Vec<EnergyHistogram>> = vec![Vec::new(); sets.len()];
    for term in EnergyTerm::ALL {
        let values: Vec<Vec<f64>> = per_set
            .iter()
            .map(|ts| ts.iter().map(|t| term.of(t)).collect())
            .collect();
        let pooled: Vec<f64> = values.iter().flatten().copied().collect();
        let edges = edges_for(&pooled, binning);
        for (k, vals) in values.iter().enumerate() {
            out[k].push(EnergyHistogram {
                term,
                label: sets[k].0.to_string(),
                counts: bin_counts(vals, &edges),
                edges: edges.clone(),
                mean: vals.iter().sum::<f64>() / vals.len() as f64,
            });
        }
    }
    Ok(out)
}

/// CSV rows `edge_low,edge_high,count,term,source_tag`.
pub fn write_histograms_csv<W: Write>(mut out: W, hists: &[EnergyHistogram]) -> Result<()> {
    writeln!(out, "edge_low,edge_high,count,term,source_tag")?;
    for hist in hists {
        for (k, count) in hist.counts.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{}",
                hist.edges[k],
                hist.edges[k + 1],
                count,
                hist.term,
                hist.label
            )?;
        }
    }
    Ok(())
}

/// One metric line of the JSON-lines output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub metric: String,
    pub value: f64,
    pub n_samples: u64,
    pub seed: u64,
    pub variant: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub config_digest: Option<String>,
}

impl MetricRecord {
    pub fn write_line<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(&mut out, self)?;
        writeln!(out)?;
        Ok(())
    }
}

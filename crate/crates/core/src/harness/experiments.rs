//! The studies: pretraining, online calibration against a simulated
//! annealer, the noise sweep, the sample-quality table and the training
//! comparison.
//!
//! Every random stream is seeded from the master seed and a tag naming the
//! job, so jobs can run on any number of workers and still produce the same
//! bytes.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{EstimationSchedule, ExperimentConfig};
use crate::calibration::{compensate, BetaEstimator, BetaSet, BetaTrace, BetaVariant, UpdateRule};
use crate::error::{Error, Result};
use crate::evaluation::{
    energy_histograms, kl_joint, write_histograms_csv, Binning, EmpiricalDistribution, MetricRecord,
};
use crate::rbm::{exact_distribution, ExactDistribution, RbmParams};
use crate::sampling::{
    exact_sample, gibbs_sample, make_noise_model, noisy_annealer_sample_pooled, Fidelity, NoiseModel,
    NoiseSpec, SampleSet, WeightNoiseMode,
};
use crate::training::{train, TrainConfig, TrainMode, TrainOutcome, TrainRecord};

/// A 64-bit seed from the master seed, a job tag and job coordinates.
pub fn derive_seed(master: u64, tag: &str, coords: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(tag.as_bytes());
    for c in coords {
        h.update(c.to_le_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

fn rng_for(master: u64, tag: &str, coords: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tag, coords))
}

fn mode_code(mode: WeightNoiseMode) -> u64 {
    match mode {
        WeightNoiseMode::Constant => 0,
        WeightNoiseMode::Gaussian => 1,
    }
}

fn variant_code(variant: BetaVariant) -> u64 {
    BetaVariant::ALL.iter().position(|&v| v == variant).expect("listed") as u64
}

fn mode_name(mode: WeightNoiseMode) -> &'static str {
    match mode {
        WeightNoiseMode::Constant => "constant",
        WeightNoiseMode::Gaussian => "gaussian",
    }
}

/// The model every sample-quality study works on: CD training on the
/// configured dataset.
pub fn pretrain(config: &ExperimentConfig, data: &[Vec<u8>]) -> Result<RbmParams> {
    let train_config = TrainConfig {
        epochs: config.sweep.pretrain_epochs,
        eta_theta: config.sweep.pretrain_eta,
        unified_update_epochs: 0,
        seed: derive_seed(config.seed, "pretrain", &[]),
        ..config.train.clone()
    };
    log::info!("pretraining {} epochs by cd", train_config.epochs);
    Ok(train(data, config.model.n_hidden, &train_config, TrainMode::Cd, None)?.params)
}

/// Runs the online estimator against the simulated annealer: each call
/// programs `compensate(params, beta)`, draws a batch and updates `beta`.
/// The trace holds the starting point at 0 and the estimate after call `k`
/// at `k`.
pub fn calibrate<R: Rng + ?Sized>(
    params: &RbmParams,
    noises: &[NoiseModel],
    variant: BetaVariant,
    schedule: &EstimationSchedule,
    fidelity: Fidelity,
    rng: &mut R,
) -> Result<(BetaSet, BetaTrace)> {
    let (n, m) = (params.n_visible(), params.n_hidden());
    let mut beta = BetaSet::identity(variant, n, m);
    let mut trace = BetaTrace::new();
    trace.push(0, beta.clone())?;
    for k in 0..schedule.calls {
        let programmed = compensate(params, &beta)?;
        let samples = noisy_annealer_sample_pooled(&programmed, noises, schedule.batch_samples, rng, fidelity)?;
        let eta = if schedule.eta_half_life > 0.0 {
            schedule.eta / (1.0 + k as f64 / schedule.eta_half_life)
        } else {
            schedule.eta
        };
        let estimator = BetaEstimator {
            eta,
            inner_iters: schedule.inner_iters,
            model_phase: schedule.model_phase,
            scaling: schedule.scaling,
        };
        let rule = if k < schedule.unified_calls {
            UpdateRule::Collapsed
        } else {
            UpdateRule::PerComponent
        };
        beta = estimator.step(params, &samples, &beta, rule, rng)?;
        trace.push(k + 1, beta.clone())?;
    }
    Ok((beta, trace))
}

/// Sample mean and (n - 1) standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let k = s.len() / 2;
    if s.len() % 2 == 1 {
        s[k]
    } else {
        0.5 * (s[k - 1] + s[k])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub weight_mode: String,
    pub sigma: f64,
    /// A variant name, or `baseline` for the noiseless sampler.
    pub label: String,
    pub repetition: usize,
    pub kl: f64,
    pub beta: Option<BetaSet>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepCell {
    pub weight_mode: String,
    pub sigma: f64,
    pub label: String,
    pub mean_kl: f64,
    pub std_kl: f64,
    pub repetitions: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Baseline first, then cells in grid order.
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub fn baseline(&self) -> &SweepCell {
        &self.cells[0]
    }

    pub fn cell(&self, mode: WeightNoiseMode, sigma: f64, variant: BetaVariant) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.weight_mode == mode_name(mode) && c.sigma == sigma && c.label == variant.as_str())
    }
}

/// The noise models one sweep cell pools over.
fn sweep_noises(config: &ExperimentConfig, mode: WeightNoiseMode, sigma: f64, rep: usize) -> Result<Vec<NoiseModel>> {
    let (n, m) = (config.model.n_visible, config.model.n_hidden);
    (0..config.sweep.pool_noise_draws)
        .map(|k| {
            let spec = NoiseSpec {
                w_mode: mode,
                seed: derive_seed(
                    config.seed,
                    "sweep-noise",
                    &[mode_code(mode), sigma.to_bits(), rep as u64, k as u64],
                ),
                ..config.noise.clone()
            }
            .with_sigma(sigma);
            make_noise_model(&spec, n, m)
        })
        .collect()
}

/// KL of `kl_samples` draws to the exact distribution. The draw stream
/// depends only on the repetition, so every cell of a repetition shares it
/// with the baseline.
fn measured_kl(
    config: &ExperimentConfig,
    reference: &ExactDistribution,
    draw: impl FnOnce(&mut ChaCha8Rng) -> Result<SampleSet>,
    rep: usize,
) -> Result<f64> {
    let mut rng = rng_for(config.seed, "sweep-kl", &[rep as u64]);
    let samples = draw(&mut rng)?;
    kl_joint(&EmpiricalDistribution::from_samples(&samples)?, reference)
}

/// For every weight-noise mode, sigma, variant and repetition: draw noise,
/// calibrate, draw `kl_samples` calibrated samples and record their KL to
/// the model. The baseline samples the model itself.
pub fn run_noise_sweep(config: &ExperimentConfig, params: &RbmParams) -> Result<SweepResult> {
    let sweep = &config.sweep;
    let reference = exact_distribution(params)?;
    let reps = sweep.repetitions;

    let mut baseline = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let kl = measured_kl(config, &reference, |rng| exact_sample(&reference, sweep.kl_samples, rng), rep)?;
            Ok(SweepRow {
                weight_mode: "none".into(),
                sigma: 0.0,
                label: "baseline".into(),
                repetition: rep,
                kl,
                beta: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut jobs = Vec::new();
    for &mode in &sweep.weight_modes {
        for &sigma in &sweep.sigmas {
            for &variant in &sweep.variants {
                for rep in 0..reps {
                    jobs.push((mode, sigma, variant, rep));
                }
            }
        }
    }
    log::info!("noise sweep: {} calibrations", jobs.len());
    let rows = jobs
        .into_par_iter()
        .map(|(mode, sigma, variant, rep)| {
            let noises = sweep_noises(config, mode, sigma, rep)?;
            let mut rng = rng_for(
                config.seed,
                "sweep-calibrate",
                &[mode_code(mode), sigma.to_bits(), variant_code(variant), rep as u64],
            );
            let (beta, _) = calibrate(params, &noises, variant, &sweep.estimation, sweep.fidelity, &mut rng)?;
            let programmed = compensate(params, &beta)?;
            let kl = measured_kl(
                config,
                &reference,
                |rng| noisy_annealer_sample_pooled(&programmed, &noises, sweep.kl_samples, rng, sweep.fidelity),
                rep,
            )?;
            log::debug!("{} sigma={sigma} {variant} rep {rep}: kl {kl}", mode_name(mode));
            Ok(SweepRow {
                weight_mode: mode_name(mode).into(),
                sigma,
                label: variant.as_str().into(),
                repetition: rep,
                kl,
                beta: Some(beta),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let summarize = |rows: &[SweepRow]| {
        let kls: Vec<f64> = rows.iter().map(|r| r.kl).collect();
        let (mean_kl, std_kl) = mean_std(&kls);
        SweepCell {
            weight_mode: rows[0].weight_mode.clone(),
            sigma: rows[0].sigma,
            label: rows[0].label.clone(),
            mean_kl,
            std_kl,
            repetitions: rows.len(),
        }
    };
    let mut cells = vec![summarize(&baseline)];
    cells.extend(rows.chunks(reps).map(summarize));
    baseline.extend(rows);
    Ok(SweepResult { rows: baseline, cells })
}

/// Where a sample set in the quality table came from.
#[derive(Clone, Debug, PartialEq)]
pub struct QualityRow {
    pub source: String,
    pub n_samples: usize,
    pub kl: f64,
}

#[derive(Clone, Debug)]
pub struct QualityResult {
    pub rows: Vec<QualityRow>,
    pub histograms: Vec<crate::evaluation::EnergyHistogram>,
}

/// Sample quality of the clean Gibbs sampler, the uncalibrated annealer and
/// the annealer calibrated under each variant, at each sample size; energy
/// histograms of the first size with exact samples as reference.
pub fn run_sample_quality(
    config: &ExperimentConfig,
    params: &RbmParams,
    sizes: &[usize],
) -> Result<QualityResult> {
    let sweep = &config.sweep;
    let (n, m) = (params.n_visible(), params.n_hidden());
    let reference = exact_distribution(params)?;
    let noise = make_noise_model(
        &NoiseSpec {
            seed: derive_seed(config.seed, "quality-noise", &[]),
            ..config.noise.clone()
        },
        n,
        m,
    )?;
    let noises = [noise];
    let mut sources: Vec<(String, Option<BetaSet>)> = vec![
        ("gibbs".into(), None),
        ("uncalibrated".into(), Some(BetaSet::identity(BetaVariant::OneParameter, n, m))),
    ];
    for &variant in &sweep.variants {
        let mut rng = rng_for(config.seed, "quality-calibrate", &[variant_code(variant)]);
        let (beta, _) = calibrate(params, &noises, variant, &sweep.estimation, sweep.fidelity, &mut rng)?;
        sources.push((variant.as_str().into(), Some(beta)));
    }
    let mut rows = Vec::new();
    let mut hist_sets: Vec<(String, SampleSet)> = Vec::new();
    for (k, &size) in sizes.iter().enumerate() {
        for (s, (label, beta)) in sources.iter().enumerate() {
            let mut rng = rng_for(config.seed, "quality-sample", &[k as u64, s as u64]);
            let samples = match beta {
                None => gibbs_sample(params, size, &config.train.gibbs, &mut rng)?,
                Some(beta) => {
                    noisy_annealer_sample_pooled(&compensate(params, beta)?, &noises, size, &mut rng, sweep.fidelity)?
                }
            };
            rows.push(QualityRow {
                source: label.clone(),
                n_samples: size,
                kl: kl_joint(&EmpiricalDistribution::from_samples(&samples)?, &reference)?,
            });
            if k == 0 {
                hist_sets.push((label.clone(), samples));
            }
        }
    }
    let histograms = match sizes.first() {
        Some(&size) => {
            let mut rng = rng_for(config.seed, "quality-exact", &[]);
            hist_sets.insert(0, ("exact".into(), exact_sample(&reference, size, &mut rng)?));
            let labelled: Vec<(&str, &SampleSet)> = hist_sets.iter().map(|(l, s)| (l.as_str(), s)).collect();
            energy_histograms(params, &labelled, Binning::FreedmanDiaconis)?
                .into_iter()
                .flatten()
                .collect()
        }
        None => Vec::new(),
    };
    Ok(QualityResult { rows, histograms })
}

/// A negative-phase provider in the training comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Cd,
    Gibbs,
    Calibrated(BetaVariant),
}

impl Scheme {
    pub fn label(&self) -> &'static str {
        match self {
            Scheme::Cd => "cd",
            Scheme::Gibbs => "gibbs",
            Scheme::Calibrated(v) => v.as_str(),
        }
    }
}

pub struct ComparisonRun {
    pub scheme: Scheme,
    pub seed: u64,
    pub outcome: TrainOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonSummary {
    pub scheme: String,
    pub median_min_kl: f64,
    pub min_kls: Vec<f64>,
    pub late_slopes: Vec<f64>,
}

pub struct ComparisonResult {
    pub runs: Vec<ComparisonRun>,
    pub summary: Vec<ComparisonSummary>,
}

/// Least-squares slope of the training KL over epochs `from..`.
pub fn kl_slope(record: &TrainRecord, from: usize) -> Option<f64> {
    let pts: Vec<(f64, f64)> = record
        .epochs
        .iter()
        .filter(|e| e.epoch >= from)
        .filter_map(|e| e.kl.map(|kl| (e.epoch as f64, kl)))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// The noise a calibrated training run with this seed trains against.
pub fn training_noise(config: &ExperimentConfig, seed: u64) -> Result<NoiseModel> {
    make_noise_model(
        &NoiseSpec {
            seed: derive_seed(config.seed, "train-noise", &[seed]),
            ..config.noise.clone()
        },
        config.model.n_visible,
        config.model.n_hidden,
    )
}

/// Trains cd, gibbs and every configured calibrated variant once per
/// comparison seed, under the same initial weights and sample budget.
pub fn run_training_comparison(config: &ExperimentConfig, data: &[Vec<u8>]) -> Result<ComparisonResult> {
    let mut schemes = vec![Scheme::Cd, Scheme::Gibbs];
    schemes.extend(config.comparison.variants.iter().map(|&v| Scheme::Calibrated(v)));
    let mut jobs = Vec::new();
    for &scheme in &schemes {
        for &seed in &config.comparison.seeds {
            jobs.push((scheme, seed));
        }
    }
    log::info!("training comparison: {} runs", jobs.len());
    let runs = jobs
        .into_par_iter()
        .map(|(scheme, seed)| {
            let mut tc = TrainConfig {
                seed,
                ..config.train.clone()
            };
            let (mode, noise) = match scheme {
                Scheme::Cd => (TrainMode::Cd, None),
                Scheme::Gibbs => (TrainMode::Gibbs, None),
                Scheme::Calibrated(v) => {
                    tc.variant = v;
                    (TrainMode::AnnealerCalibrated, Some(training_noise(config, seed)?))
                }
            };
            let outcome = train(data, config.model.n_hidden, &tc, mode, noise.as_ref())?;
            log::debug!("{} seed {seed}: min kl {:?}", scheme.label(), outcome.record.min_kl());
            Ok(ComparisonRun { scheme, seed, outcome })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = schemes
        .iter()
        .map(|&scheme| {
            let mine: Vec<&ComparisonRun> = runs.iter().filter(|r| r.scheme == scheme).collect();
            let min_kls: Vec<f64> = mine
                .iter()
                .map(|r| r.outcome.record.min_kl().map_or(f64::NAN, |(_, kl)| kl))
                .collect();
            let late_slopes = mine
                .iter()
                .map(|r| kl_slope(&r.outcome.record, config.train.unified_update_epochs).unwrap_or(f64::NAN))
                .collect();
            ComparisonSummary {
                scheme: scheme.label().into(),
                median_min_kl: median(&min_kls),
                min_kls,
                late_slopes,
            }
        })
        .collect();
    Ok(ComparisonResult { runs, summary })
}

/// Writes result files into one directory and remembers what it wrote.
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
    digest: String,
    seed: u64,
}

impl OutputDir {
    pub fn create(root: &Path, config: &ExperimentConfig) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
            digest: config.digest(),
            seed: config.seed,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    /// Opens `name` for writing, creating parent directories.
    pub fn file(&mut self, name: &str) -> Result<BufWriter<fs::File>> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        self.written.push(name.to_string());
        Ok(BufWriter::new(fs::File::create(path)?))
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut f = self.file(name)?;
        serde_json::to_writer_pretty(&mut f, value)?;
        writeln!(f)?;
        f.flush()?;
        Ok(())
    }

    /// Writes CSV produced by `body`, appending `seed` and `config_digest`
    /// columns to the header and every row.
    pub fn csv_with_provenance(
        &mut self,
        name: &str,
        seed: u64,
        body: impl FnOnce(&mut Vec<u8>) -> Result<()>,
    ) -> Result<()> {
        let mut raw = Vec::new();
        body(&mut raw)?;
        let text = String::from_utf8(raw).map_err(|e| Error::invalid(e.to_string()))?;
        let digest = self.digest.clone();
        let mut f = self.file(name)?;
        for (k, line) in text.lines().enumerate() {
            if k == 0 {
                writeln!(f, "{line},seed,config_digest")?;
            } else {
                writeln!(f, "{line},{seed},{digest}")?;
            }
        }
        f.flush()?;
        Ok(())
    }

    pub fn metric(&self, metric: &str, value: f64, n_samples: u64, variant: Option<&str>) -> MetricRecord {
        MetricRecord {
            metric: metric.into(),
            value,
            n_samples,
            seed: self.seed,
            variant: variant.map(String::from),
            config_digest: Some(self.digest.clone()),
        }
    }

    pub fn write_metrics(&mut self, name: &str, records: &[MetricRecord]) -> Result<()> {
        let mut f = self.file(name)?;
        for r in records {
            r.write_line(&mut f)?;
        }
        f.flush()?;
        Ok(())
    }

    /// `manifest.json`: what ran, when, and which files it produced. The
    /// only output that is expected to differ between identical reruns.
    pub fn write_manifest(&self, command: &str, started: &str, extra: serde_json::Value) -> Result<()> {
        let manifest = serde_json::json!({
            "command": command,
            "config_digest": self.digest,
            "seed": self.seed,
            "started": started,
            "finished": chrono::Utc::now().to_rfc3339(),
            "versions": { env!("CARGO_PKG_NAME"): env!("CARGO_PKG_VERSION") },
            "outputs": self.written,
            "details": extra,
        });
        let mut f = BufWriter::new(fs::File::create(self.root.join("manifest.json"))?);
        serde_json::to_writer_pretty(&mut f, &manifest)?;
        writeln!(f)?;
        f.flush()?;
        Ok(())
    }
}

pub fn write_sweep(out: &mut OutputDir, result: &SweepResult, params: &RbmParams, config: &ExperimentConfig) -> Result<()> {
    out.json("pretrained_params.json", params)?;
    let digest = out.digest().to_string();
    let mut f = out.file("sweep_rows.csv")?;
    writeln!(f, "weight_mode,sigma,label,repetition,kl,seed,config_digest")?;
    for r in &result.rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            r.weight_mode, r.sigma, r.label, r.repetition, r.kl, config.seed, digest
        )?;
    }
    f.flush()?;
    let mut f = out.file("sweep_summary.csv")?;
    writeln!(f, "weight_mode,sigma,label,mean_kl,std_kl,repetitions,seed,config_digest")?;
    for c in &result.cells {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            c.weight_mode, c.sigma, c.label, c.mean_kl, c.std_kl, c.repetitions, config.seed, digest
        )?;
    }
    f.flush()?;
    let mut f = out.file("sweep_betas.jsonl")?;
    for r in result.rows.iter().filter(|r| r.beta.is_some()) {
        serde_json::to_writer(&mut f, r)?;
        writeln!(f)?;
    }
    f.flush()?;
    let records: Vec<MetricRecord> = result
        .cells
        .iter()
        .map(|c| {
            let name = format!("kl_joint_mean/{}/sigma={}", c.weight_mode, c.sigma);
            out.metric(&name, c.mean_kl, config.sweep.kl_samples as u64, Some(&c.label))
        })
        .collect();
    out.write_metrics("metrics.jsonl", &records)
}

pub fn write_quality(out: &mut OutputDir, result: &QualityResult, config: &ExperimentConfig) -> Result<()> {
    let digest = out.digest().to_string();
    let mut f = out.file("quality_table.csv")?;
    writeln!(f, "source,n_samples,kl,seed,config_digest")?;
    for r in &result.rows {
        writeln!(f, "{},{},{},{},{}", r.source, r.n_samples, r.kl, config.seed, digest)?;
    }
    f.flush()?;
    out.csv_with_provenance("energy_histograms.csv", config.seed, |b| {
        write_histograms_csv(b, &result.histograms)
    })?;
    let mut records: Vec<MetricRecord> = result
        .rows
        .iter()
        .map(|r| out.metric("kl_joint", r.kl, r.n_samples as u64, Some(&r.source)))
        .collect();
    records.extend(result.histograms.iter().map(|h| {
        out.metric(&format!("mean_{}", h.term), h.mean, h.counts.iter().sum(), Some(&h.label))
    }));
    out.write_metrics("metrics.jsonl", &records)
}

/// Per-epoch record, beta trace (when calibrated) and final parameters of
/// one training run, under `prefix`.
pub fn write_train_run(
    out: &mut OutputDir,
    prefix: &str,
    outcome: &TrainOutcome,
    seed: u64,
    n_visible: usize,
    n_hidden: usize,
) -> Result<()> {
    out.csv_with_provenance(&format!("{prefix}_record.csv"), seed, |b| outcome.record.write_csv(b))?;
    if let Some(beta) = outcome.trace.last() {
        out.csv_with_provenance(&format!("{prefix}_beta_trace.csv"), seed, |b| {
            outcome.trace.write_csv(b, n_visible, n_hidden)
        })?;
        out.json(&format!("{prefix}_beta.json"), beta)?;
    }
    out.json(&format!("{prefix}_params.json"), &outcome.params)
}

pub fn write_comparison(out: &mut OutputDir, result: &ComparisonResult, config: &ExperimentConfig) -> Result<()> {
    let (n, m) = (config.model.n_visible, config.model.n_hidden);
    for run in &result.runs {
        write_train_run(out, &format!("{}_seed{}", run.scheme.label(), run.seed), &run.outcome, run.seed, n, m)?;
    }
    let digest = out.digest().to_string();
    let mut f = out.file("comparison_summary.csv")?;
    writeln!(f, "scheme,seed,min_kl,min_kl_epoch,late_kl_slope,config_digest")?;
    for run in &result.runs {
        let (epoch, kl) = run.outcome.record.min_kl().unwrap_or((0, f64::NAN));
        let slope = kl_slope(&run.outcome.record, config.train.unified_update_epochs).unwrap_or(f64::NAN);
        writeln!(f, "{},{},{kl},{epoch},{slope},{digest}", run.scheme.label(), run.seed)?;
    }
    f.flush()?;
    let records: Vec<MetricRecord> = result
        .summary
        .iter()
        .map(|s| out.metric("median_min_kl", s.median_min_kl, config.comparison.seeds.len() as u64, Some(&s.scheme)))
        .collect();
    out.write_metrics("metrics.jsonl", &records)
}

/// Reads a required experiment input, naming the file on failure.
pub fn read_params(path: &Path) -> Result<RbmParams> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn read_beta(path: &Path) -> Result<BetaSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let beta: BetaSet = serde_json::from_str(&text)?;
    beta.validate()?;
    Ok(beta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_separate_jobs() {
        let a = derive_seed(1, "sweep", &[0, 1]);
        assert_eq!(a, derive_seed(1, "sweep", &[0, 1]));
        assert_ne!(a, derive_seed(2, "sweep", &[0, 1]));
        assert_ne!(a, derive_seed(1, "sweep", &[1, 0]));
        assert_ne!(a, derive_seed(1, "other", &[0, 1]));
    }

    #[test]
    fn summary_statistics() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn slope_of_a_line() {
        let record = TrainRecord {
            epochs: (0..10)
                .map(|e| crate::training::EpochRecord {
                    epoch: e,
                    kl: Some(5.0 - 0.5 * e as f64),
                    reconstruction_error: 0.0,
                    w_norm: 0.0,
                    b_norm: 0.0,
                    c_norm: 0.0,
                    wall_time_s: 0.0,
                })
                .collect(),
        };
        assert!((kl_slope(&record, 3).unwrap() + 0.5).abs() < 1e-12);
        assert!(kl_slope(&record, 9).is_none());
    }

    #[test]
    fn calibration_recovers_a_uniform_factor_on_a_small_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = RbmParams::random_uniform(4, 3, 1.0, &mut rng);
        let noise = NoiseModel::uniform(4, 3, 2.0).unwrap();
        let schedule = EstimationSchedule {
            batch_samples: 20_000,
            calls: 30,
            unified_calls: 0,
            eta: 0.5,
            ..EstimationSchedule::default()
        };
        let (beta, trace) =
            calibrate(&params, &[noise], BetaVariant::OneParameter, &schedule, Fidelity::Exact, &mut rng).unwrap();
        assert_eq!(trace.entries().len(), 31);
        let b = beta.components()[0];
        assert!((b - 2.0).abs() < 0.1, "{b}");
    }
}

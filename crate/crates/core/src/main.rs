use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rbm_calib::calibration::{compensate, BetaVariant};
use rbm_calib::evaluation::{
    energy_histograms, kl_joint, kl_visible, write_histograms_csv, Binning, EmpiricalDistribution,
};
use rbm_calib::harness::dataset::write_binary_vectors;
use rbm_calib::harness::experiments::{
    self, derive_seed, pretrain, read_beta, read_params, run_noise_sweep, run_sample_quality,
    run_training_comparison, write_comparison, write_quality, write_sweep, write_train_run, OutputDir,
};
use rbm_calib::harness::ExperimentConfig;
use rbm_calib::rbm::{exact_distribution, RbmParams};
use rbm_calib::sampling::{exact_sample, gibbs_sample, make_noise_model, noisy_annealer_sample, SampleSet};
use rbm_calib::training::{train_with, TrainMode};

#[derive(Parser)]
#[command(name = "rbm-calib", version, about = "Train and sample RBMs through a calibrated noisy annealer")]
struct Cli {
    /// Experiment config (TOML). Defaults apply to anything left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, also used as the single-run training seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model, or every scheme over the comparison seeds.
    Train(TrainArgs),
    /// Calibrate against simulated noise over the sigma grid and record KL.
    SweepNoise(SweepArgs),
    /// Draw samples from a model.
    Sample(SampleArgs),
    /// Score samples against a model, or build the sample-quality table.
    Evaluate(EvaluateArgs),
    /// Write the configured dataset as 0/1 lines.
    GenData(GenDataArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// cd, gibbs or annealer_calibrated
    #[arg(long, value_parser = parse_mode)]
    mode: Option<TrainMode>,
    /// one_parameter, three_parameter or one_and_all_bias
    #[arg(long, value_parser = parse_variant)]
    variant: Option<BetaVariant>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Write params (and beta) every N epochs; 0 writes only the final ones.
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
    /// Run cd, gibbs and each calibrated variant over the comparison seeds.
    #[arg(long)]
    compare: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Model to calibrate against; pretrained by CD when absent.
    #[arg(long)]
    params: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplerKind {
    Exact,
    Gibbs,
    Annealer,
}

#[derive(Args)]
struct SampleArgs {
    /// Model to sample (JSON)
    #[arg(long)]
    params: PathBuf,
    #[arg(long, value_enum, default_value = "exact")]
    sampler: SamplerKind,
    /// Number of samples
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    /// Program the annealer with `params / beta`.
    #[arg(long)]
    beta: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Model to score against; pretrained by CD when absent.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Sample file to score. Without it, the sample-quality table is built.
    #[arg(long)]
    samples: Option<PathBuf>,
    /// Sample sizes for the quality table.
    #[arg(long, value_delimiter = ',', default_values_t = [100_000usize, 1_000_000])]
    sizes: Vec<usize>,
}

#[derive(Args)]
struct GenDataArgs {
    /// Output file; defaults to `dataset.txt` in the output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<TrainMode, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_variant(s: &str) -> Result<BetaVariant, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("setting up the worker pool")?;
    }
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
        config.train.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    let started = chrono::Utc::now().to_rfc3339();
    match cli.command {
        Command::Train(args) => cmd_train(config, args, &started),
        Command::SweepNoise(args) => cmd_sweep(config, args, &started),
        Command::Sample(args) => cmd_sample(config, args, &started),
        Command::Evaluate(args) => cmd_evaluate(config, args, &started),
        Command::GenData(args) => cmd_gen_data(config, args),
    }
}

fn model_for(config: &ExperimentConfig, path: Option<&Path>) -> anyhow::Result<RbmParams> {
    match path {
        Some(p) => Ok(read_params(p)?),
        None => {
            let data = config.dataset.load()?;
            Ok(pretrain(config, &data)?)
        }
    }
}

fn cmd_train(mut config: ExperimentConfig, args: TrainArgs, started: &str) -> anyhow::Result<()> {
    if let Some(v) = args.variant {
        config.train.variant = v;
    }
    if let Some(e) = args.epochs {
        config.train.epochs = e;
        config.train.unified_update_epochs = config.train.unified_update_epochs.min(e);
    }
    config.validate()?;
    let data = config.dataset.load()?;
    if data.is_empty() {
        bail!("the dataset is empty");
    }
    let mut out = OutputDir::create(&config.output_dir, &config)?;
    out.json("config.json", &config)?;
    if args.compare {
        let result = run_training_comparison(&config, &data)?;
        write_comparison(&mut out, &result, &config)?;
        for s in &result.summary {
            log::info!("{}: median minimum KL {:.4}", s.scheme, s.median_min_kl);
        }
        out.write_manifest("train --compare", started, serde_json::json!({ "summary": result.summary }))?;
        return Ok(());
    }
    let mode = args.mode.unwrap_or(TrainMode::Cd);
    let noise = match mode {
        TrainMode::AnnealerCalibrated => Some(experiments::training_noise(&config, config.train.seed)?),
        _ => None,
    };
    let every = args.checkpoint_every;
    let mut checkpoints: Vec<(usize, RbmParams, Option<rbm_calib::calibration::BetaSet>)> = Vec::new();
    let outcome = train_with(&data, config.model.n_hidden, &config.train, mode, noise.as_ref(), |view| {
        let epoch = view.record.epoch + 1;
        if every > 0 && epoch % every == 0 {
            checkpoints.push((epoch, view.params.clone(), view.beta.cloned()));
        }
        Ok(())
    })?;
    for (epoch, params, beta) in &checkpoints {
        out.json(&format!("checkpoints/epoch_{epoch:06}_params.json"), params)?;
        if let Some(beta) = beta {
            out.json(&format!("checkpoints/epoch_{epoch:06}_beta.json"), beta)?;
        }
    }
    write_train_run(
        &mut out,
        &mode.to_string(),
        &outcome,
        config.train.seed,
        config.model.n_visible,
        config.model.n_hidden,
    )?;
    if let Some((epoch, kl)) = outcome.record.min_kl() {
        log::info!("minimum KL {kl:.4} at epoch {epoch}");
    }
    out.write_manifest(
        "train",
        started,
        serde_json::json!({
            "mode": mode.to_string(),
            "wall_time_s": outcome.record.total_wall_time_s(),
        }),
    )?;
    Ok(())
}

fn cmd_sweep(config: ExperimentConfig, args: SweepArgs, started: &str) -> anyhow::Result<()> {
    config.validate()?;
    let params = model_for(&config, args.params.as_deref())?;
    let result = run_noise_sweep(&config, &params)?;
    let mut out = OutputDir::create(&config.output_dir, &config)?;
    out.json("config.json", &config)?;
    write_sweep(&mut out, &result, &params, &config)?;
    for c in &result.cells {
        log::info!(
            "{:>8} sigma={:<5} {:>16}: KL {:.5} +- {:.5}",
            c.weight_mode,
            c.sigma,
            c.label,
            c.mean_kl,
            c.std_kl
        );
    }
    out.write_manifest("sweep-noise", started, serde_json::json!({}))?;
    Ok(())
}

fn cmd_sample(config: ExperimentConfig, args: SampleArgs, started: &str) -> anyhow::Result<()> {
    let params = read_params(&args.params)?;
    let seed = derive_seed(config.seed, "sample", &[]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = match args.sampler {
        SamplerKind::Exact => exact_sample(&exact_distribution(&params)?, args.n, &mut rng)?,
        SamplerKind::Gibbs => gibbs_sample(&params, args.n, &config.train.gibbs, &mut rng)?,
        SamplerKind::Annealer => {
            let programmed = match &args.beta {
                Some(p) => compensate(&params, &read_beta(p)?)?,
                None => params.clone(),
            };
            let noise = make_noise_model(&config.noise, params.n_visible(), params.n_hidden())?;
            noisy_annealer_sample(&programmed, &noise, args.n, &mut rng, config.sweep.fidelity)?
        }
    };
    let mut out = OutputDir::create(&config.output_dir, &config)?;
    let mut f = out.file("samples.txt")?;
    samples.write_to(&mut f, seed)?;
    f.flush()?;
    log::info!("wrote {} samples", samples.len());
    out.write_manifest("sample", started, serde_json::json!({ "n": args.n }))?;
    Ok(())
}

fn cmd_evaluate(config: ExperimentConfig, args: EvaluateArgs, started: &str) -> anyhow::Result<()> {
    config.validate()?;
    let params = model_for(&config, args.params.as_deref())?;
    let mut out = OutputDir::create(&config.output_dir, &config)?;
    match &args.samples {
        Some(path) => {
            let (samples, sample_seed): (SampleSet, u64) = SampleSet::load(path)?;
            let dist = exact_distribution(&params)?;
            let kl = kl_joint(&EmpiricalDistribution::from_samples(&samples)?, &dist)?;
            let label = samples.source().to_string();
            let hists = energy_histograms(&params, &[(label.as_str(), &samples)], Binning::FreedmanDiaconis)?;
            out.csv_with_provenance("energy_histograms.csv", sample_seed, |b| {
                write_histograms_csv(b, &hists.concat())
            })?;
            let mut records = vec![out.metric("kl_joint", kl, samples.len() as u64, None)];
            records[0].seed = sample_seed;
            let data = config.dataset.load()?;
            if data.first().map(Vec::len) == Some(params.n_visible()) {
                let q = EmpiricalDistribution::from_visible(params.n_visible(), &data)?;
                records.push(out.metric("kl_visible", kl_visible(&q, &params, None)?, data.len() as u64, None));
            }
            out.write_metrics("metrics.jsonl", &records)?;
            log::info!("kl_joint {kl:.5} over {} samples", samples.len());
        }
        None => {
            let result = run_sample_quality(&config, &params, &args.sizes)?;
            write_quality(&mut out, &result, &config)?;
            for r in &result.rows {
                log::info!("{:>16} n={:<8} KL {:.4}", r.source, r.n_samples, r.kl);
            }
        }
    }
    out.write_manifest("evaluate", started, serde_json::json!({}))?;
    Ok(())
}

fn cmd_gen_data(config: ExperimentConfig, args: GenDataArgs) -> anyhow::Result<()> {
    let data = config.dataset.load()?;
    let path = match args.output {
        Some(p) => p,
        None => {
            std::fs::create_dir_all(&config.output_dir)?;
            config.output_dir.join("dataset.txt")
        }
    };
    let f = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = std::io::BufWriter::new(f);
    write_binary_vectors(&mut w, &data)?;
    w.flush()?;
    log::info!("wrote {} vectors to {}", data.len(), path.display());
    Ok(())
}

//! End-to-end acceptance checks. Runs without the libtest harness so every
//! check prints exactly one PASS/FAIL line; exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rbm_calib::calibration::{beta_gradient, model_term_averages, sample_term_averages};
use rbm_calib::evaluation::{kl_joint, EmpiricalDistribution};
use rbm_calib::harness::experiments::{
    calibrate, kl_slope, median, pretrain, run_noise_sweep, run_training_comparison, ComparisonResult, Scheme,
};
use rbm_calib::harness::ExperimentConfig;
use rbm_calib::rbm::{log_partition, marginal_visible_log_prob, scaled_params};
use rbm_calib::sampling::{
    exact_sample, gibbs_sample, make_noise_model, noisy_annealer_sample, Fidelity, GibbsSchedule, SourceTag,
    WeightNoiseMode,
};
use rbm_calib::training::exact_rbm_gradient;
use rbm_calib::{
    compensate, exact_distribution, expand, BetaSet, BetaVariant, Configuration, NoiseModel, NoiseSpec, RbmParams,
    SampleSet,
};

const SWEEP_CONFIG: &str = include_str!("../../../configs/noise_sweep.toml");
const COMPARISON_CONFIG: &str = include_str!("../../../configs/training_comparison.toml");

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn perturbed(p: &RbmParams, k: usize, delta: f64) -> RbmParams {
    let mut flat: Vec<f64> = p.weights().iter().chain(p.visible_bias()).chain(p.hidden_bias()).copied().collect();
    flat[k] += delta;
    let (nw, nb) = (p.weights().len(), p.visible_bias().len());
    RbmParams::new(
        p.n_visible(),
        p.n_hidden(),
        flat[..nw].to_vec(),
        flat[nw..nw + nb].to_vec(),
        flat[nw + nb..].to_vec(),
    )
    .unwrap()
}

fn theta_gradient_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let p = RbmParams::random_uniform(4, 3, 1.0, &mut rng);
        let data: Vec<Vec<u8>> = (0..8)
            .map(|_| (0..4).map(|_| u8::from(rng.gen_bool(0.5))).collect())
            .collect();
        let ll = |q: &RbmParams| {
            let log_z = log_partition(q).unwrap();
            data.iter().map(|v| marginal_visible_log_prob(q, v, Some(log_z)).unwrap()).sum::<f64>() / data.len() as f64
        };
        let g = exact_rbm_gradient(&p, &data).unwrap();
        let h = 1e-5;
        for (k, &a) in g.w.iter().chain(&g.b).chain(&g.c).enumerate() {
            let fd = (ll(&perturbed(&p, k, h)) - ll(&perturbed(&p, k, -h))) / (2.0 * h);
            worst = worst.max(rel_err(a, fd));
        }
    }
    outcome(worst <= 1e-4, format!("max relative error {worst:.2e} over 20 models (limit 1e-4)"))
}

fn beta_log_likelihood(p: &RbmParams, beta: &BetaSet, samples: &SampleSet) -> f64 {
    let scaled = scaled_params(p, &expand(beta, p.n_visible(), p.n_hidden()).unwrap()).unwrap();
    let d = exact_distribution(&scaled).unwrap();
    samples.indices().map(|k| d.log_probabilities()[k as usize]).sum::<f64>() / samples.len() as f64
}

fn beta_gradient_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = [0.0f64; 3];
    for _ in 0..20 {
        let p = RbmParams::random_uniform(3, 2, 1.0, &mut rng);
        let mut s = SampleSet::new(3, 2, SourceTag::Exact);
        for _ in 0..50 {
            s.push_config(&Configuration::from_index(rng.gen_range(0..32), 3, 2));
        }
        for (vi, variant) in BetaVariant::ALL.into_iter().enumerate() {
            let base = BetaSet::identity(variant, 3, 2);
            let comps: Vec<f64> = base.components().iter().map(|_| rng.gen_range(0.5..3.0)).collect();
            let beta = base.with_components(&comps).unwrap();
            let scaled = scaled_params(&p, &expand(&beta, 3, 2).unwrap()).unwrap();
            let delta = beta_gradient(
                variant,
                &sample_term_averages(&p, &s).unwrap(),
                &model_term_averages(&p, &scaled).unwrap(),
            )
            .unwrap();
            let h = 1e-5;
            for (k, &a) in delta.components.iter().enumerate() {
                let at = |x: f64| {
                    let mut c = comps.clone();
                    c[k] += x;
                    beta_log_likelihood(&p, &beta.with_components(&c).unwrap(), &s)
                };
                let fd = (at(h) - at(-h)) / (2.0 * h);
                worst[vi] = worst[vi].max(rel_err(a, fd));
            }
        }
    }
    let pass = worst.iter().all(|&w| w <= 1e-3);
    outcome(
        pass,
        format!(
            "max relative error one {:.2e}, three {:.2e}, one_and_all_bias {:.2e} (limit 1e-3)",
            worst[0], worst[1], worst[2]
        ),
    )
}

fn gibbs_total_variation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = RbmParams::random_uniform(4, 3, 1.0, &mut rng);
    let d = exact_distribution(&p).unwrap();
    let schedule = GibbsSchedule {
        burn_in: 1000,
        thinning: 10,
        chains: 4,
    };
    let s = gibbs_sample(&p, 200_000, &schedule, &mut rng).unwrap();
    let q = EmpiricalDistribution::from_samples(&s).unwrap();
    let mut emp = vec![0.0; d.len()];
    for (k, pk) in q.iter_probabilities() {
        emp[k as usize] = pk;
    }
    let tv = d.total_variation(&emp);
    outcome(tv <= 0.01, format!("TV {tv:.4} from 200000 kept samples (limit 0.01)"))
}

fn desk_model(config: &ExperimentConfig) -> RbmParams {
    pretrain(config, &config.dataset.load().unwrap()).unwrap()
}

fn calibration_recovery(params: &RbmParams, config: &ExperimentConfig) -> Outcome {
    let (n, m) = (params.n_visible(), params.n_hidden());
    let schedule = &config.sweep.estimation;
    let mut rng = ChaCha8Rng::seed_from_u64(4);

    let uniform = NoiseModel::uniform(n, m, 2.0).unwrap();
    let (one, trace) = calibrate(params, &[uniform], BetaVariant::OneParameter, schedule, Fidelity::Exact, &mut rng).unwrap();
    let b = one.components()[0];
    let entered = trace
        .entries()
        .iter()
        .rposition(|(_, e)| !(1.9..=2.1).contains(&e.components()[0]))
        .map_or(0, |k| k + 1);
    let one_ok = (1.9..=2.1).contains(&b);

    let blocks = NoiseModel::blocks(n, m, 6.8, 7.0, 4.5).unwrap();
    let (three, _) = calibrate(params, &[blocks], BetaVariant::ThreeParameter, schedule, Fidelity::Exact, &mut rng).unwrap();
    let c = three.components();
    let truth = [6.8, 7.0, 4.5];
    let errs: Vec<f64> = c.iter().zip(truth).map(|(x, t)| (x - t).abs() / t).collect();
    let three_ok = errs.iter().all(|&e| e <= 0.05);
    outcome(
        one_ok && three_ok,
        format!(
            "one_parameter {b:.4} (in [1.9, 2.1] from call {entered} of {}), three_parameter [{:.3}, {:.3}, {:.3}] \
             relative errors [{:.3}, {:.3}, {:.3}] (limit 0.05), batches of {}",
            schedule.calls, c[0], c[1], c[2], errs[0], errs[1], errs[2], schedule.batch_samples
        ),
    )
}

fn compensation_fixed_point(params: &RbmParams) -> Outcome {
    let (n, m) = (params.n_visible(), params.n_hidden());
    let d = exact_distribution(params).unwrap();
    let n_samples = 1_000_000;
    let seed = 5;
    let floor = kl_joint(
        &EmpiricalDistribution::from_samples(&exact_sample(&d, n_samples, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap())
            .unwrap(),
        &d,
    )
    .unwrap();
    let per_bias = make_noise_model(
        &NoiseSpec {
            b_sigma: 0.5,
            c_sigma: 0.5,
            seed: 55,
            ..NoiseSpec::default()
        },
        n,
        m,
    )
    .unwrap();
    let cases = [
        ("one_parameter", BetaSet::OneParameter { beta_eff: 2.0 }, NoiseModel::uniform(n, m, 2.0).unwrap()),
        (
            "three_parameter",
            BetaSet::ThreeParameter {
                beta_vh: 6.8,
                beta_v: 7.0,
                beta_h: 4.5,
            },
            NoiseModel::blocks(n, m, 6.8, 7.0, 4.5).unwrap(),
        ),
        (
            "one_and_all_bias",
            BetaSet::OneAndAllBias {
                beta_vh: 6.8,
                beta_v: per_bias.beta_err_b().to_vec(),
                beta_h: per_bias.beta_err_c().to_vec(),
            },
            per_bias.clone(),
        ),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, beta, noise) in cases {
        let programmed = compensate(params, &beta).unwrap();
        let s = noisy_annealer_sample(&programmed, &noise, n_samples, &mut ChaCha8Rng::seed_from_u64(seed), Fidelity::Exact)
            .unwrap();
        let kl = kl_joint(&EmpiricalDistribution::from_samples(&s).unwrap(), &d).unwrap();
        pass &= kl <= 2.0 * floor;
        parts.push(format!("{label} {kl:.5}"));
    }
    outcome(pass, format!("KL {} vs exact-sampler floor {floor:.5} (limit 2x), N = {n_samples}", parts.join(", ")))
}

fn sweep_trends(params: &RbmParams, config: &ExperimentConfig) -> Outcome {
    let mut a = config.clone();
    a.sweep.weight_modes = vec![WeightNoiseMode::Constant];
    a.sweep.variants = vec![BetaVariant::OneAndAllBias];
    let ra = run_noise_sweep(&a, params).unwrap();
    let base = ra.baseline();
    let mut a_ok = true;
    let mut worst_z: f64 = 0.0;
    for &sigma in &a.sweep.sigmas {
        let c = ra.cell(WeightNoiseMode::Constant, sigma, BetaVariant::OneAndAllBias).unwrap();
        let sd = (c.std_kl.powi(2) + base.std_kl.powi(2)).sqrt();
        let z = (c.mean_kl - base.mean_kl).abs() / sd;
        worst_z = worst_z.max(z);
        a_ok &= z <= 2.0;
    }

    let mut b = config.clone();
    let max_sigma = config.sweep.sigmas.iter().copied().fold(f64::MIN, f64::max);
    b.sweep.weight_modes = vec![WeightNoiseMode::Gaussian];
    b.sweep.sigmas = vec![max_sigma];
    let rb = run_noise_sweep(&b, params).unwrap();
    let mean = |v| rb.cell(WeightNoiseMode::Gaussian, max_sigma, v).unwrap().mean_kl;
    let (one, three, oaab) = (
        mean(BetaVariant::OneParameter),
        mean(BetaVariant::ThreeParameter),
        mean(BetaVariant::OneAndAllBias),
    );
    let b_ok = oaab < three && three < one;
    outcome(
        a_ok && b_ok,
        format!(
            "bias-only noise: one_and_all_bias within {worst_z:.2} sigma of baseline {:.5} at worst (limit 2); \
             gaussian w-noise sigma={max_sigma}: one_and_all_bias {oaab:.4} < three {three:.4} < one {one:.4}; \
             {} repetitions",
            base.mean_kl, config.sweep.repetitions
        ),
    )
}

fn schedule_compliance(result: &ComparisonResult, unified: usize) -> (bool, String) {
    let mut ok = true;
    let mut notes = Vec::new();
    for run in result.runs.iter().filter(|r| {
        matches!(r.scheme, Scheme::Calibrated(BetaVariant::ThreeParameter | BetaVariant::OneAndAllBias))
    }) {
        let spread = |b: &BetaSet| {
            let c = b.components();
            let (lo, hi) = c.iter().fold((f64::MAX, f64::MIN), |(a, z), &x| (a.min(x), z.max(x)));
            (hi - lo) / hi.abs()
        };
        let entries = run.outcome.trace.entries();
        let equal = entries.iter().filter(|(e, _)| *e < unified).all(|(_, b)| spread(b) == 0.0);
        let diverged = entries.iter().filter(|(e, _)| *e >= unified).map(|(_, b)| spread(b)).fold(0.0, f64::max);
        ok &= equal && diverged > 1e-3;
        if !(equal && diverged > 1e-3) {
            notes.push(format!("{} seed {}", run.scheme.label(), run.seed));
        }
    }
    let detail = if notes.is_empty() {
        format!("trace components equal before epoch {unified} and spread after")
    } else {
        format!("trace schedule violated: {}", notes.join(", "))
    };
    (ok, detail)
}

fn training_trends(config: &ExperimentConfig) -> Outcome {
    let data = config.dataset.load().unwrap();
    let result = run_training_comparison(config, &data).unwrap();
    let med = |label: &str| result.summary.iter().find(|s| s.scheme == label).unwrap().median_min_kl;
    let (cd, gibbs, one, three, oaab) = (
        med("cd"),
        med("gibbs"),
        med("one_parameter"),
        med("three_parameter"),
        med("one_and_all_bias"),
    );
    let ordering = cd > one && one >= three && three >= oaab && oaab > gibbs;
    let min_kl = |scheme: Scheme, seed: u64| {
        result
            .runs
            .iter()
            .find(|r| r.scheme == scheme && r.seed == seed)
            .and_then(|r| r.outcome.record.min_kl())
            .unwrap()
            .1
    };
    let mut losses = Vec::new();
    for &seed in &config.comparison.seeds {
        let cd_kl = min_kl(Scheme::Cd, seed);
        for v in BetaVariant::ALL {
            if min_kl(Scheme::Calibrated(v), seed) >= cd_kl {
                losses.push(format!("{v} seed {seed}"));
            }
        }
    }
    let (schedule_ok, schedule_note) = schedule_compliance(&result, config.train.unified_update_epochs);
    let late = |v: BetaVariant| {
        let slopes: Vec<f64> = result
            .runs
            .iter()
            .filter(|r| r.scheme == Scheme::Calibrated(v))
            .map(|r| kl_slope(&r.outcome.record, config.train.unified_update_epochs).unwrap())
            .collect();
        median(&slopes)
    };
    outcome(
        ordering && losses.is_empty() && schedule_ok,
        format!(
            "median min KL cd {cd:.3} > one {one:.3} >= three {three:.3} >= one_and_all_bias {oaab:.3} > gibbs {gibbs:.3}: {}; \
             calibrated beat cd on every seed: {}; {schedule_note}; median late KL slope one {:.2e}, three {:.2e}, \
             one_and_all_bias {:.2e}; {} seeds",
            if ordering { "holds" } else { "violated" },
            if losses.is_empty() { "yes".to_string() } else { format!("no ({})", losses.join(", ")) },
            late(BetaVariant::OneParameter),
            late(BetaVariant::ThreeParameter),
            late(BetaVariant::OneAndAllBias),
            config.comparison.seeds.len()
        ),
    )
}

const SMALL_RUN: &str = r#"
seed = 11
[train]
epochs = 60
unified_update_epochs = 30
eta_theta = 0.5
eta_beta = 0.2
beta_step_scaling = { variance = { damping = 0.001 } }
annealer_samples_per_epoch = 2000
[sweep]
sigmas = [0.0, 1.0]
repetitions = 2
kl_samples = 200000
pretrain_epochs = 100
[sweep.estimation]
batch_samples = 20000
calls = 4
unified_calls = 1
[comparison]
seeds = [1, 2]
"#;

fn files_except_manifest(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().unwrap() != "manifest.json" {
                let name = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((name, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("small.toml");
    std::fs::write(&config, SMALL_RUN).unwrap();
    let out = tmp.path().join("out");
    let run = |name: &str, threads: &str, args: &[&str]| {
        let status = Command::new(env!("CARGO_BIN_EXE_rbm-calib"))
            .arg("--config")
            .arg(&config)
            .args(["--threads", threads, "--out"])
            .arg(&out)
            .args(args)
            .env("RUST_LOG", "warn")
            .status()
            .unwrap();
        assert!(status.success(), "{args:?}");
        let kept = tmp.path().join(name);
        std::fs::rename(&out, &kept).unwrap();
        files_except_manifest(&kept)
    };
    let mut mismatched = Vec::new();
    let mut compared = 0;
    for (tag, args) in [
        ("compare", vec!["train", "--compare"]),
        ("sweep", vec!["sweep-noise"]),
        ("quality", vec!["evaluate", "--sizes", "20000"]),
    ] {
        let first = run(&format!("{tag}_a"), "1", &args);
        let second = run(&format!("{tag}_b"), "3", &args);
        compared += first.len();
        if first.iter().map(|f| &f.0).ne(second.iter().map(|f| &f.0)) {
            mismatched.push(format!("{tag}: different file sets"));
            continue;
        }
        for ((name, a), (_, b)) in first.iter().zip(&second) {
            if a != b {
                mismatched.push(format!("{tag}/{name}"));
            }
        }
    }
    outcome(
        mismatched.is_empty() && compared > 0,
        if mismatched.is_empty() {
            format!("{compared} output files byte-identical across reruns (1 vs 3 worker threads)")
        } else {
            format!("differing outputs: {}", mismatched.join(", "))
        },
    )
}

fn run_check(index: usize, name: &str, limit: Duration, check: impl FnOnce() -> Outcome) -> bool {
    let started = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(check));
    let elapsed = started.elapsed();
    let (pass, detail) = match result {
        Ok(o) => (o.pass, o.detail),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    let in_time = elapsed <= limit;
    let verdict = if pass && in_time { "PASS" } else { "FAIL" };
    println!(
        "[{index}] {verdict} {name}: {detail}; runtime {:.1} s (limit {} s)",
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    pass && in_time
}

/// `cargo test --test acceptance -- 1 4` runs only the listed checks.
fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let only: Vec<usize> = args.iter().filter_map(|a| a.parse().ok()).collect();
    let selected = |k: usize| only.is_empty() || only.contains(&k);
    let sweep_config = ExperimentConfig::from_toml_str(SWEEP_CONFIG).unwrap();
    let comparison_config = ExperimentConfig::from_toml_str(COMPARISON_CONFIG).unwrap();
    let mut results = Vec::new();
    if selected(1) {
        results.push(run_check(1, "theta gradient vs finite differences", Duration::from_secs(10), theta_gradient_oracle));
    }
    if selected(2) {
        results.push(run_check(2, "beta gradient vs finite differences", Duration::from_secs(30), beta_gradient_oracle));
    }
    if selected(3) {
        results.push(run_check(3, "block Gibbs vs exact distribution", Duration::from_secs(60), gibbs_total_variation));
    }
    if (4..=6).any(selected) {
        let started = Instant::now();
        let model = desk_model(&sweep_config);
        println!("    pretrained the 12x6 test model in {:.1} s", started.elapsed().as_secs_f64());
        if selected(4) {
            results.push(run_check(4, "calibration recovery", Duration::from_secs(300), || {
                calibration_recovery(&model, &sweep_config)
            }));
        }
        if selected(5) {
            results.push(run_check(5, "compensation fixed point", Duration::from_secs(300), || {
                compensation_fixed_point(&model)
            }));
        }
        if selected(6) {
            results.push(run_check(6, "noise sweep trends", Duration::from_secs(30 * 60), || {
                sweep_trends(&model, &sweep_config)
            }));
        }
    }
    if selected(7) {
        results.push(run_check(7, "training comparison trends", Duration::from_secs(60 * 60), || {
            training_trends(&comparison_config)
        }));
    }
    if selected(8) {
        results.push(run_check(8, "rerun determinism", Duration::from_secs(600), determinism));
    }

    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}

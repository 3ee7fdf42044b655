//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits with status 1 if any criterion fails.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use haipw_cli::io::write_predictions;
use haipw_client::{
    collect_predictions, parse_response_bytes, CompletionProvider, CompletionRequest, ParsedResponse, PromptTemplate,
    ProviderConfig, ResponseCache, Scale, TransportError,
};
use haipw_core::bench::{self, BenchConfig, ReductionConfig, VarianceMetric};
use haipw_core::estimators::{
    aipw_counterfactual_mean, aipw_estimate, difference_in_means, haipw_estimate, ppi_plusplus_counterfactual,
    EstimationOptions,
};
use haipw_core::numerics::{self, SymmetricMatrix};
use haipw_core::outcome_models::fit_ridge;
use haipw_core::simulation::{
    excess_variance_check, generate, monte_carlo_runs, CovariateLaw, DgpConfig, MeanSpec, SyntheticModelSpec,
};
use haipw_core::{Arm, ArmPair, EstimateReport, EstimatorSpec, ExperimentDataset, OutcomePredictions, PredictionMatrix, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn check(id: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { id, pass, detail }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn random_dataset(rng: &mut ChaCha8Rng, exact_allocation: bool) -> ExperimentDataset {
    let n = rng.random_range(20..200);
    let d = rng.random_range(1..5);
    let units: Vec<Unit> = (0..n)
        .map(|i| {
            // The first four units fix both arms non-trivially.
            let treated = if i < 4 { i % 2 == 0 } else { rng.random::<f64>() < 0.4 };
            let covariates: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
            let y = 2.0 * covariates[0] + if treated { 1.0 } else { 0.0 } + normal(rng);
            Unit { id: format!("r{i:04}"), covariates, treatment: if treated { Arm::Treated } else { Arm::Control }, outcome: y }
        })
        .collect();
    let n1 = units.iter().filter(|u| u.treatment == Arm::Treated).count();
    let pi1 = if exact_allocation { n1 as f64 / n as f64 } else { 0.4 };
    ExperimentDataset::new(units, pi1).unwrap()
}

fn random_predictions(rng: &mut ChaCha8Rng, ds: &ExperimentDataset, k: usize) -> PredictionMatrix {
    let models = (0..k)
        .map(|j| {
            let bias = 3.0 * normal(rng);
            let noise = rng.random::<f64>() * 2.0;
            let values = ds
                .units()
                .iter()
                .map(|u| {
                    let base = 2.0 * u.covariates[0];
                    ArmPair::new(base + noise * normal(rng), base + 1.0 + bias + noise * normal(rng))
                })
                .collect();
            (format!("m{j}"), OutcomePredictions::for_dataset(ds, values).unwrap())
        })
        .collect();
    PredictionMatrix::from_models(models).unwrap()
}

fn ridge_hhat(ds: &ExperimentDataset, options: &EstimationOptions) -> OutcomePredictions {
    haipw_core::estimators::standard_aipw(ds, options).unwrap().1
}

/// `Σλ = 1` and `λᵀΣ̂λ ≤ min_j Σ̂_jj` for one H-AIPW report.
fn haipw_invariants(r: &EstimateReport) -> (f64, f64) {
    let w = r.weights.as_ref().expect("H-AIPW reports carry weights");
    let sum_err = (w.as_slice().iter().sum::<f64>() - 1.0).abs();
    let min_diag = r
        .diagnostics
        .iter()
        .filter(|(k, _)| k.starts_with("column_variance."))
        .map(|(_, v)| *v)
        .fold(f64::INFINITY, f64::min);
    (sum_err, r.variance_hat - min_diag)
}

fn within(elapsed: Duration, limit: Duration) -> bool {
    elapsed <= limit
}

fn linear_dgp(models: Vec<SyntheticModelSpec>) -> DgpConfig {
    DgpConfig {
        d: 3,
        covariate_law: CovariateLaw::StandardNormal,
        mean0: MeanSpec::Linear { intercept: 0.0, coefficients: vec![1.0, 0.5, -0.5] },
        mean1: MeanSpec::Linear { intercept: 1.0, coefficients: vec![1.5, 0.5, 0.0] },
        noise_sd: 1.0,
        pi1: 0.5,
        model_specs: models,
    }
}

fn quadratic_dgp(models: Vec<SyntheticModelSpec>) -> DgpConfig {
    DgpConfig {
        d: 3,
        covariate_law: CovariateLaw::StandardNormal,
        mean0: MeanSpec::Quadratic { intercept: 0.0, linear: vec![1.0, 0.0, 0.0], quadratic: vec![1.0, 0.5, 0.0] },
        mean1: MeanSpec::Quadratic { intercept: 1.0, linear: vec![1.0, 0.5, 0.0], quadratic: vec![2.0, 0.5, 0.5] },
        noise_sd: 1.0,
        pi1: 0.5,
        model_specs: models,
    }
}

fn identities(out: &mut Vec<Outcome>) {
    let options = EstimationOptions { folds: 5, ..Default::default() };

    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let ds = random_dataset(&mut rng, true);
        let zero = OutcomePredictions::constant(&ds, ArmPair::new(0.0, 0.0));
        let aipw = aipw_estimate(&ds, &zero, 0.05, "AIPW").unwrap().theta_hat;
        worst = worst.max((aipw - difference_in_means(&ds)).abs());
    }
    let t = start.elapsed();
    out.push(check(
        "1a",
        worst <= 1e-12 && within(t, Duration::from_secs(1)),
        format!("DM = AIPW(h=0) on 100 datasets: max |diff| = {worst:.2e} (tol 1e-12), {t:.2?} (limit 1 s)"),
    ));

    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let ds = random_dataset(&mut rng, true);
        let f: Vec<f64> = ds.units().iter().map(|u| u.covariates[0] * 1.7 + normal(&mut rng)).collect();
        let n0 = ds.arm_count(Arm::Control) as f64;
        let ppi = ppi_plusplus_counterfactual(&ds, &f, n0 / ds.len() as f64);
        worst = worst.max((ppi - aipw_counterfactual_mean(&ds, &f)).abs());
    }
    let t = start.elapsed();
    out.push(check(
        "1b",
        worst <= 1e-12 && within(t, Duration::from_secs(1)),
        format!("PPI++ at lambda = n0/n equals AIPW counterfactual mean on 100 datasets: max |diff| = {worst:.2e} (tol 1e-12), {t:.2?} (limit 1 s)"),
    ));

    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut sum_err, mut excess) = (0.0_f64, f64::NEG_INFINITY);
    for i in 0..100 {
        let ds = random_dataset(&mut rng, i % 2 == 0);
        let k = rng.random_range(1..5);
        let external = random_predictions(&mut rng, &ds, k);
        let hhat = ridge_hhat(&ds, &options);
        let r = haipw_estimate(&ds, &hhat, &external, &options.haipw()).unwrap();
        let (s, e) = haipw_invariants(&r);
        sum_err = sum_err.max(s);
        excess = excess.max(e);
    }
    let t = start.elapsed();
    out.push(check(
        "1c",
        sum_err <= 1e-12 && excess <= 1e-10 && within(t, Duration::from_secs(1)),
        format!("H-AIPW on 100 datasets: max |sum(lambda) - 1| = {sum_err:.2e} (tol 1e-12), max V - min diag = {excess:.2e} (tol 1e-10), {t:.2?} (limit 1 s)"),
    ));
}

fn excess_variance(out: &mut Vec<Outcome>) {
    let start = Instant::now();
    let dgp = linear_dgp(vec![]);
    let families = [
        SyntheticModelSpec::ConstantBias { bias: 2.0, arm: Some(Arm::Treated) },
        SyntheticModelSpec::SlopeBias { factor: 1.5 },
        SyntheticModelSpec::PureNoise { sd: 1.0 },
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, spec) in families.iter().enumerate() {
        let c = excess_variance_check(&dgp, spec, 1_000_000, 40 + i as u64).unwrap();
        let ok = (c.lhs - c.rhs).abs() <= 3.0 * c.se;
        pass &= ok;
        parts.push(format!("{}: lhs {:.4} rhs {:.4} se {:.4}", spec.name(), c.lhs, c.rhs, c.se));
        if i == 0 {
            let closed = 2.0_f64.powi(2) * (1.0 - dgp.pi1) / dgp.pi1;
            let ok = (c.rhs - closed).abs() <= 3.0 * c.se;
            pass &= ok;
            parts.push(format!("rhs vs b^2 pi0/pi1 = {closed}: |diff| {:.2e}", (c.rhs - closed).abs()));
        }
    }
    let t = start.elapsed();
    pass &= within(t, Duration::from_secs(60));
    out.push(check("2", pass, format!("excess variance, big_n = 1e6, |lhs - rhs| <= 3 se: {}; {t:.2?} (limit 60 s)", parts.join("; "))));
}

fn coverage_and_dominance(out: &mut Vec<Outcome>) {
    let options = EstimationOptions::default();
    let specs = [EstimatorSpec::Dm, EstimatorSpec::Aipw, EstimatorSpec::Haipw];
    let n = 200;
    let models = vec![SyntheticModelSpec::OraclePlusNoise { sd: 0.5 }, SyntheticModelSpec::ConstantBias { bias: 3.0, arm: None }];

    let start = Instant::now();
    let run = monte_carlo_runs(&linear_dgp(models), n, 2000, &specs, &options, 7).unwrap();
    let t = start.elapsed();
    let summary = run.summarize();
    let mut pass = within(t, Duration::from_secs(300));
    let mut parts = Vec::new();
    for label in ["DM", "AIPW", "H-AIPW"] {
        let c = summary.get(label).unwrap().coverage;
        pass &= (0.93..=0.97).contains(&c);
        parts.push(format!("{label} {c:.4}"));
    }
    let h = summary.get("H-AIPW").unwrap();
    let se = h.mc_standard_error(n);
    let bias = (h.mean_estimate - summary.true_ate).abs();
    pass &= bias <= 3.0 * se;
    out.push(check(
        "3",
        pass,
        format!(
            "coverage in [0.93, 0.97]: {}; H-AIPW |mean - ATE| = {bias:.4} vs 3 MC-SE = {:.4}; {t:.2?} (limit 300 s)",
            parts.join(", "),
            3.0 * se
        ),
    ));

    let (mut sum_err, mut excess) = (0.0_f64, f64::NEG_INFINITY);
    for reps in &run.repetitions {
        let (s, e) = haipw_invariants(reps.iter().find(|r| r.estimator == "H-AIPW").unwrap());
        sum_err = sum_err.max(s);
        excess = excess.max(e);
    }
    out.push(check(
        "1c-mc",
        sum_err <= 1e-12 && excess <= 1e-10,
        format!("H-AIPW over 2000 Monte Carlo fits: max |sum(lambda) - 1| = {sum_err:.2e}, max V - min diag = {excess:.2e}"),
    ));

    let ratio = |s: &haipw_core::simulation::McSummary| {
        s.get("H-AIPW").unwrap().empirical_variance_of_sqrt_n_theta / s.get("AIPW").unwrap().empirical_variance_of_sqrt_n_theta
    };
    let r = ratio(&summary);
    out.push(check("4a", r <= 1.02, format!("Var(H-AIPW)/Var(AIPW) with oracle+noise and biased models = {r:.4} (limit 1.02)")));

    let noisy = vec![SyntheticModelSpec::PureNoise { sd: 5.0 }, SyntheticModelSpec::ConstantBias { bias: 3.0, arm: None }];
    let s = monte_carlo_runs(&linear_dgp(noisy), n, 2000, &specs[1..], &options, 8).unwrap().summarize();
    let r = ratio(&s);
    out.push(check("4b", r <= 1.05, format!("Var(H-AIPW)/Var(AIPW) with pure_noise(5) and biased models = {r:.4} (limit 1.05)")));

    let s = monte_carlo_runs(&quadratic_dgp(vec![SyntheticModelSpec::Oracle]), 100, 2000, &specs[1..], &options, 9)
        .unwrap()
        .summarize();
    let r = ratio(&s);
    out.push(check(
        "4c",
        r <= 0.95,
        format!("quadratic mean, oracle model, n = 100: Var(H-AIPW)/Var(AIPW) = {r:.4} (at least 5% lower needs <= 0.95)"),
    ));
}

fn bench_consistency(out: &mut Vec<Outcome>) {
    let study = generate(&linear_dgp(vec![]), 2000, 17).unwrap();
    let options = EstimationOptions::default();
    let run = |metric| {
        let config = BenchConfig {
            n: 200,
            repetitions: 2000,
            alpha: 0.05,
            estimators: vec![EstimatorSpec::Dm],
            seed: 3,
            variance_metric: metric,
        };
        bench::run_bench(&study.dataset, &study.predictions, &config, &options).unwrap().rows[0].scaled_variance
    };
    let reported = run(VarianceMetric::Reported);
    let across = run(VarianceMetric::AcrossReps);
    let rel = (reported - across).abs() / across;
    out.push(check("5", rel <= 0.25, format!("DM scaled variance reported {reported:.4} vs across reps {across:.4}: relative gap {rel:.4} (limit 0.25)")));
}

fn reduction(out: &mut Vec<Outcome>) {
    let study = generate(&quadratic_dgp(vec![SyntheticModelSpec::Oracle]), 2000, 23).unwrap();
    let options = EstimationOptions::default();
    let config = ReductionConfig { n: 75, repetitions: 1000, baseline: EstimatorSpec::Aipw, seed: 5 };
    let with = bench::sample_size_reduction(&study.dataset, &study.predictions, &config, &options).unwrap();
    let without = bench::sample_size_reduction(&study.dataset, &PredictionMatrix::empty(&study.dataset), &config, &options).unwrap();
    out.push(check(
        "6",
        with.percent > 0.0 && without.percent == 0.0,
        format!("reduction with oracle model {:.2}% (n' = {}, must be > 0); with k = 0 {}% (must be exactly 0)", with.percent, with.n_haipw, without.percent),
    ));
}

fn random_spd(rng: &mut ChaCha8Rng, d: usize, condition: f64) -> SymmetricMatrix {
    // Q·diag(eigenvalues)·Qᵀ with Q from Gram–Schmidt on a Gaussian matrix.
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(d);
    while q.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
        for u in &q {
            let p = numerics::dot(&v, u);
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
        }
        let norm = numerics::dot(&v, &v).sqrt();
        if norm > 1e-8 {
            q.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    let eig: Vec<f64> = (0..d).map(|i| condition.powf(i as f64 / (d - 1).max(1) as f64)).collect();
    SymmetricMatrix::from_fn(d, |a, b| (0..d).map(|k| q[k][a] * eig[k] * q[k][b]).sum())
}

fn ridge_objective(x: &[Vec<f64>], y: &[f64], lambda: f64, intercept: f64, beta: &[f64]) -> f64 {
    let sse: f64 = x.iter().zip(y).map(|(r, yi)| (yi - intercept - numerics::dot(beta, r)).powi(2)).sum();
    sse + lambda * numerics::dot(beta, beta)
}

fn numerics_checks(out: &mut Vec<Outcome>) {
    let z = numerics::normal_quantile(0.975).unwrap();
    out.push(check("7a", (z - 1.959964).abs() <= 1e-6, format!("normal_quantile(0.975) = {z:.9} (target 1.959964 +- 1e-6)")));

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0_f64;
    for _ in 0..50 {
        let n = rng.random_range(10..60);
        let d = rng.random_range(1..6);
        let lambda = rng.random::<f64>() * 3.0;
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| normal(&mut rng)).collect()).collect();
        let y: Vec<f64> = x.iter().map(|r| r.iter().sum::<f64>() + normal(&mut rng)).collect();
        let m = fit_ridge(&x, &y, lambda).unwrap();
        let h = 1e-5;
        let mut params = vec![m.intercept];
        params.extend(&m.coefficients);
        for p in 0..params.len() {
            let eval = |shift: f64| {
                let mut q = params.clone();
                q[p] += shift;
                ridge_objective(&x, &y, lambda, q[0], &q[1..])
            };
            let grad = (eval(h) - eval(-h)) / (2.0 * h);
            worst = worst.max(grad.abs());
        }
    }
    out.push(check("7b", worst <= 1e-6, format!("ridge objective gradient at the fit by central differences on 50 problems: max |g| = {worst:.2e} (tol 1e-6)")));

    let mut rng = ChaCha8Rng::seed_from_u64(78);
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let d = rng.random_range(2..12);
        let condition = 10f64.powf(rng.random::<f64>() * 6.0);
        let m = random_spd(&mut rng, d, condition);
        let b: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
        let x = numerics::solve_spd(&m, &b).unwrap();
        let residual = m.mul_vec(&x).iter().zip(&b).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
        worst = worst.max(residual);
    }
    out.push(check("7c", worst <= 1e-10, format!("solve_spd on 100 SPD matrices with condition <= 1e6: max residual = {worst:.2e} (tol 1e-10)")));
}

/// Deterministic answers keyed on the full request text; about one in eight
/// is unusable.
struct ScriptedModel {
    calls: AtomicUsize,
}

impl CompletionProvider for ScriptedModel {
    fn complete(&self, request: &CompletionRequest) -> Result<String, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let mut h = DefaultHasher::new();
        (&request.system, &request.user).hash(&mut h);
        let v = h.finish();
        Ok(match v % 8 {
            0 => "I would rather not say.".into(),
            1 => format!("Probably around {}", 1 + v % 7),
            _ => format!(r#"{{"answer": {}}}"#, 1 + (v >> 8) % 7),
        })
    }
}

struct Offline {
    calls: AtomicUsize,
}

impl CompletionProvider for Offline {
    fn complete(&self, _: &CompletionRequest) -> Result<String, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Err(TransportError("network disabled".into()))
    }
}

fn client_checks(out: &mut Vec<Outcome>) {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let units: Vec<Unit> = (0..40)
        .map(|i| Unit {
            id: format!("p{i:02}"),
            covariates: vec![rng.random_range(18..80) as f64, rng.random_range(1..8) as f64],
            treatment: if i % 2 == 0 { Arm::Treated } else { Arm::Control },
            outcome: rng.random_range(1..8) as f64,
        })
        .collect();
    let ds = ExperimentDataset::new(units, 0.5).unwrap();
    let names = vec!["age".to_string(), "ideology".to_string()];
    let template = PromptTemplate {
        system_template: "You are {age} years old and place yourself at {ideology} on a 1 to 7 scale.".into(),
        treatment_text: "You read an article in favor of the policy.".into(),
        control_text: "You read an unrelated article.".into(),
        outcome_question: "How much do you support the policy, from 1 to 7?".into(),
        instruction_pool: (0..5).map(|k| format!("Answer in JSON with one key-value pair (variant {k}).")).collect(),
        scale: Scale { min: 1.0, max: 7.0, integer_valued: true },
    };
    let mut config = ProviderConfig::new("http://127.0.0.1:9/v1/chat/completions", "scripted");
    config.retry.initial_backoff_ms = 0;

    let collect = |provider: &dyn CompletionProvider, cache_name: &str, csv_name: &str| {
        let cache = ResponseCache::open(dir.path().join(cache_name)).unwrap();
        let collected = collect_predictions(&ds, &names, &template, provider, &config, 5, &cache, 11).unwrap();
        let path = dir.path().join(csv_name);
        write_predictions(&path, &collected.predictions).unwrap();
        (std::fs::read(path).unwrap(), collected.network_calls)
    };
    let live = ScriptedModel { calls: AtomicUsize::new(0) };
    let (first, _) = collect(&live, "a.jsonl", "a.csv");
    let (second, _) = collect(&live, "b.jsonl", "b.csv");
    let offline = Offline { calls: AtomicUsize::new(0) };
    let (warm, warm_calls) = collect(&offline, "a.jsonl", "c.csv");
    let offline_calls = offline.calls.load(Ordering::SeqCst);
    out.push(check(
        "8a",
        first == second && first == warm && warm_calls == 0 && offline_calls == 0,
        format!(
            "collection byte-identical across runs: {}; warm cache identical: {}; network calls with warm cache: {}",
            first == second,
            first == warm,
            warm_calls.max(offline_calls)
        ),
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let scales = [Scale { min: 1.0, max: 7.0, integer_valued: true }, Scale { min: 0.0, max: 10.0, integer_valued: false }];
    let alphabet = b"0123456789.-+eE{}[]\":, abcnul\n\tNaInf";
    let (mut crashes, mut bad, mut valid) = (0usize, 0usize, 0usize);
    for i in 0..100_000 {
        let len = rng.random_range(0..64);
        let bytes: Vec<u8> = if i % 2 == 0 {
            (0..len).map(|_| rng.random::<u8>()).collect()
        } else {
            (0..len).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect()
        };
        let scale = scales[i % 2];
        match catch_unwind(AssertUnwindSafe(|| parse_response_bytes(&bytes, &scale))) {
            Err(_) => crashes += 1,
            Ok(ParsedResponse::Valid(v)) => {
                valid += 1;
                let in_scale = v.is_finite() && v >= scale.min && v <= scale.max && (!scale.integer_valued || v.fract() == 0.0);
                if !in_scale {
                    bad += 1;
                }
            }
            Ok(ParsedResponse::Invalid(_)) => {}
        }
    }
    out.push(check(
        "8b",
        crashes == 0 && bad == 0,
        format!("parse fuzz on 1e5 byte strings: {crashes} crashes, {bad} out-of-scale values, {valid} valid answers"),
    ));
}

fn main() {
    std::panic::set_hook(Box::new(|_| {}));
    let mut outcomes = Vec::new();
    identities(&mut outcomes);
    numerics_checks(&mut outcomes);
    client_checks(&mut outcomes);
    let _ = std::panic::take_hook();
    excess_variance(&mut outcomes);
    coverage_and_dominance(&mut outcomes);
    bench_consistency(&mut outcomes);
    reduction(&mut outcomes);

    outcomes.sort_by(|a, b| a.id.cmp(b.id));
    let mut failed = 0;
    for o in &outcomes {
        println!("{} [{}] {}", if o.pass { "PASS" } else { "FAIL" }, o.id, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", outcomes.len() - failed, outcomes.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

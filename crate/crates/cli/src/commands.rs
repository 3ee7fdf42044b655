use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use haipw_client::{collect_predictions, HttpProvider, PromptTemplate, ResponseCache};
use haipw_core::bench::{self, BenchConfig, ReductionConfig};
use haipw_core::estimators::{run_estimators, EstimationOptions};
use haipw_core::simulation::{self, McSummary};
use haipw_core::{EstimatorSpec, PredictionMatrix};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::io::{load_predictions, load_study, write_predictions, LoadedStudy};
use crate::report::{self, ReportFormat};

/// Everything a subcommand needs after flags and config are merged.
pub struct Context {
    pub config: RunConfig,
    pub seed: u64,
    /// The `--seed` flag, which outranks every seed in the config.
    pub seed_flag: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: ReportFormat,
    pub warnings: Vec<String>,
}

impl Context {
    pub fn options(&self) -> EstimationOptions {
        self.config.estimator.options(self.seed)
    }

    fn study(&mut self) -> Result<LoadedStudy, CliError> {
        let section = self.config.study.as_ref().ok_or_else(|| CliError::Config("config has no \"study\" section".into()))?;
        let study = load_study(&section.path, section.pi1)?;
        self.warnings.extend(study.warnings.iter().cloned());
        Ok(study)
    }

    fn predictions(&self, study: &LoadedStudy) -> Result<PredictionMatrix, CliError> {
        let Some(section) = &self.config.predictions else {
            return Ok(PredictionMatrix::empty(&study.dataset));
        };
        let matrix = load_predictions(&section.path, &study.dataset)?;
        match &section.models {
            Some(models) => matrix.subset(models).map_err(|m| CliError::Schema(format!("unknown model {m:?} in predictions.models"))),
            None => Ok(matrix),
        }
    }

    /// Drops estimators that need an external model when none is loaded.
    fn usable(&mut self, specs: &[EstimatorSpec], predictions: &PredictionMatrix) -> Vec<EstimatorSpec> {
        if predictions.num_models() > 0 {
            return specs.to_vec();
        }
        let mut kept = Vec::new();
        for &s in specs {
            if s.needs_external_model() {
                self.warnings.push(format!("WARNING: skipping {} because no external predictions were loaded", s.label()));
            } else {
                kept.push(s);
            }
        }
        kept
    }

    fn finish(&self, command: &str, body: &str) -> Result<(), CliError> {
        for w in &self.warnings {
            eprintln!("{w}");
        }
        report::emit(body, self.out.as_deref())?;
        if let Some(out) = &self.out {
            report::write_sidecar(out, command, self.seed, &self.warnings)?;
        }
        Ok(())
    }
}

pub fn estimate(ctx: &mut Context) -> Result<(), CliError> {
    let study = ctx.study()?;
    let predictions = ctx.predictions(&study)?;
    let mut specs = ctx.config.estimator.estimators.clone();
    if !specs.contains(&EstimatorSpec::Aipw) {
        specs.insert(0, EstimatorSpec::Aipw);
    }
    let specs = ctx.usable(&specs, &predictions);
    let reports = run_estimators(&study.dataset, &predictions, &specs, &ctx.options())?;
    let body = report::render_estimates(&reports, ctx.format)?;
    ctx.finish("estimate", &body)
}

pub fn bench(ctx: &mut Context) -> Result<(), CliError> {
    let section = ctx.config.bench.clone().ok_or_else(|| CliError::Config("config has no \"bench\" section".into()))?;
    let study = ctx.study()?;
    let predictions = ctx.predictions(&study)?;
    let seed = ctx.seed_flag.or(section.seed).unwrap_or(ctx.seed);
    let requested = section.estimators.clone().unwrap_or_else(|| ctx.config.estimator.estimators.clone());
    let specs = ctx.usable(&requested, &predictions);
    let options = ctx.options();
    let mut reports = Vec::new();
    for n in section.n.to_vec() {
        let config = BenchConfig {
            n,
            repetitions: section.repetitions,
            alpha: options.alpha,
            estimators: specs.clone(),
            seed,
            variance_metric: section.variance_metric,
        };
        reports.push(bench::run_bench(&study.dataset, &predictions, &config, &options)?);
    }
    let mut mse = BTreeMap::new();
    for name in predictions.model_names() {
        mse.insert(name.clone(), bench::model_mse(&study.dataset, &predictions, name)?);
    }
    let body = match ctx.format {
        ReportFormat::Json => report::to_json_text(&report::versioned(json!({
            "ground_truth_proxy": bench::ground_truth_proxy(&study.dataset)?,
            "full_n": study.dataset.len(),
            "model_mse": mse,
            "reports": reports,
        })))?,
        ReportFormat::Markdown => {
            let mut text = bench::markdown_table(&reports);
            if !mse.is_empty() {
                text.push_str("\n| Model | MSE |\n|---|---:|\n");
                for (name, v) in &mse {
                    let _ = writeln!(text, "| {name} | {v:.4} |");
                }
            }
            text
        }
    };
    ctx.finish("bench", &body)
}

fn summary_markdown(summary: &McSummary) -> String {
    let mut out = String::from("| Estimator | mean θ̂ | n·Var(θ̂) | mean V̂ | coverage | mean CI width |\n|---|---:|---:|---:|---:|---:|\n");
    for s in &summary.estimators {
        let _ = writeln!(
            out,
            "| {} | {:.4} | {:.4} | {:.4} | {:.3} | {:.4} |",
            s.estimator, s.mean_estimate, s.empirical_variance_of_sqrt_n_theta, s.mean_reported_variance, s.coverage, s.mean_ci_width
        );
    }
    out
}

pub fn simulate(ctx: &mut Context) -> Result<(), CliError> {
    let dgp = ctx.config.dgp.clone().ok_or_else(|| CliError::Config("config has no \"dgp\" section".into()))?;
    let section = ctx.config.simulate.clone().ok_or_else(|| CliError::Config("config has no \"simulate\" section".into()))?;
    let requested = section.estimators.clone().unwrap_or_else(|| ctx.config.estimator.estimators.clone());
    let specs: Vec<EstimatorSpec> = if dgp.model_specs.is_empty() {
        let empty = PredictionMatrix::new(vec![], vec![], vec![])?;
        ctx.usable(&requested, &empty)
    } else {
        requested
    };
    let summary = simulation::monte_carlo(&dgp, section.n, section.repetitions, &specs, &ctx.options(), ctx.seed)?;
    let excess = match &section.excess_variance {
        Some(ev) => Some(simulation::excess_variance_check(&dgp, &ev.hhat, ev.big_n, ctx.seed)?),
        None => None,
    };
    let body = match ctx.format {
        ReportFormat::Json => report::to_json_text(&report::versioned(json!({
            "true_ate": dgp.true_ate(),
            "summary": summary,
            "excess_variance": excess,
        })))?,
        ReportFormat::Markdown => {
            let mut text = summary_markdown(&summary);
            if let Some(c) = excess {
                let _ = write!(text, "\nExcess variance: lhs = {:.6}, rhs = {:.6}, se = {:.6}\n", c.lhs, c.rhs, c.se);
            }
            text
        }
    };
    ctx.finish("simulate", &body)
}

pub fn reduce(ctx: &mut Context) -> Result<(), CliError> {
    let section = ctx.config.reduce.clone().ok_or_else(|| CliError::Config("config has no \"reduce\" section".into()))?;
    let study = ctx.study()?;
    let predictions = ctx.predictions(&study)?;
    let options = ctx.options();
    let mut results = Vec::new();
    for n in section.n.to_vec() {
        let config = ReductionConfig { n, repetitions: section.repetitions, baseline: section.baseline, seed: ctx.seed };
        results.push(bench::sample_size_reduction(&study.dataset, &predictions, &config, &options)?);
    }
    let body = match ctx.format {
        ReportFormat::Json => report::to_json_text(&report::versioned(json!({
            "baseline": section.baseline.label(),
            "reductions": results,
        })))?,
        ReportFormat::Markdown => {
            let mut text = String::from("| n | baseline mean width | n (H-AIPW) | reduction % |\n|---:|---:|---:|---:|\n");
            for r in &results {
                let _ = writeln!(text, "| {} | {:.4} | {} | {:.1} |", r.n, r.baseline_mean_width, r.n_haipw, r.percent);
            }
            text
        }
    };
    ctx.finish("reduce", &body)
}

pub fn load_template(path: &std::path::Path) -> Result<PromptTemplate, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn predict(ctx: &mut Context) -> Result<(), CliError> {
    let section = ctx.config.predict.clone().ok_or_else(|| CliError::Config("config has no \"predict\" section".into()))?;
    let out = ctx.out.clone().ok_or_else(|| CliError::Usage("predict needs --out for the predictions file".into()))?;
    let study = ctx.study()?;
    let template = load_template(&section.template)?;
    template.validate(&study.covariate_names)?;
    let cache = ResponseCache::open(&section.cache)?;
    let provider = HttpProvider::from_config(&section.provider)?;
    let collected = collect_predictions(
        &study.dataset,
        &study.covariate_names,
        &template,
        &provider,
        &section.provider,
        section.prompts_per_unit,
        &cache,
        ctx.seed,
    )?;
    write_predictions(&out, &collected.predictions)?;
    for w in &ctx.warnings {
        eprintln!("{w}");
    }
    report::write_sidecar(&out, "predict", ctx.seed, &ctx.warnings)
}

pub fn validate(ctx: &mut Context) -> Result<(), CliError> {
    let mut checks: Vec<Value> = vec![json!({"check": "config", "ok": true})];
    if ctx.config.study.is_some() {
        let study = ctx.study()?;
        checks.push(json!({"check": "study", "ok": true, "units": study.dataset.len(), "covariates": study.covariate_names, "pi1": study.dataset.pi1()}));
        if ctx.config.predictions.is_some() {
            let p = ctx.predictions(&study)?;
            checks.push(json!({"check": "predictions", "ok": true, "models": p.model_names()}));
        }
        if let Some(section) = &ctx.config.predict {
            let template = load_template(&section.template)?;
            template.validate(&study.covariate_names)?;
            section.provider.validate()?;
            checks.push(json!({"check": "prompt_template", "ok": true}));
        }
    }
    if let Some(dgp) = &ctx.config.dgp {
        dgp.validate()?;
        checks.push(json!({"check": "dgp", "ok": true, "true_ate": dgp.true_ate()}));
    }
    let body = report::to_json_text(&report::versioned(json!({"valid": true, "checks": checks})))?;
    ctx.finish("validate", &body)
}

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributed::{ddp_srgd, partition};
use crate::error::{invalid, Error, Result};
use crate::objectives::{loss_value, smoothness_bound, Dataset, ModelParams, Objective};
use crate::optimizer::{dp_gd, dp_sgd, dp_srgd, spider, BaselineNoise, RunOptions, RunOutput};
use crate::privacy::{
    derive_distributed_plan, derive_plan, distributed_hyperparams, theoretical_hyperparams, NoisePlan, PrivacyBudget,
};
use crate::rng::{stream, Purpose};
use crate::secure_agg::{MessageCounters, DEFAULT_FRAC_BITS};

use super::data::{gen_synthetic, infer_libsvm_dim, load_libsvm};
use super::evaluate;

pub const SUMMARY_FORMAT_VERSION: u32 = 1;

/// Iterations used by DP-GD when none are given.
pub const DEFAULT_DP_GD_ITERATIONS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    DpSrgd,
    DdpSrgd,
    DpGd,
    DpSgd,
    Spider,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dp-srgd" => Ok(Self::DpSrgd),
            "ddp-srgd" => Ok(Self::DdpSrgd),
            "dp-gd" => Ok(Self::DpGd),
            "dp-sgd" => Ok(Self::DpSgd),
            "spider" => Ok(Self::Spider),
            _ => invalid(format!(
                "unknown algorithm {s:?} (dp-srgd, ddp-srgd, dp-gd, dp-sgd, spider)"
            )),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::DpSrgd => "dp-srgd",
            Self::DdpSrgd => "ddp-srgd",
            Self::DpGd => "dp-gd",
            Self::DpSgd => "dp-sgd",
            Self::Spider => "spider",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSource {
    /// Sparse text files. `dim` is inferred from the training file when absent.
    Files {
        train: PathBuf,
        test: Option<PathBuf>,
        dim: Option<usize>,
    },
    Synthetic {
        n_train: usize,
        n_test: usize,
        dim: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub algorithm: Algorithm,
    pub epsilon: f64,
    pub delta: f64,
    pub beta: f64,
    pub clip: f64,
    pub lambda: f64,
    pub smoothness_l: Option<f64>,
    pub d_f: Option<f64>,
    pub iterations: Option<usize>,
    pub epoch_len: Option<usize>,
    /// Minibatch size; the mean per-party batch for distributed runs.
    pub batch_size: Option<usize>,
    pub zeta: Option<f64>,
    pub parties: usize,
    pub seeds: Vec<u64>,
    pub out_dir: Option<PathBuf>,
    pub frac_bits: u32,
    pub step_scale: f64,
    /// Rescale features so the largest example norm is 1 (changes the default `L`).
    pub scale_features: bool,
    pub allow_uncertified: bool,
    pub trace_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Synthetic {
                n_train: 1000,
                n_test: 1000,
                dim: 10,
                seed: 0,
            },
            algorithm: Algorithm::DpSrgd,
            epsilon: 0.5,
            delta: 1e-5,
            beta: PrivacyBudget::DEFAULT_BETA,
            clip: 2.0,
            lambda: 0.001,
            smoothness_l: None,
            d_f: None,
            iterations: None,
            epoch_len: None,
            batch_size: None,
            zeta: None,
            parties: 1,
            seeds: vec![0],
            out_dir: None,
            frac_bits: DEFAULT_FRAC_BITS,
            step_scale: 1.0,
            scale_features: false,
            allow_uncertified: false,
            trace_every: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return invalid("at least one seed is required");
        }
        PrivacyBudget::new(self.epsilon, self.delta, self.beta)?;
        if !(self.clip > 0.0) || !self.clip.is_finite() {
            return invalid(format!("clip threshold must be finite and > 0, got {}", self.clip));
        }
        if self.parties == 0 {
            return invalid("parties must be >= 1");
        }
        if self.parties > 1 && self.algorithm != Algorithm::DdpSrgd {
            return invalid(format!("--parties applies only to ddp-srgd, not {}", self.algorithm));
        }
        Ok(())
    }

    pub fn budget(&self) -> Result<PrivacyBudget> {
        PrivacyBudget::new(self.epsilon, self.delta, self.beta)
    }
}

/// Training and test data after loading and optional scaling.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub train: Dataset,
    pub test: Option<Dataset>,
    /// Divisor applied to every feature vector when scaling was requested.
    pub feature_scale: Option<f64>,
}

pub fn load_data(config: &ExperimentConfig) -> Result<LoadedData> {
    let (mut train, mut test) = match &config.data {
        DataSource::Files { train, test, dim } => {
            let dim = match dim {
                Some(d) => *d,
                None => infer_libsvm_dim(train)?,
            };
            let tr = load_libsvm(train, dim)?;
            let te = test.as_ref().map(|p| load_libsvm(p, dim)).transpose()?;
            (tr, te)
        }
        DataSource::Synthetic {
            n_train,
            n_test,
            dim,
            seed,
        } => {
            // One draw split in two so train and test share the blob geometry.
            let all = gen_synthetic(n_train + n_test, *dim, *seed)?;
            let train = all.subset(&(0..*n_train).collect::<Vec<_>>())?;
            let test = if *n_test > 0 {
                Some(all.subset(&(*n_train..n_train + n_test).collect::<Vec<_>>())?)
            } else {
                None
            };
            (train, test)
        }
    };
    let feature_scale = if config.scale_features {
        let s = train.scale_to_unit_max_norm();
        if let Some(t) = test.as_mut() {
            t.divide_features(s);
        }
        Some(s)
    } else {
        None
    };
    Ok(LoadedData {
        train,
        test,
        feature_scale,
    })
}

/// Everything a run needs besides the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedRun {
    pub objective: Objective,
    pub d_f: f64,
    /// Plan for the recursive methods (DP-SRGD, DDP-SRGD). For SPIDER it only fixes
    /// the schedule; its noise is ignored.
    pub plan: Option<NoisePlan>,
    pub iterations: usize,
    pub batch_size: usize,
    pub step_rule: String,
}

pub fn resolve(config: &ExperimentConfig, train: &Dataset) -> Result<ResolvedRun> {
    config.validate()?;
    let budget = config.budget()?;
    let n = train.len();
    let d = train.dim();
    let l_smooth = config
        .smoothness_l
        .unwrap_or_else(|| smoothness_bound(train, config.lambda));
    let objective = Objective::new(config.lambda, config.clip, l_smooth)?;
    let d_f = match config.d_f {
        Some(v) => v,
        None => loss_value(&ModelParams::zeros(d), train, config.lambda)?,
    };
    let g = objective.lipschitz_g;
    let recursive_rule = "eta_t = min(zeta / (L |v_p|), step_scale / (2L))".to_string();
    let constant_rule = "eta = step_scale / (2L)".to_string();
    match config.algorithm {
        Algorithm::DpSrgd | Algorithm::Spider => {
            let hp = theoretical_hyperparams(n, d, g, l_smooth, d_f, budget)?;
            let iterations = config.iterations.unwrap_or(hp.iterations);
            let batch = config.batch_size.unwrap_or(hp.batch_size);
            let epoch_len = config.epoch_len.unwrap_or(hp.epoch_len).min(iterations);
            let zeta = config.zeta.unwrap_or(hp.zeta);
            let plan = derive_plan(n, batch, epoch_len, iterations, g, zeta, budget)?;
            if config.algorithm == Algorithm::DpSrgd && !plan.is_certified() && !config.allow_uncertified {
                return Err(Error::InfeasiblePlan(plan.violations()));
            }
            Ok(ResolvedRun {
                objective,
                d_f,
                plan: Some(plan),
                iterations,
                batch_size: batch,
                step_rule: recursive_rule,
            })
        }
        Algorithm::DdpSrgd => {
            let m = config.parties;
            let n_tilde = n / m;
            if n_tilde == 0 {
                return invalid(format!("{m} parties exceed the {n} training examples"));
            }
            let hp = distributed_hyperparams(m, n_tilde, d, g, l_smooth, d_f, budget)?;
            let iterations = config.iterations.unwrap_or(hp.iterations);
            let b_bar = config.batch_size.unwrap_or(hp.mean_batch);
            let epoch_len = config.epoch_len.unwrap_or(hp.epoch_len).min(iterations);
            let zeta = config.zeta.unwrap_or(hp.zeta);
            let plan = derive_distributed_plan(m, n_tilde, b_bar, epoch_len, iterations, g, zeta, budget)?;
            if !plan.is_certified() && !config.allow_uncertified {
                return Err(Error::InfeasiblePlan(plan.violations()));
            }
            Ok(ResolvedRun {
                objective,
                d_f,
                plan: Some(plan),
                iterations,
                batch_size: m * b_bar,
                step_rule: recursive_rule,
            })
        }
        Algorithm::DpGd => Ok(ResolvedRun {
            objective,
            d_f,
            plan: None,
            iterations: config.iterations.unwrap_or(DEFAULT_DP_GD_ITERATIONS),
            batch_size: n,
            step_rule: constant_rule,
        }),
        Algorithm::DpSgd => {
            let hp = theoretical_hyperparams(n, d, g, l_smooth, d_f, budget)?;
            Ok(ResolvedRun {
                objective,
                d_f,
                plan: None,
                iterations: config.iterations.unwrap_or(hp.iterations),
                batch_size: config.batch_size.unwrap_or(hp.batch_size),
                step_rule: constant_rule,
            })
        }
    }
}

/// Run one seed of a resolved configuration.
pub fn run_seed(config: &ExperimentConfig, resolved: &ResolvedRun, train: &Dataset, seed: u64) -> Result<RunOutput> {
    let opts = RunOptions {
        seed,
        theta0: None,
        allow_uncertified: config.allow_uncertified,
        step_scale: config.step_scale,
        trace_every: config.trace_every,
        keep_iterates: false,
    };
    let obj = &resolved.objective;
    let budget = config.budget()?;
    match config.algorithm {
        Algorithm::DpSrgd => dp_srgd(obj, train, plan_of(resolved)?, &opts),
        Algorithm::Spider => {
            let p = plan_of(resolved)?;
            spider(obj, train, p.iterations, p.epoch_len, p.batch_size, p.zeta, &opts)
        }
        Algorithm::DdpSrgd => {
            let p = plan_of(resolved)?;
            let parts = partition(train, config.parties, &mut stream(seed, Purpose::Partition, 0))?;
            ddp_srgd(&parts.parties, obj, p, config.frac_bits, &opts)
        }
        Algorithm::DpGd => dp_gd(obj, train, budget, resolved.iterations, &opts),
        Algorithm::DpSgd => dp_sgd(obj, train, budget, resolved.iterations, resolved.batch_size, &opts),
    }
}

fn plan_of(resolved: &ResolvedRun) -> Result<&NoisePlan> {
    resolved
        .plan
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("run has no plan".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Training loss at the released iterate.
    pub final_train_loss: f64,
    /// Test error of the released iterate; absent without a test set.
    pub test_error: Option<f64>,
    /// Test error of the last iterate (reported alongside, not released by the method).
    pub test_error_last: Option<f64>,
    pub mean_grad_norm: f64,
    pub grad_evals: u64,
    pub data_passes: f64,
    pub eps_spent: f64,
    pub uncertified_events: bool,
    pub output_index: usize,
    pub wall_ms: f64,
    pub messages: Option<MessageCounters>,
    pub trace_file: Option<PathBuf>,
    /// The released iterate.
    pub theta_out: ModelParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (zero for a single value).
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub seeds: usize,
    pub final_train_loss: MeanStd,
    pub test_error: Option<MeanStd>,
    pub test_error_last: Option<MeanStd>,
    pub mean_grad_norm: MeanStd,
    pub grad_evals: MeanStd,
    pub eps_spent: MeanStd,
    pub wall_ms: MeanStd,
}

impl Aggregate {
    pub fn from_seeds(results: &[SeedResult]) -> Self {
        let col = |f: &dyn Fn(&SeedResult) -> f64| MeanStd::of(&results.iter().map(f).collect::<Vec<_>>());
        let opt_col = |f: &dyn Fn(&SeedResult) -> Option<f64>| {
            results
                .iter()
                .map(f)
                .collect::<Option<Vec<_>>>()
                .filter(|v| !v.is_empty())
                .map(|v| MeanStd::of(&v))
        };
        Self {
            seeds: results.len(),
            final_train_loss: col(&|r| r.final_train_loss),
            test_error: opt_col(&|r| r.test_error),
            test_error_last: opt_col(&|r| r.test_error_last),
            mean_grad_norm: col(&|r| r.mean_grad_norm),
            grad_evals: col(&|r| r.grad_evals as f64),
            eps_spent: col(&|r| r.eps_spent),
            wall_ms: col(&|r| r.wall_ms),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub format_version: u32,
    /// Trace files use the fixed CSV header of [`crate::optimizer::TRACE_HEADER`].
    pub trace_format_version: u32,
    pub config: ExperimentConfig,
    pub n_train: usize,
    pub n_test: Option<usize>,
    pub dim: usize,
    pub feature_scale: Option<f64>,
    pub objective: Objective,
    pub d_f: f64,
    pub plan: Option<NoisePlan>,
    pub baseline: Option<BaselineNoise>,
    pub step_rule: String,
    pub per_seed: Vec<SeedResult>,
    pub aggregate: Aggregate,
    pub failures: Vec<SeedFailure>,
    pub wall_ms: f64,
}

impl RunSummary {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_json()?)?;
        Ok(())
    }
}

fn seed_result(
    seed: u64,
    out: &RunOutput,
    train: &Dataset,
    test: Option<&Dataset>,
    lambda: f64,
    wall_ms: f64,
    trace_file: Option<PathBuf>,
) -> Result<SeedResult> {
    Ok(SeedResult {
        seed,
        final_train_loss: loss_value(&out.theta_out, train, lambda)?,
        test_error: test.map(|t| evaluate(&out.theta_out, t)).transpose()?,
        test_error_last: test.map(|t| evaluate(&out.theta_last, t)).transpose()?,
        mean_grad_norm: out.trace.mean_grad_norm(),
        grad_evals: out.trace.grad_evals,
        data_passes: out.trace.grad_evals as f64 / train.len() as f64,
        eps_spent: out.trace.last().map_or(f64::NAN, |r| r.eps_spent),
        uncertified_events: out.ledger.as_ref().is_some_and(|l| l.has_uncertified_events()),
        output_index: out.output_index,
        wall_ms,
        messages: out.messages,
        trace_file,
        theta_out: out.theta_out.clone(),
    })
}

/// Run every seed (concurrently), write one trace CSV per seed and `summary.json` into
/// the output directory when one is configured.
///
/// Seeds that fail are listed in the summary, which is still written; the first
/// failure is then returned as the error.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunSummary> {
    let start = Instant::now();
    config.validate()?;
    let data = load_data(config)?;
    let resolved = resolve(config, &data.train)?;
    if let Some(dir) = &config.out_dir {
        fs::create_dir_all(dir)?;
    }
    let outcomes: Vec<(u64, Result<(SeedResult, Option<BaselineNoise>)>)> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let result = (|| {
                let t0 = Instant::now();
                let out = run_seed(config, &resolved, &data.train, seed)?;
                let wall_ms = t0.elapsed().as_secs_f64() * 1e3;
                let trace_file = match &config.out_dir {
                    Some(dir) => {
                        let path = dir.join(format!("trace_seed{seed}.csv"));
                        out.trace.write_csv(fs::File::create(&path)?)?;
                        Some(path)
                    }
                    None => None,
                };
                let r = seed_result(
                    seed,
                    &out,
                    &data.train,
                    data.test.as_ref(),
                    config.lambda,
                    wall_ms,
                    trace_file,
                )?;
                Ok((r, out.baseline))
            })();
            (seed, result)
        })
        .collect();

    let mut per_seed = Vec::new();
    let mut failures = Vec::new();
    let mut first_error = None;
    let mut baseline = None;
    for (seed, outcome) in outcomes {
        match outcome {
            Ok((r, b)) => {
                baseline = baseline.or(b);
                per_seed.push(r);
            }
            Err(e) => {
                failures.push(SeedFailure {
                    seed,
                    error: e.to_string(),
                });
                first_error.get_or_insert(e);
            }
        }
    }
    let summary = RunSummary {
        format_version: SUMMARY_FORMAT_VERSION,
        trace_format_version: 1,
        config: config.clone(),
        n_train: data.train.len(),
        n_test: data.test.as_ref().map(Dataset::len),
        dim: data.train.dim(),
        feature_scale: data.feature_scale,
        objective: resolved.objective,
        d_f: resolved.d_f,
        plan: resolved.plan.clone(),
        baseline,
        step_rule: resolved.step_rule.clone(),
        aggregate: Aggregate::from_seeds(&per_seed),
        per_seed,
        failures,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    if let Some(dir) = &config.out_dir {
        summary.write(dir.join("summary.json"))?;
    }
    match first_error {
        Some(e) => Err(e),
        None => Ok(summary),
    }
}

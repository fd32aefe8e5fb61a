//! `dpsrgd` command-line tool.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 infeasible plan, 3 parse error,
//! 4 numeric or range error.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dpsrgd::harness::{
    evaluate, gen_synthetic, infer_libsvm_dim, load_libsvm, run_experiment, write_libsvm, Algorithm, DataSource,
    ExperimentConfig, RunSummary,
};
use dpsrgd::objectives::{loss_value, smoothness_bound, ModelParams};
use dpsrgd::privacy::{
    alpha_grid, derive_distributed_plan, derive_plan, distributed_hyperparams, gaussian_rdp, privacy_alpha, rdp_to_dp,
    subsampled_gaussian_rdp, subsampled_gaussian_rdp_envelope, theoretical_hyperparams, PrivacyBudget,
};
use dpsrgd::secure_agg::DEFAULT_FRAC_BITS;
use dpsrgd::Error;

#[derive(Parser)]
#[command(name = "dpsrgd", version, about = "Private recursive gradient descent experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print a calibrated noise plan, or diagnose why it is infeasible.
    Calibrate(CalibrateArgs),
    /// Centralized training run over one or more seeds.
    Train(TrainArgs),
    /// Distributed training run over `--parties` simulated parties.
    TrainDist(TrainArgs),
    /// Renyi-DP arithmetic for repeated Gaussian releases.
    Account(AccountArgs),
    /// Write a synthetic two-class dataset in sparse text format.
    GenData(GenDataArgs),
    /// Test error of a parameter vector on a dataset.
    Eval(EvalArgs),
}

#[derive(Args, Clone)]
struct BudgetArgs {
    #[arg(long, default_value_t = 0.5)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
    #[arg(long, default_value_t = PrivacyBudget::DEFAULT_BETA)]
    beta: f64,
}

impl BudgetArgs {
    fn budget(&self) -> dpsrgd::Result<PrivacyBudget> {
        PrivacyBudget::new(self.epsilon, self.delta, self.beta)
    }
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    budget: BudgetArgs,
    /// Training set; fills in n, d, L and D_F and the theoretical hyperparameters.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    /// Number of training examples (when no dataset is given).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epoch_len: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    zeta: Option<f64>,
    /// Clip threshold, which is also the Lipschitz bound G.
    #[arg(long, default_value_t = 2.0)]
    clip: f64,
    #[arg(long, default_value_t = 0.001)]
    lambda: f64,
    #[arg(long)]
    smoothness: Option<f64>,
    #[arg(long)]
    d_f: Option<f64>,
    #[arg(long, default_value_t = 1)]
    parties: usize,
    /// Print the plan and exit 0 even if the subsampling conditions fail.
    #[arg(long)]
    allow_uncertified: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    budget: BudgetArgs,
    /// Training file in sparse text format. Without it, synthetic data is used.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    test_dataset: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    synthetic_n: usize,
    #[arg(long, default_value_t = 10)]
    synthetic_dim: usize,
    #[arg(long, default_value = "dp-srgd")]
    algo: String,
    #[arg(long, default_value_t = 2.0)]
    clip: f64,
    #[arg(long, default_value_t = 0.001)]
    lambda: f64,
    #[arg(long)]
    smoothness: Option<f64>,
    #[arg(long)]
    d_f: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    epoch_len: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long, default_value_t = 1)]
    parties: usize,
    /// Comma-separated list of seeds.
    #[arg(long, default_value = "0", value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_FRAC_BITS)]
    frac_bits: u32,
    #[arg(long, default_value_t = 1.0)]
    step_scale: f64,
    #[arg(long)]
    scale_features: bool,
    #[arg(long)]
    allow_uncertified: bool,
    #[arg(long, default_value_t = 0)]
    trace_every: usize,
}

#[derive(Args)]
struct AccountArgs {
    #[arg(long)]
    sensitivity: f64,
    #[arg(long)]
    sigma_sq: f64,
    #[arg(long, default_value_t = 1)]
    steps: usize,
    /// Subsampling rate; omitted means no subsampling.
    #[arg(long)]
    tau: Option<f64>,
    /// Renyi order; defaults to the order implied by the budget flags.
    #[arg(long)]
    alpha: Option<f64>,
    #[command(flatten)]
    budget: BudgetArgs,
    /// Also report the best epsilon over the order grid.
    #[arg(long)]
    grid: bool,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// JSON array of parameters, or a run summary (with `--seed`).
    #[arg(long)]
    theta: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    dim: Option<usize>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InfeasiblePlan(_) => 2,
        Error::Parse { .. } => 3,
        Error::Io(_) => 1,
        Error::InvalidInput(_) | Error::Range(_) | Error::BudgetExceeded { .. } | Error::StepBound { .. } => 4,
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> dpsrgd::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn calibrate(a: &CalibrateArgs) -> dpsrgd::Result<()> {
    let budget = a.budget.budget()?;
    let g = a.clip;
    let plan = if let Some(path) = &a.dataset {
        let dim = match a.dim {
            Some(d) => d,
            None => infer_libsvm_dim(path)?,
        };
        let data = load_libsvm(path, dim)?;
        let n = data.len();
        let l_smooth = a.smoothness.unwrap_or_else(|| smoothness_bound(&data, a.lambda));
        let d_f = match a.d_f {
            Some(v) => v,
            None => loss_value(&ModelParams::zeros(dim), &data, a.lambda)?,
        };
        if a.parties > 1 {
            let n_tilde = n / a.parties;
            let hp = distributed_hyperparams(a.parties, n_tilde, dim, g, l_smooth, d_f, budget)?;
            let t = a.iterations.unwrap_or(hp.iterations);
            derive_distributed_plan(
                a.parties,
                n_tilde,
                a.batch.unwrap_or(hp.mean_batch),
                a.epoch_len.unwrap_or(hp.epoch_len).min(t),
                t,
                g,
                a.zeta.unwrap_or(hp.zeta),
                budget,
            )?
        } else {
            let hp = theoretical_hyperparams(n, dim, g, l_smooth, d_f, budget)?;
            let t = a.iterations.unwrap_or(hp.iterations);
            derive_plan(
                n,
                a.batch.unwrap_or(hp.batch_size),
                a.epoch_len.unwrap_or(hp.epoch_len).min(t),
                t,
                g,
                a.zeta.unwrap_or(hp.zeta),
                budget,
            )?
        }
    } else {
        let missing = |name: &str| Error::InvalidInput(format!("--{name} is required without --dataset"));
        let n = a.n.ok_or_else(|| missing("n"))?;
        let t = a.iterations.ok_or_else(|| missing("iterations"))?;
        let b = a.batch.ok_or_else(|| missing("batch"))?;
        let zeta = a.zeta.ok_or_else(|| missing("zeta"))?;
        let l = a.epoch_len.unwrap_or(b).min(t);
        if a.parties > 1 {
            derive_distributed_plan(a.parties, n / a.parties, b, l, t, g, zeta, budget)?
        } else {
            derive_plan(n, b, l, t, g, zeta, budget)?
        }
    };
    print_json(&plan)?;
    if !plan.is_certified() {
        for c in plan.violations() {
            eprintln!("violated: {c}");
        }
        if !a.allow_uncertified {
            return Err(Error::InfeasiblePlan(plan.violations()));
        }
    }
    Ok(())
}

fn train(a: &TrainArgs, distributed: bool) -> dpsrgd::Result<()> {
    let algorithm = if distributed {
        Algorithm::DdpSrgd
    } else {
        a.algo.parse()?
    };
    let data = match &a.dataset {
        Some(train) => DataSource::Files {
            train: train.clone(),
            test: a.test_dataset.clone(),
            dim: a.dim,
        },
        None => DataSource::Synthetic {
            n_train: a.synthetic_n,
            n_test: a.synthetic_n,
            dim: a.synthetic_dim,
            seed: 0,
        },
    };
    let config = ExperimentConfig {
        data,
        algorithm,
        epsilon: a.budget.epsilon,
        delta: a.budget.delta,
        beta: a.budget.beta,
        clip: a.clip,
        lambda: a.lambda,
        smoothness_l: a.smoothness,
        d_f: a.d_f,
        iterations: a.iterations,
        epoch_len: a.epoch_len,
        batch_size: a.batch,
        zeta: a.zeta,
        parties: a.parties,
        seeds: a.seeds.clone(),
        out_dir: a.out.clone(),
        frac_bits: a.frac_bits,
        step_scale: a.step_scale,
        scale_features: a.scale_features,
        allow_uncertified: a.allow_uncertified,
        trace_every: a.trace_every,
    };
    let summary = run_experiment(&config)?;
    let agg = &summary.aggregate;
    eprintln!(
        "{} seeds={} test_error={} train_loss={:.6} eps_spent={:.6}",
        config.algorithm,
        agg.seeds,
        agg.test_error
            .map_or("n/a".to_string(), |m| format!("{:.4} ({:.4})", m.mean, m.std)),
        agg.final_train_loss.mean,
        agg.eps_spent.mean,
    );
    if config.out_dir.is_none() {
        print_json(&summary)?;
    }
    Ok(())
}

fn account(a: &AccountArgs) -> dpsrgd::Result<()> {
    let budget = a.budget.budget()?;
    let alpha = a.alpha.unwrap_or_else(|| privacy_alpha(&budget));
    let per_step = match a.tau {
        Some(tau) if tau < 1.0 => subsampled_gaussian_rdp(a.sensitivity, a.sigma_sq, alpha, tau)?,
        _ => gaussian_rdp(a.sensitivity, a.sigma_sq, alpha)?,
    };
    let total = per_step * a.steps as f64;
    let epsilon = rdp_to_dp(alpha, total, budget.delta)?;
    let mut out = serde_json::json!({
        "alpha": alpha,
        "rho_per_step": per_step,
        "rho_total": total,
        "epsilon": epsilon,
        "delta": budget.delta,
    });
    if a.grid {
        let mut best = (f64::NAN, f64::INFINITY);
        for al in alpha_grid() {
            let rho = match a.tau {
                Some(tau) => subsampled_gaussian_rdp_envelope(a.sensitivity, a.sigma_sq, al, tau)?,
                None => gaussian_rdp(a.sensitivity, a.sigma_sq, al)?,
            };
            let eps = rdp_to_dp(al, rho * a.steps as f64, budget.delta)?;
            if eps < best.1 {
                best = (al, eps);
            }
        }
        out["best_alpha"] = best.0.into();
        out["best_epsilon"] = best.1.into();
    }
    print_json(&out)
}

fn gen_data(a: &GenDataArgs) -> dpsrgd::Result<()> {
    let data = gen_synthetic(a.n, a.dim, a.seed)?;
    write_libsvm(&data, std::io::BufWriter::new(fs::File::create(&a.out)?))
}

fn eval(a: &EvalArgs) -> dpsrgd::Result<()> {
    let text = fs::read_to_string(&a.theta)?;
    let theta: ModelParams = match a.seed {
        Some(seed) => {
            let summary: RunSummary = serde_json::from_str(&text)?;
            summary
                .per_seed
                .into_iter()
                .find(|r| r.seed == seed)
                .map(|r| r.theta_out)
                .ok_or_else(|| Error::InvalidInput(format!("seed {seed} not in summary")))?
        }
        None => serde_json::from_str(&text)?,
    };
    let dim = a.dim.unwrap_or(theta.dim());
    let data = load_libsvm(&a.dataset, dim)?;
    println!("{}", evaluate(&theta, &data)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 3 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Calibrate(a) => calibrate(a),
        Command::Train(a) => train(a, false),
        Command::TrainDist(a) => train(a, true),
        Command::Account(a) => account(a),
        Command::GenData(a) => gen_data(a),
        Command::Eval(a) => eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

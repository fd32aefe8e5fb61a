//! Noise calibration for recursive variance-reduced training.
//!
//! Every iteration of a plan costs `beta * epsilon / T` at the fixed order
//! `alpha = log(1/delta) / ((1 - beta) epsilon) + 1`, so the whole run converts to
//! exactly `epsilon`. Checkpoint iterations release a full clipped gradient with
//! sensitivity `2G/n`; the remaining iterations release a minibatch gradient
//! difference whose un-subsampled sensitivity is `2 zeta / b`, thanks to the step
//! bound `|theta^t - theta^(t-1)| <= zeta / L`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

use super::{
    alpha_grid, gaussian_rdp, subsampled_formula, subsampled_gaussian_rdp, subsampled_gaussian_rdp_envelope,
    subsampling_checks, ConstraintCheck, MechanismKind, RdpLedger,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
    /// Share of `epsilon` spent on the RDP cost; the rest covers the conversion term.
    pub beta: f64,
}

impl PrivacyBudget {
    pub const DEFAULT_BETA: f64 = 0.5;

    pub fn new(epsilon: f64, delta: f64, beta: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return invalid(format!("epsilon must be finite and > 0, got {epsilon}"));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return invalid(format!("delta must lie in (0, 1), got {delta}"));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return invalid(format!("beta must lie in (0, 1), got {beta}"));
        }
        Ok(Self { epsilon, delta, beta })
    }

    pub fn with_default_beta(epsilon: f64, delta: f64) -> Result<Self> {
        Self::new(epsilon, delta, Self::DEFAULT_BETA)
    }
}

/// `alpha = log(1/delta) / ((1 - beta) epsilon) + 1`.
pub fn privacy_alpha(budget: &PrivacyBudget) -> f64 {
    (1.0 / budget.delta).ln() / ((1.0 - budget.beta) * budget.epsilon) + 1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistributedShape {
    pub parties: usize,
    pub per_party: usize,
    pub mean_batch: usize,
}

/// A fully calibrated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePlan {
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
    pub alpha: f64,
    pub iterations: usize,
    pub zeta: f64,
    pub epoch_len: usize,
    /// Total minibatch size (`m * b_bar` for distributed plans).
    pub batch_size: usize,
    /// Total number of training examples (`m * n_tilde` for distributed plans).
    pub population: usize,
    pub lipschitz_g: f64,
    pub budget: PrivacyBudget,
    /// Side conditions of the subsampling bound for the recursive steps. Empty when
    /// `batch_size == population`, since those steps are then plain Gaussian releases.
    pub checks: Vec<ConstraintCheck>,
    pub distributed: Option<DistributedShape>,
}

impl NoisePlan {
    pub fn is_certified(&self) -> bool {
        self.checks.iter().all(|c| c.satisfied)
    }

    pub fn violations(&self) -> Vec<ConstraintCheck> {
        self.checks.iter().copied().filter(|c| !c.satisfied).collect()
    }

    /// Pass the plan through only if every side condition holds.
    pub fn certify(self) -> Result<Self> {
        if self.is_certified() {
            Ok(self)
        } else {
            Err(Error::InfeasiblePlan(self.violations()))
        }
    }

    pub fn is_checkpoint(&self, t: usize) -> bool {
        t % self.epoch_len == 0
    }

    pub fn checkpoint_sensitivity(&self) -> f64 {
        2.0 * self.lipschitz_g / self.population as f64
    }

    pub fn inner_sensitivity(&self) -> f64 {
        2.0 * self.zeta / self.batch_size as f64
    }

    pub fn sampling_rate(&self) -> f64 {
        self.batch_size as f64 / self.population as f64
    }

    pub fn checkpoint_rdp(&self) -> Result<f64> {
        gaussian_rdp(self.checkpoint_sensitivity(), self.sigma1_sq, self.alpha)
    }

    /// Cost of one recursive step. Uncertified plans are charged the closed-form
    /// bound and tagged as such.
    pub fn inner_rdp(&self) -> Result<(f64, MechanismKind)> {
        let (delta, sigma_sq, tau) = (self.inner_sensitivity(), self.sigma2_sq, self.sampling_rate());
        if self.batch_size == self.population {
            return Ok((gaussian_rdp(delta, sigma_sq, self.alpha)?, MechanismKind::Gaussian));
        }
        if self.is_certified() {
            Ok((
                subsampled_gaussian_rdp(delta, sigma_sq, self.alpha, tau)?,
                MechanismKind::SubsampledGaussian,
            ))
        } else {
            Ok((
                subsampled_formula(delta, sigma_sq, self.alpha, tau),
                MechanismKind::SubsampledGaussianUncertified,
            ))
        }
    }

    /// Ledger of a full run: one event per iteration, as the optimizer would charge it.
    pub fn simulate_ledger(&self, allow_uncertified: bool) -> Result<RdpLedger> {
        if !allow_uncertified && !self.is_certified() {
            return Err(Error::InfeasiblePlan(self.violations()));
        }
        let mut ledger = RdpLedger::new(self.alpha)?;
        let checkpoint = self.checkpoint_rdp()?;
        let (inner, inner_kind) = self.inner_rdp()?;
        for t in 0..self.iterations {
            if self.is_checkpoint(t) {
                ledger.compose(MechanismKind::Gaussian, checkpoint)?;
            } else {
                ledger.compose(inner_kind, inner)?;
            }
        }
        Ok(ledger)
    }

    /// Best `(alpha, epsilon)` over [`alpha_grid`] for the plan's noise levels.
    ///
    /// Diagnostic only; runs are always accounted at `self.alpha`. Recursive steps use
    /// [`subsampled_gaussian_rdp_envelope`], so the result is valid whether or not the
    /// closed-form side conditions hold at a given order.
    pub fn best_epsilon_on_grid(&self) -> Result<(f64, f64)> {
        let checkpoints = self.iterations.div_ceil(self.epoch_len) as f64;
        let inner_steps = self.iterations as f64 - checkpoints;
        let mut best = (f64::NAN, f64::INFINITY);
        for alpha in alpha_grid() {
            let rho = checkpoints * gaussian_rdp(self.checkpoint_sensitivity(), self.sigma1_sq, alpha)?
                + inner_steps
                    * subsampled_gaussian_rdp_envelope(
                        self.inner_sensitivity(),
                        self.sigma2_sq,
                        alpha,
                        self.sampling_rate(),
                    )?;
            let eps = super::rdp_to_dp(alpha, rho, self.budget.delta)?;
            if eps < best.1 {
                best = (alpha, eps);
            }
        }
        Ok(best)
    }

    pub fn gradient_complexity(&self) -> u64 {
        gradient_complexity(self.iterations, self.epoch_len, self.batch_size, self.population)
    }

    pub fn gradient_evaluations(&self) -> u64 {
        gradient_evaluations(self.iterations, self.epoch_len, self.batch_size, self.population)
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return invalid(format!("{name} must be finite and > 0, got {v}"));
    }
    Ok(())
}

/// Noise levels and side conditions for a run, without rejecting violated conditions.
///
/// `sigma1^2 = 2 T G^2 alpha / (beta n^2 eps)`, `sigma2^2 = 20 T zeta^2 alpha / (beta n^2 eps)`.
pub fn derive_plan(
    n: usize,
    b: usize,
    l: usize,
    iterations: usize,
    lipschitz_g: f64,
    zeta: f64,
    budget: PrivacyBudget,
) -> Result<NoisePlan> {
    if n == 0 {
        return invalid("n must be >= 1");
    }
    if b == 0 || b > n {
        return invalid(format!("batch size must lie in [1, n = {n}], got {b}"));
    }
    if iterations == 0 {
        return invalid("T must be >= 1");
    }
    if l == 0 || l > iterations {
        return invalid(format!("epoch length must lie in [1, T = {iterations}], got {l}"));
    }
    positive("G", lipschitz_g)?;
    positive("zeta", zeta)?;
    let budget = PrivacyBudget::new(budget.epsilon, budget.delta, budget.beta)?;

    let alpha = privacy_alpha(&budget);
    let t = iterations as f64;
    let nf = n as f64;
    let denom = budget.beta * nf * nf * budget.epsilon;
    let sigma1_sq = 2.0 * t * lipschitz_g * lipschitz_g * alpha / denom;
    let sigma2_sq = 20.0 * t * zeta * zeta * alpha / denom;
    let checks = if b < n {
        subsampling_checks(2.0 * zeta / b as f64, sigma2_sq, alpha, b as f64 / nf).to_vec()
    } else {
        Vec::new()
    };
    Ok(NoisePlan {
        sigma1_sq,
        sigma2_sq,
        alpha,
        iterations,
        zeta,
        epoch_len: l,
        batch_size: b,
        population: n,
        lipschitz_g,
        budget,
        checks,
        distributed: None,
    })
}

/// Calibrated plan; fails with [`Error::InfeasiblePlan`] unless both side conditions hold.
pub fn calibrate(
    n: usize,
    b: usize,
    l: usize,
    iterations: usize,
    lipschitz_g: f64,
    zeta: f64,
    budget: PrivacyBudget,
) -> Result<NoisePlan> {
    derive_plan(n, b, l, iterations, lipschitz_g, zeta, budget)?.certify()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub epoch_len: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub zeta: f64,
}

fn theory_t_and_zeta(n_total: f64, d: usize, g: f64, l_smooth: f64, d_f: f64, budget: &PrivacyBudget) -> (usize, f64) {
    let log_inv_delta = (1.0 / budget.delta).ln();
    let df = d as f64;
    let zeta_sq = g * (df * l_smooth * d_f * log_inv_delta).sqrt() / (n_total * budget.epsilon);
    let t = 4.0 * n_total * budget.epsilon * (l_smooth * d_f).sqrt() / (g * (df * log_inv_delta).sqrt());
    ((t.floor() as usize).max(1), zeta_sq.sqrt())
}

fn check_theory_inputs(d: usize, g: f64, l_smooth: f64, d_f: f64) -> Result<()> {
    if d == 0 {
        return invalid("dimension must be >= 1");
    }
    positive("G", g)?;
    positive("L", l_smooth)?;
    positive("D_F", d_f)
}

/// `l = b = round(sqrt(n))`, `zeta^2 = G sqrt(d L D_F log(1/delta)) / (n eps)` and
/// `T = floor(4 n eps sqrt(L D_F) / (G sqrt(d log(1/delta))))`.
///
/// `l` is capped at `T` so that at least one epoch fits.
pub fn theoretical_hyperparams(
    n: usize,
    d: usize,
    lipschitz_g: f64,
    smoothness_l: f64,
    d_f: f64,
    budget: PrivacyBudget,
) -> Result<Hyperparams> {
    if n == 0 {
        return invalid("n must be >= 1");
    }
    check_theory_inputs(d, lipschitz_g, smoothness_l, d_f)?;
    let root = ((n as f64).sqrt().round_ties_even() as usize).clamp(1, n);
    let (iterations, zeta) = theory_t_and_zeta(n as f64, d, lipschitz_g, smoothness_l, d_f, &budget);
    Ok(Hyperparams {
        epoch_len: root.min(iterations),
        batch_size: root,
        iterations,
        zeta,
    })
}

/// [`theoretical_hyperparams`] followed by [`calibrate`].
pub fn plan_hyperparams(
    n: usize,
    d: usize,
    lipschitz_g: f64,
    smoothness_l: f64,
    d_f: f64,
    budget: PrivacyBudget,
) -> Result<NoisePlan> {
    let hp = theoretical_hyperparams(n, d, lipschitz_g, smoothness_l, d_f, budget)?;
    calibrate(
        n,
        hp.batch_size,
        hp.epoch_len,
        hp.iterations,
        lipschitz_g,
        hp.zeta,
        budget,
    )
}

/// Distributed plan: the centralized calibration with `n = m * n_tilde` and
/// `b = m * b_bar`, so `tau = b_bar / n_tilde` and the noise shrinks with `m * n_tilde`.
#[allow(clippy::too_many_arguments)]
pub fn derive_distributed_plan(
    parties: usize,
    per_party: usize,
    mean_batch: usize,
    l: usize,
    iterations: usize,
    lipschitz_g: f64,
    zeta: f64,
    budget: PrivacyBudget,
) -> Result<NoisePlan> {
    if parties == 0 || per_party == 0 {
        return invalid("parties and per-party size must be >= 1");
    }
    if mean_batch == 0 || mean_batch > per_party {
        return invalid(format!(
            "mean batch must lie in [1, n_tilde = {per_party}], got {mean_batch}"
        ));
    }
    let mut plan = derive_plan(
        parties * per_party,
        parties * mean_batch,
        l,
        iterations,
        lipschitz_g,
        zeta,
        budget,
    )?;
    plan.distributed = Some(DistributedShape {
        parties,
        per_party,
        mean_batch,
    });
    Ok(plan)
}

#[allow(clippy::too_many_arguments)]
pub fn calibrate_distributed(
    parties: usize,
    per_party: usize,
    mean_batch: usize,
    l: usize,
    iterations: usize,
    lipschitz_g: f64,
    zeta: f64,
    budget: PrivacyBudget,
) -> Result<NoisePlan> {
    derive_distributed_plan(parties, per_party, mean_batch, l, iterations, lipschitz_g, zeta, budget)?.certify()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributedHyperparams {
    pub epoch_len: usize,
    pub mean_batch: usize,
    pub iterations: usize,
    pub zeta: f64,
}

/// `l = round(sqrt(m n_tilde))`, `b_bar = round(sqrt(n_tilde / m))`, with `T` and
/// `zeta` from the centralized formulas at `n = m n_tilde`. Rounding is half-to-even.
pub fn distributed_hyperparams(
    parties: usize,
    per_party: usize,
    d: usize,
    lipschitz_g: f64,
    smoothness_l: f64,
    d_f: f64,
    budget: PrivacyBudget,
) -> Result<DistributedHyperparams> {
    if parties == 0 || per_party == 0 {
        return invalid("parties and per-party size must be >= 1");
    }
    check_theory_inputs(d, lipschitz_g, smoothness_l, d_f)?;
    let total = (parties * per_party) as f64;
    let mean_batch = (per_party as f64 / parties as f64).sqrt().round_ties_even() as usize;
    if mean_batch == 0 {
        return invalid(format!(
            "mean batch sqrt(n_tilde / m) = {:.4} rounds to 0 for m = {parties}, n_tilde = {per_party}",
            (per_party as f64 / parties as f64).sqrt()
        ));
    }
    let mean_batch = mean_batch.min(per_party);
    let root = (total.sqrt().round_ties_even() as usize).max(1);
    let (iterations, zeta) = theory_t_and_zeta(total, d, lipschitz_g, smoothness_l, d_f, &budget);
    Ok(DistributedHyperparams {
        epoch_len: root.min(iterations),
        mean_batch,
        iterations,
        zeta,
    })
}

pub fn plan_distributed(
    parties: usize,
    per_party: usize,
    d: usize,
    lipschitz_g: f64,
    smoothness_l: f64,
    d_f: f64,
    budget: PrivacyBudget,
) -> Result<NoisePlan> {
    let hp = distributed_hyperparams(parties, per_party, d, lipschitz_g, smoothness_l, d_f, budget)?;
    calibrate_distributed(
        parties,
        per_party,
        hp.mean_batch,
        hp.epoch_len,
        hp.iterations,
        lipschitz_g,
        hp.zeta,
        budget,
    )
}

/// `(epsilon, delta)` of a distributed plan's full run.
pub fn trace_privacy_distributed(plan: &NoisePlan, allow_uncertified: bool) -> Result<(f64, f64)> {
    if plan.distributed.is_none() {
        return invalid("plan was not built for a distributed run");
    }
    let ledger = plan.simulate_ledger(allow_uncertified)?;
    Ok((ledger.epsilon(plan.budget.delta)?, plan.budget.delta))
}

/// Gradient complexity as counted in the convergence analysis: `ceil(T/l) n + T b`.
pub fn gradient_complexity(iterations: usize, l: usize, b: usize, n: usize) -> u64 {
    let checkpoints = iterations.div_ceil(l) as u64;
    checkpoints * n as u64 + iterations as u64 * b as u64
}

/// Per-example gradient evaluations actually performed by a run: `n` per checkpoint
/// and `2b` per recursive step (each sampled example is differentiated at both
/// `theta^t` and `theta^(t-1)`).
pub fn gradient_evaluations(iterations: usize, l: usize, b: usize, n: usize) -> u64 {
    let checkpoints = iterations.div_ceil(l) as u64;
    checkpoints * n as u64 + 2 * (iterations as u64 - checkpoints) * b as u64
}

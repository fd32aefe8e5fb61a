//! The recursive-gradient loop shared by centralized and distributed runs.

use crate::error::{invalid, Error, Result};
use crate::objectives::{full_gradient, loss_value, norm, Dataset, GradAccumulator, ModelParams, Objective};
use crate::privacy::{MechanismKind, NoisePlan, RdpLedger};
use crate::rng::{stream, Purpose};
use crate::secure_agg::{gaussian_vector, MessageCounters};

use super::trace::Tracker;
use super::{sample_without_replacement, scaled_step_size, RunOptions, RunOutput};

/// A released gradient estimate and the per-example gradient evaluations it cost.
pub(crate) struct Estimate {
    pub vp: Vec<f64>,
    pub evals: u64,
}

/// Where the estimates of one iteration come from.
pub(crate) trait Backend {
    fn dim(&self) -> usize;
    fn population(&self) -> usize;
    /// Full clipped gradient at `theta` plus `N(0, sigma^2 I)`.
    fn checkpoint(&mut self, t: usize, theta: &[f64], sigma: f64) -> Result<Estimate>;
    /// Minibatch gradient difference plus `v_prev` plus `N(0, sigma^2 I)`.
    fn recursive(
        &mut self,
        t: usize,
        theta: &[f64],
        theta_prev: &[f64],
        v_prev: &[f64],
        sigma: f64,
    ) -> Result<Estimate>;
    /// Non-private loss and true gradient norm at `theta`.
    fn diagnostics(&self, theta: &ModelParams) -> Result<(f64, f64)>;
    fn messages(&self) -> Option<MessageCounters> {
        None
    }
}

pub(crate) struct Schedule {
    pub iterations: usize,
    pub epoch_len: usize,
    pub zeta: f64,
    pub smoothness_l: f64,
    pub sigma1: f64,
    pub sigma2: f64,
}

pub(crate) struct Accounting {
    pub ledger: RdpLedger,
    pub checkpoint_rho: f64,
    pub inner_rho: f64,
    pub inner_kind: MechanismKind,
    pub epsilon: f64,
    pub delta: f64,
}

impl Accounting {
    pub(crate) fn for_plan(plan: &NoisePlan, allow_uncertified: bool) -> Result<Self> {
        if !plan.is_certified() && !allow_uncertified {
            return Err(Error::InfeasiblePlan(plan.violations()));
        }
        let (inner_rho, inner_kind) = plan.inner_rdp()?;
        Ok(Self {
            ledger: RdpLedger::new(plan.alpha)?,
            checkpoint_rho: plan.checkpoint_rdp()?,
            inner_rho,
            inner_kind,
            epsilon: plan.budget.epsilon,
            delta: plan.budget.delta,
        })
    }

    /// Charge one event and return epsilon spent so far.
    pub(crate) fn charge(&mut self, t: usize, kind: MechanismKind, rho: f64) -> Result<f64> {
        self.ledger.compose(kind, rho)?;
        let spent = self.ledger.epsilon(self.delta)?;
        if spent > self.epsilon + 1e-9 {
            return Err(Error::BudgetExceeded {
                iteration: t,
                spent,
                budget: self.epsilon,
            });
        }
        Ok(spent)
    }
}

impl Schedule {
    pub(crate) fn for_plan(plan: &NoisePlan, smoothness_l: f64) -> Self {
        Self {
            iterations: plan.iterations,
            epoch_len: plan.epoch_len,
            zeta: plan.zeta,
            smoothness_l,
            sigma1: plan.sigma1_sq.sqrt(),
            sigma2: plan.sigma2_sq.sqrt(),
        }
    }
}

/// `theta - eta v` with the step-length bound `|eta v| <= zeta / L` verified.
pub(crate) fn checked_step(t: usize, theta: &ModelParams, vp: &[f64], eta: f64, bound: f64) -> Result<ModelParams> {
    let next: Vec<f64> = theta.0.iter().zip(vp).map(|(x, v)| x - eta * v).collect();
    let step = theta
        .0
        .iter()
        .zip(&next)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    if !(step <= bound + 1e-12) {
        return Err(Error::StepBound {
            iteration: t,
            step,
            bound,
        });
    }
    Ok(ModelParams(next))
}

pub(crate) fn check_estimate(t: usize, vp: &[f64]) -> Result<f64> {
    let n = norm(vp);
    if !n.is_finite() {
        return Err(Error::Range(format!(
            "gradient estimate is not finite at iteration {t}"
        )));
    }
    Ok(n)
}

pub(crate) fn run_recursive<B: Backend>(
    backend: &mut B,
    schedule: &Schedule,
    mut accounting: Option<Accounting>,
    opts: &RunOptions,
) -> Result<RunOutput> {
    let d = backend.dim();
    opts.validate(d)?;
    let Schedule {
        iterations,
        epoch_len,
        zeta,
        smoothness_l,
        sigma1,
        sigma2,
    } = *schedule;
    let bound = zeta / smoothness_l;
    let mut tracker = Tracker::new(iterations, backend.population(), opts);
    let mut theta = opts.initial_theta(d);
    let mut theta_prev = theta.clone();
    let mut v_prev = vec![0.0; d];

    for t in 0..iterations {
        tracker.visit(t, &theta);
        let checkpoint = t % epoch_len == 0;
        let est = if checkpoint {
            backend.checkpoint(t, &theta.0, sigma1)?
        } else {
            backend.recursive(t, &theta.0, &theta_prev.0, &v_prev, sigma2)?
        };
        tracker.add_evals(est.evals);
        let eps_spent = match accounting.as_mut() {
            Some(acc) if checkpoint => acc.charge(t, MechanismKind::Gaussian, acc.checkpoint_rho)?,
            Some(acc) => acc.charge(t, acc.inner_kind, acc.inner_rho)?,
            None => f64::INFINITY,
        };
        let vp_norm = check_estimate(t, &est.vp)?;
        let eta = scaled_step_size(vp_norm, zeta, smoothness_l, opts.step_scale);
        let next = checked_step(t, &theta, &est.vp, eta, bound)?;
        tracker.record(t, vp_norm, eps_spent, || backend.diagnostics(&theta))?;
        theta_prev = std::mem::replace(&mut theta, next);
        v_prev = est.vp;
    }

    let done = tracker.finish(&theta);
    Ok(RunOutput {
        theta_out: done.theta_out,
        output_index: done.output_index,
        theta_last: theta,
        trace: done.trace,
        plan: None,
        baseline: None,
        ledger: accounting.map(|a| a.ledger),
        messages: backend.messages(),
        iterates: done.iterates,
    })
}

/// `(1/|B|) sum_{i in B} (clip grad f_i(theta) - clip grad f_i(theta_prev)) + v_prev`.
pub fn recursive_estimate(
    data: &Dataset,
    obj: &Objective,
    batch: &[usize],
    theta: &ModelParams,
    theta_prev: &ModelParams,
    v_prev: &[f64],
) -> Result<Vec<f64>> {
    let d = data.dim();
    if theta.dim() != d || theta_prev.dim() != d || v_prev.len() != d {
        return invalid(format!("recursive estimate needs vectors of dimension {d}"));
    }
    if batch.is_empty() {
        return invalid("batch must be nonempty");
    }
    if let Some(&i) = batch.iter().find(|&&i| i >= data.len()) {
        return invalid(format!("index {i} out of range for {} examples", data.len()));
    }
    let mut acc = GradAccumulator::new(d);
    let mut v = vec![0.0; d];
    batch_difference(
        data,
        obj,
        batch,
        &theta.0,
        &theta_prev.0,
        1.0 / batch.len() as f64,
        &mut acc,
        &mut v,
    );
    for (x, p) in v.iter_mut().zip(v_prev) {
        *x += p;
    }
    Ok(v)
}

/// `out += w * sum_{i in batch} (clip grad f_i(theta) - clip grad f_i(theta_prev))`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn batch_difference(
    data: &Dataset,
    obj: &Objective,
    batch: &[usize],
    theta: &[f64],
    theta_prev: &[f64],
    w: f64,
    acc: &mut GradAccumulator,
    out: &mut [f64],
) {
    for &i in batch {
        let ex = data.get(i);
        acc.add_clipped(theta, ex, obj, w, out);
        acc.add_clipped(theta_prev, ex, obj, -w, out);
    }
}

/// `out += w * sum_i clip grad f_i(theta)` over the whole dataset.
pub(crate) fn full_clipped_sum(
    data: &Dataset,
    obj: &Objective,
    theta: &[f64],
    w: f64,
    acc: &mut GradAccumulator,
    out: &mut [f64],
) {
    for ex in data.examples() {
        acc.add_clipped(theta, ex, obj, w, out);
    }
}

pub(crate) fn add_noise(v: &mut [f64], seed: u64, t: usize, sigma: f64) {
    if sigma > 0.0 {
        let z = gaussian_vector(&mut stream(seed, Purpose::Noise, t as u64), v.len(), sigma);
        for (x, e) in v.iter_mut().zip(z) {
            *x += e;
        }
    }
}

pub(crate) fn centralized_diagnostics(data: &Dataset, lambda: f64, theta: &ModelParams) -> Result<(f64, f64)> {
    Ok((
        loss_value(theta, data, lambda)?,
        norm(&full_gradient(theta, data, lambda)?),
    ))
}

pub(crate) struct Centralized<'a> {
    pub data: &'a Dataset,
    pub obj: Objective,
    pub batch_size: usize,
    pub seed: u64,
    acc: GradAccumulator,
}

impl<'a> Centralized<'a> {
    pub(crate) fn new(data: &'a Dataset, obj: Objective, batch_size: usize, seed: u64) -> Self {
        Self {
            data,
            obj,
            batch_size,
            seed,
            acc: GradAccumulator::new(data.dim()),
        }
    }
}

impl Backend for Centralized<'_> {
    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn population(&self) -> usize {
        self.data.len()
    }

    fn checkpoint(&mut self, t: usize, theta: &[f64], sigma: f64) -> Result<Estimate> {
        let n = self.data.len();
        let mut v = vec![0.0; self.dim()];
        full_clipped_sum(self.data, &self.obj, theta, 1.0 / n as f64, &mut self.acc, &mut v);
        add_noise(&mut v, self.seed, t, sigma);
        Ok(Estimate { vp: v, evals: n as u64 })
    }

    fn recursive(
        &mut self,
        t: usize,
        theta: &[f64],
        theta_prev: &[f64],
        v_prev: &[f64],
        sigma: f64,
    ) -> Result<Estimate> {
        let b = self.batch_size;
        let batch = sample_without_replacement(self.data.len(), b, &mut stream(self.seed, Purpose::Batch, t as u64))?;
        let mut v = vec![0.0; self.dim()];
        batch_difference(
            self.data,
            &self.obj,
            &batch,
            theta,
            theta_prev,
            1.0 / b as f64,
            &mut self.acc,
            &mut v,
        );
        for (x, p) in v.iter_mut().zip(v_prev) {
            *x += p;
        }
        add_noise(&mut v, self.seed, t, sigma);
        Ok(Estimate {
            vp: v,
            evals: 2 * b as u64,
        })
    }

    fn diagnostics(&self, theta: &ModelParams) -> Result<(f64, f64)> {
        centralized_diagnostics(self.data, self.obj.lambda, theta)
    }
}

pub(crate) fn check_objective_matches(obj: &Objective, plan: &NoisePlan) -> Result<()> {
    if obj.clip_threshold > plan.lipschitz_g * (1.0 + 1e-12) {
        return invalid(format!(
            "clip threshold {} exceeds the plan's Lipschitz bound {}",
            obj.clip_threshold, plan.lipschitz_g
        ));
    }
    Ok(())
}

/// Private recursive gradient descent under `plan`.
///
/// Iteration `t` releases `v_p^t`: a noisy full clipped gradient when `t % l == 0` and
/// otherwise `grad F_B(theta^t) - grad F_B(theta^(t-1)) + v_p^(t-1)` plus noise, with
/// `B` a fresh uniform minibatch. The update is `theta^(t+1) = theta^t - eta_t v_p^t`.
pub fn dp_srgd(obj: &Objective, data: &Dataset, plan: &NoisePlan, opts: &RunOptions) -> Result<RunOutput> {
    if plan.distributed.is_some() {
        return invalid("plan was built for a distributed run");
    }
    if plan.population != data.len() {
        return invalid(format!(
            "plan is for n = {}, dataset has {} examples",
            plan.population,
            data.len()
        ));
    }
    check_objective_matches(obj, plan)?;
    let accounting = Accounting::for_plan(plan, opts.allow_uncertified)?;
    let mut backend = Centralized::new(data, *obj, plan.batch_size, opts.seed);
    let mut out = run_recursive(
        &mut backend,
        &Schedule::for_plan(plan, obj.smoothness_l),
        Some(accounting),
        opts,
    )?;
    out.plan = Some(plan.clone());
    Ok(out)
}

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::objectives::{Dataset, GradAccumulator, ModelParams, Objective};
use crate::privacy::{
    gaussian_rdp, privacy_alpha, rdp_to_dp, subsampled_gaussian_rdp_envelope, MechanismKind, PrivacyBudget, RdpLedger,
};
use crate::rng::{stream, Purpose};

use super::engine::{
    add_noise, centralized_diagnostics, check_estimate, full_clipped_sum, run_recursive, Accounting, Centralized,
    Schedule,
};
use super::trace::Tracker;
use super::{sample_without_replacement, RunOptions, RunOutput};

/// Noise and step settings of a DP-GD or DP-SGD run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineNoise {
    pub sigma_sq: f64,
    pub alpha: f64,
    pub rho_per_step: f64,
    pub step_size: f64,
    pub batch_size: usize,
    pub iterations: usize,
}

/// Non-private recursive reference: the DP-SRGD loop with all noise removed.
pub fn spider(
    obj: &Objective,
    data: &Dataset,
    iterations: usize,
    epoch_len: usize,
    batch_size: usize,
    zeta: f64,
    opts: &RunOptions,
) -> Result<RunOutput> {
    if iterations == 0 {
        return invalid("T must be >= 1");
    }
    if epoch_len == 0 {
        return invalid("epoch length must be >= 1");
    }
    if batch_size == 0 || batch_size > data.len() {
        return invalid(format!(
            "batch size must lie in [1, n = {}], got {batch_size}",
            data.len()
        ));
    }
    if !(zeta > 0.0) || !zeta.is_finite() {
        return invalid(format!("zeta must be finite and > 0, got {zeta}"));
    }
    let mut backend = Centralized::new(data, *obj, batch_size, opts.seed);
    let schedule = Schedule {
        iterations,
        epoch_len,
        zeta,
        smoothness_l: obj.smoothness_l,
        sigma1: 0.0,
        sigma2: 0.0,
    };
    run_recursive(&mut backend, &schedule, None, opts)
}

fn check_iterations(iterations: usize) -> Result<()> {
    if iterations == 0 {
        return invalid("T must be >= 1");
    }
    Ok(())
}

/// Noisy full-batch gradient descent with constant step `step_scale / (2L)`.
///
/// `sigma^2 = 2 T G^2 alpha / (beta n^2 epsilon)` makes each of the `T` Gaussian
/// releases (sensitivity `2G/n`) cost `beta epsilon / T` at the fixed order `alpha`.
pub fn dp_gd(
    obj: &Objective,
    data: &Dataset,
    budget: PrivacyBudget,
    iterations: usize,
    opts: &RunOptions,
) -> Result<RunOutput> {
    check_iterations(iterations)?;
    let n = data.len();
    let budget = PrivacyBudget::new(budget.epsilon, budget.delta, budget.beta)?;
    let alpha = privacy_alpha(&budget);
    let g = obj.lipschitz_g;
    let sigma_sq = 2.0 * iterations as f64 * g * g * alpha / (budget.beta * (n * n) as f64 * budget.epsilon);
    let rho = gaussian_rdp(2.0 * g / n as f64, sigma_sq, alpha)?;
    let noise = BaselineNoise {
        sigma_sq,
        alpha,
        rho_per_step: rho,
        step_size: opts.step_scale / (2.0 * obj.smoothness_l),
        batch_size: n,
        iterations,
    };
    noisy_descent(obj, data, budget, noise, MechanismKind::Gaussian, opts)
}

/// Noise variance for `T` subsampled releases at batch size `b` whose ledger converts
/// to `epsilon` at the fixed order `alpha`.
///
/// Full batches use the Gaussian mechanism in closed form. Otherwise the variance is
/// found by bisection on the amplification envelope, stopping once the converted
/// epsilon lies within `1e-6` below the budget. Returns `(sigma^2, rho per step, kind)`.
pub fn dp_sgd_sigma(
    n: usize,
    b: usize,
    iterations: usize,
    lipschitz_g: f64,
    budget: PrivacyBudget,
) -> Result<(f64, f64, MechanismKind)> {
    if b == 0 || b > n {
        return invalid(format!("batch size must lie in [1, n = {n}], got {b}"));
    }
    check_iterations(iterations)?;
    let budget = PrivacyBudget::new(budget.epsilon, budget.delta, budget.beta)?;
    let alpha = privacy_alpha(&budget);
    let sens = 2.0 * lipschitz_g / b as f64;
    let t = iterations as f64;
    // Gaussian variance that spends exactly beta * epsilon over T steps.
    let plain_sq = t * alpha * sens * sens / (2.0 * budget.beta * budget.epsilon);
    if b == n {
        return Ok((plain_sq, gaussian_rdp(sens, plain_sq, alpha)?, MechanismKind::Gaussian));
    }
    let tau = b as f64 / n as f64;
    let eps_at = |s: f64| -> Result<f64> {
        rdp_to_dp(
            alpha,
            t * subsampled_gaussian_rdp_envelope(sens, s, alpha, tau)?,
            budget.delta,
        )
    };
    // The envelope never exceeds the Gaussian cost, so `hi` is always within budget.
    let mut hi = plain_sq;
    let mut lo = plain_sq * 1e-12;
    if eps_at(lo)? <= budget.epsilon {
        hi = lo;
    } else {
        for _ in 0..200 {
            if eps_at(hi)? >= budget.epsilon - 1e-6 {
                break;
            }
            let mid = (lo * hi).sqrt();
            if mid <= lo || mid >= hi {
                break;
            }
            if eps_at(mid)? <= budget.epsilon {
                hi = mid;
            } else {
                lo = mid;
            }
        }
    }
    let rho = subsampled_gaussian_rdp_envelope(sens, hi, alpha, tau)?;
    let kind = if rho < gaussian_rdp(sens, hi, alpha)? {
        MechanismKind::SubsampledGaussian
    } else {
        MechanismKind::Gaussian
    };
    Ok((hi, rho, kind))
}

/// Noisy minibatch gradient descent: each step releases the mean clipped gradient of a
/// fresh uniform batch of size `b` plus Gaussian noise.
pub fn dp_sgd(
    obj: &Objective,
    data: &Dataset,
    budget: PrivacyBudget,
    iterations: usize,
    batch_size: usize,
    opts: &RunOptions,
) -> Result<RunOutput> {
    let (sigma_sq, rho, kind) = dp_sgd_sigma(data.len(), batch_size, iterations, obj.lipschitz_g, budget)?;
    let noise = BaselineNoise {
        sigma_sq,
        alpha: privacy_alpha(&budget),
        rho_per_step: rho,
        step_size: opts.step_scale / (2.0 * obj.smoothness_l),
        batch_size,
        iterations,
    };
    noisy_descent(obj, data, budget, noise, kind, opts)
}

fn noisy_descent(
    obj: &Objective,
    data: &Dataset,
    budget: PrivacyBudget,
    noise: BaselineNoise,
    kind: MechanismKind,
    opts: &RunOptions,
) -> Result<RunOutput> {
    let d = data.dim();
    let n = data.len();
    opts.validate(d)?;
    let mut accounting = Accounting {
        ledger: RdpLedger::new(noise.alpha)?,
        checkpoint_rho: noise.rho_per_step,
        inner_rho: noise.rho_per_step,
        inner_kind: kind,
        epsilon: budget.epsilon,
        delta: budget.delta,
    };
    let sigma = noise.sigma_sq.sqrt();
    let b = noise.batch_size;
    let mut tracker = Tracker::new(noise.iterations, n, opts);
    let mut acc = GradAccumulator::new(d);
    let mut theta = opts.initial_theta(d);
    for t in 0..noise.iterations {
        tracker.visit(t, &theta);
        let mut v = vec![0.0; d];
        if b == n {
            full_clipped_sum(data, obj, &theta.0, 1.0 / n as f64, &mut acc, &mut v);
        } else {
            let batch = sample_without_replacement(n, b, &mut stream(opts.seed, Purpose::Batch, t as u64))?;
            for &i in &batch {
                acc.add_clipped(&theta.0, data.get(i), obj, 1.0 / b as f64, &mut v);
            }
        }
        add_noise(&mut v, opts.seed, t, sigma);
        tracker.add_evals(b as u64);
        let eps_spent = accounting.charge(t, kind, noise.rho_per_step)?;
        let vp_norm = check_estimate(t, &v)?;
        let next = ModelParams(theta.0.iter().zip(&v).map(|(x, g)| x - noise.step_size * g).collect());
        tracker.record(t, vp_norm, eps_spent, || {
            centralized_diagnostics(data, obj.lambda, &theta)
        })?;
        theta = next;
    }
    let done = tracker.finish(&theta);
    Ok(RunOutput {
        theta_out: done.theta_out,
        output_index: done.output_index,
        theta_last: theta,
        trace: done.trace,
        plan: None,
        baseline: Some(noise),
        ledger: Some(accounting.ledger),
        messages: None,
        iterates: done.iterates,
    })
}

//! Renyi differential privacy accounting.
//!
//! All costs are expressed at a single Renyi order `alpha`. Mechanisms compose by
//! adding their costs in an [`RdpLedger`], and the total converts to `(epsilon, delta)`
//! through [`rdp_to_dp`].

mod ledger;
mod plan;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub use ledger::{LedgerEvent, MechanismKind, RdpLedger};
pub use plan::{
    calibrate, calibrate_distributed, derive_distributed_plan, derive_plan, distributed_hyperparams,
    gradient_complexity, gradient_evaluations, plan_distributed, plan_hyperparams, privacy_alpha,
    theoretical_hyperparams, trace_privacy_distributed, DistributedHyperparams, DistributedShape, Hyperparams,
    NoisePlan, PrivacyBudget,
};

/// Default grid for the best-order diagnostic: 1.5 and the integers 2..=128.
pub fn alpha_grid() -> Vec<f64> {
    std::iter::once(1.5).chain((2..=128).map(f64::from)).collect()
}

/// The two side conditions of the closed-form subsampling bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Constraint {
    /// `sigma^2 / Delta^2 >= 1.5`.
    NoiseFloor,
    /// `alpha <= log(1 / (tau (1 + sigma^2 / Delta^2)))`.
    AlphaBound,
}

/// One evaluated inequality `lhs <= rhs` (alpha bound) or `lhs >= rhs` (noise floor).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub constraint: Constraint,
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

impl ConstraintCheck {
    fn noise_floor(normalized_sigma_sq: f64) -> Self {
        Self {
            constraint: Constraint::NoiseFloor,
            lhs: normalized_sigma_sq,
            rhs: 1.5,
            satisfied: normalized_sigma_sq >= 1.5,
        }
    }

    fn alpha_bound(alpha: f64, tau: f64, normalized_sigma_sq: f64) -> Self {
        let rhs = (1.0 / (tau * (1.0 + normalized_sigma_sq))).ln();
        Self {
            constraint: Constraint::AlphaBound,
            lhs: alpha,
            rhs,
            satisfied: alpha <= rhs,
        }
    }

    /// How far the inequality is from holding; zero when satisfied.
    pub fn shortfall(&self) -> f64 {
        match self.constraint {
            Constraint::NoiseFloor => (self.rhs - self.lhs).max(0.0),
            Constraint::AlphaBound => (self.lhs - self.rhs).max(0.0),
        }
    }
}

impl fmt::Display for ConstraintCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (name, op) = match self.constraint {
            Constraint::NoiseFloor => ("noise floor 5 b^2 T alpha / (beta n^2 eps) >= 1.5", ">="),
            Constraint::AlphaBound => (
                "alpha bound alpha <= log(beta n^3 eps / (5 b^3 T alpha + beta b n^2 eps))",
                "<=",
            ),
        };
        if self.satisfied {
            write!(f, "{name}: {:.6} {op} {:.6} holds", self.lhs, self.rhs)
        } else {
            write!(
                f,
                "{name}: {:.6} {op} {:.6} violated by {:.6}",
                self.lhs,
                self.rhs,
                self.shortfall()
            )
        }
    }
}

fn check_order(alpha: f64) -> Result<()> {
    if !(alpha > 1.0) || !alpha.is_finite() {
        return invalid(format!("Renyi order must be finite and > 1, got {alpha}"));
    }
    Ok(())
}

fn check_noise(sensitivity: f64, sigma_sq: f64) -> Result<()> {
    if !(sensitivity >= 0.0) || !sensitivity.is_finite() {
        return invalid(format!("sensitivity must be finite and >= 0, got {sensitivity}"));
    }
    if !(sigma_sq > 0.0) || !sigma_sq.is_finite() {
        return invalid(format!("noise variance must be finite and > 0, got {sigma_sq}"));
    }
    Ok(())
}

/// RDP of the Gaussian mechanism: `alpha * Delta^2 / (2 sigma^2)`.
pub fn gaussian_rdp(sensitivity: f64, sigma_sq: f64, alpha: f64) -> Result<f64> {
    check_order(alpha)?;
    check_noise(sensitivity, sigma_sq)?;
    Ok(alpha * sensitivity * sensitivity / (2.0 * sigma_sq))
}

/// Side conditions for [`subsampled_gaussian_rdp`], evaluated on the normalized noise
/// `sigma^2 / Delta^2`.
pub fn subsampling_checks(sensitivity: f64, sigma_sq: f64, alpha: f64, tau: f64) -> [ConstraintCheck; 2] {
    let s = if sensitivity > 0.0 {
        sigma_sq / (sensitivity * sensitivity)
    } else {
        f64::INFINITY
    };
    [
        ConstraintCheck::noise_floor(s),
        ConstraintCheck::alpha_bound(alpha, tau, s),
    ]
}

fn check_rate(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau < 1.0) {
        return invalid(format!("subsampling rate must lie in (0, 1), got {tau}"));
    }
    Ok(())
}

/// Closed-form RDP of the Gaussian mechanism run on a uniform subsample (without
/// replacement) at rate `tau`: `5 tau^2 Delta^2 alpha / sigma^2`.
///
/// Valid only when `sigma^2 / Delta^2 >= 1.5` and
/// `alpha <= log(1 / (tau (1 + sigma^2 / Delta^2)))`; otherwise returns
/// [`Error::InfeasiblePlan`] carrying the failed inequalities.
pub fn subsampled_gaussian_rdp(sensitivity: f64, sigma_sq: f64, alpha: f64, tau: f64) -> Result<f64> {
    check_order(alpha)?;
    check_noise(sensitivity, sigma_sq)?;
    check_rate(tau)?;
    if sensitivity == 0.0 {
        return Ok(0.0);
    }
    let failed: Vec<ConstraintCheck> = subsampling_checks(sensitivity, sigma_sq, alpha, tau)
        .into_iter()
        .filter(|c| !c.satisfied)
        .collect();
    if !failed.is_empty() {
        return Err(Error::InfeasiblePlan(failed));
    }
    Ok(subsampled_formula(sensitivity, sigma_sq, alpha, tau))
}

pub(crate) fn subsampled_formula(sensitivity: f64, sigma_sq: f64, alpha: f64, tau: f64) -> f64 {
    5.0 * tau * tau * sensitivity * sensitivity * alpha / sigma_sq
}

/// Tightest valid bound for a subsampled Gaussian step whose side conditions may fail.
///
/// Takes the smaller of the plain Gaussian cost (always valid: every fixed minibatch
/// has sensitivity `Delta`) and the amplified cost at the largest admissible noise
/// level not exceeding `sigma^2` (extra noise is post-processing). The result is
/// nonincreasing in `sigma^2`, which the DP-SGD noise search relies on.
pub fn subsampled_gaussian_rdp_envelope(sensitivity: f64, sigma_sq: f64, alpha: f64, tau: f64) -> Result<f64> {
    check_order(alpha)?;
    check_noise(sensitivity, sigma_sq)?;
    if !(tau > 0.0 && tau <= 1.0) {
        return invalid(format!("subsampling rate must lie in (0, 1], got {tau}"));
    }
    let plain = gaussian_rdp(sensitivity, sigma_sq, alpha)?;
    if tau >= 1.0 || sensitivity == 0.0 {
        return Ok(plain);
    }
    let s = sigma_sq / (sensitivity * sensitivity);
    let s_max = (-alpha).exp() / tau - 1.0;
    if s_max < 1.5 || s < 1.5 {
        return Ok(plain);
    }
    let s_eff = s.min(s_max);
    Ok(plain.min(5.0 * tau * tau * alpha / s_eff))
}

/// `(alpha, rho)`-RDP to `(epsilon, delta)`-DP: `epsilon = rho + log(1/delta) / (alpha - 1)`.
pub fn rdp_to_dp(alpha: f64, rho: f64, delta: f64) -> Result<f64> {
    check_order(alpha)?;
    if !(rho >= 0.0) {
        return invalid(format!("rho must be >= 0, got {rho}"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return invalid(format!("delta must lie in (0, 1), got {delta}"));
    }
    Ok(rho + (1.0 / delta).ln() / (alpha - 1.0))
}

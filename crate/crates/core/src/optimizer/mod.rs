//! Private and non-private first-order optimizers.
//!
//! [`dp_srgd`] is the recursive variance-reduced method. [`dp_gd`] and [`dp_sgd`] are
//! the noisy full-batch and minibatch baselines, and [`spider`] is the noise-free
//! recursive reference.

mod baselines;
pub(crate) mod engine;
mod trace;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::objectives::ModelParams;
use crate::privacy::{NoisePlan, RdpLedger};
use crate::rng::uniform_below;
use crate::secure_agg::MessageCounters;

pub use crate::privacy::{gradient_complexity, gradient_evaluations};
pub use baselines::{dp_gd, dp_sgd, dp_sgd_sigma, spider, BaselineNoise};
pub use engine::{dp_srgd, recursive_estimate};
pub use trace::{RunTrace, TraceRecord, TRACE_HEADER};

/// Per-run knobs that are not part of the privacy plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub seed: u64,
    /// Starting point; zeros when absent.
    pub theta0: Option<ModelParams>,
    /// Run plans whose subsampling side conditions fail. Their recursive steps are
    /// charged the closed-form cost and tagged uncertified in the ledger.
    pub allow_uncertified: bool,
    /// Multiplies the `1/(2L)` step cap. The `zeta/L` step bound is unaffected.
    pub step_scale: f64,
    /// Emit a trace record every this many iterations (0 picks about 100 records).
    /// The last iteration is always recorded.
    pub trace_every: usize,
    /// Return every iterate `theta^0..theta^T` (test and audit use).
    pub keep_iterates: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            theta0: None,
            allow_uncertified: false,
            step_scale: 1.0,
            trace_every: 0,
            keep_iterates: false,
        }
    }
}

impl RunOptions {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub(crate) fn validate(&self, dim: usize) -> Result<()> {
        if !(self.step_scale > 0.0) || !self.step_scale.is_finite() {
            return invalid(format!("step scale must be finite and > 0, got {}", self.step_scale));
        }
        if let Some(t0) = &self.theta0 {
            if t0.dim() != dim {
                return invalid(format!("theta0 has dimension {}, expected {dim}", t0.dim()));
            }
            if !t0.is_finite() {
                return invalid("theta0 must be finite");
            }
        }
        Ok(())
    }

    pub(crate) fn initial_theta(&self, dim: usize) -> ModelParams {
        self.theta0.clone().unwrap_or_else(|| ModelParams::zeros(dim))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    /// Iterate chosen uniformly from `theta^0..theta^(T-1)`.
    pub theta_out: ModelParams,
    pub output_index: usize,
    pub theta_last: ModelParams,
    pub trace: RunTrace,
    /// Plan of a recursive run (absent for the baselines).
    pub plan: Option<NoisePlan>,
    /// Noise and step settings of a baseline run.
    pub baseline: Option<BaselineNoise>,
    /// Ledger at termination (absent for the non-private reference).
    pub ledger: Option<RdpLedger>,
    /// Simulated traffic of a distributed run.
    pub messages: Option<MessageCounters>,
    pub iterates: Option<Vec<ModelParams>>,
}

/// `b` distinct indices from `0..n`, every subset equally likely (partial Fisher-Yates).
pub fn sample_without_replacement<R: RngCore + ?Sized>(n: usize, b: usize, rng: &mut R) -> Result<Vec<usize>> {
    if b == 0 || b > n {
        return invalid(format!("sample size must lie in [1, n = {n}], got {b}"));
    }
    // Sparse swap table so that the cost is O(b) rather than O(n).
    let mut swapped = std::collections::HashMap::with_capacity(2 * b);
    let mut out = Vec::with_capacity(b);
    for i in 0..b {
        let j = i + uniform_below(rng, (n - i) as u64) as usize;
        let at_j = *swapped.get(&j).unwrap_or(&j);
        let at_i = *swapped.get(&i).unwrap_or(&i);
        swapped.insert(j, at_i);
        out.push(at_j);
    }
    Ok(out)
}

/// `eta = min(zeta / (L |v_p|), 1 / (2L))`, and `1/(2L)` when `v_p = 0`.
pub fn step_size(vp_norm: f64, zeta: f64, smoothness_l: f64) -> f64 {
    scaled_step_size(vp_norm, zeta, smoothness_l, 1.0)
}

/// [`step_size`] with the `1/(2L)` cap multiplied by `scale`.
pub fn scaled_step_size(vp_norm: f64, zeta: f64, smoothness_l: f64, scale: f64) -> f64 {
    let cap = scale / (2.0 * smoothness_l);
    if vp_norm > 0.0 {
        (zeta / (smoothness_l * vp_norm)).min(cap)
    } else {
        cap
    }
}

/// Uniform index in `0..num_iterates`.
pub fn select_output<R: RngCore + ?Sized>(num_iterates: usize, rng: &mut R) -> usize {
    assert!(num_iterates >= 1, "need at least one iterate");
    uniform_below(rng, num_iterates as u64) as usize
}

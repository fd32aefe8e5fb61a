use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

use super::rdp_to_dp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MechanismKind {
    Gaussian,
    SubsampledGaussian,
    /// Closed-form subsampled cost charged although its side conditions fail.
    /// Only produced for plans run with uncertified amplification explicitly allowed.
    SubsampledGaussianUncertified,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerEvent {
    pub kind: MechanismKind,
    pub rho: f64,
}

/// Running sum of RDP costs at one fixed order.
///
/// The total is kept with compensated summation so that `k` identical events add up
/// to `k * rho` to within rounding of the final result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdpLedger {
    alpha: f64,
    rho_total: f64,
    #[serde(skip)]
    compensation: f64,
    events: Vec<LedgerEvent>,
}

impl RdpLedger {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 1.0) || !alpha.is_finite() {
            return invalid(format!("Renyi order must be finite and > 1, got {alpha}"));
        }
        Ok(Self {
            alpha,
            rho_total: 0.0,
            compensation: 0.0,
            events: Vec::new(),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn rho_total(&self) -> f64 {
        self.rho_total + self.compensation
    }

    pub fn events(&self) -> &[LedgerEvent] {
        &self.events
    }

    /// Any event charged outside the proven region of the subsampling bound.
    pub fn has_uncertified_events(&self) -> bool {
        self.events
            .iter()
            .any(|e| e.kind == MechanismKind::SubsampledGaussianUncertified)
    }

    /// Add one mechanism's cost.
    pub fn compose(&mut self, kind: MechanismKind, rho: f64) -> Result<()> {
        if !(rho >= 0.0) || !rho.is_finite() {
            return invalid(format!("RDP cost must be finite and >= 0, got {rho}"));
        }
        // Neumaier summation.
        let t = self.rho_total + rho;
        if self.rho_total.abs() >= rho.abs() {
            self.compensation += (self.rho_total - t) + rho;
        } else {
            self.compensation += (rho - t) + self.rho_total;
        }
        self.rho_total = t;
        self.events.push(LedgerEvent { kind, rho });
        Ok(())
    }

    /// Same as [`compose`](Self::compose), consuming and returning the ledger.
    pub fn with_event(mut self, kind: MechanismKind, rho: f64) -> Result<Self> {
        self.compose(kind, rho)?;
        Ok(self)
    }

    pub fn epsilon(&self, delta: f64) -> Result<f64> {
        rdp_to_dp(self.alpha, self.rho_total(), delta)
    }
}

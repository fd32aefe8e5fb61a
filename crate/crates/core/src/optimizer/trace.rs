use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::objectives::ModelParams;
use crate::rng::{stream, Purpose};

use super::{select_output, RunOptions};

/// Exact header of trace CSV files.
pub const TRACE_HEADER: &str = "iter,data_passes,loss,grad_norm,vp_norm,eps_spent,wall_ms";

/// One row of a run trace.
///
/// `loss` and `grad_norm` are exact full-data diagnostics at `theta^t`. They are not
/// privatized and are not charged to the ledger.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    /// `grad_evals / n` after iteration `iter`.
    pub data_passes: f64,
    pub loss: f64,
    pub grad_norm: f64,
    pub vp_norm: f64,
    /// `epsilon` after iteration `iter`; infinite for non-private runs.
    pub eps_spent: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
    /// Per-example gradient evaluations performed by the optimizer.
    pub grad_evals: u64,
}

impl RunTrace {
    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// Mean of the recorded true gradient norms.
    pub fn mean_grad_norm(&self) -> f64 {
        if self.records.is_empty() {
            return f64::NAN;
        }
        self.records.iter().map(|r| r.grad_norm).sum::<f64>() / self.records.len() as f64
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        w.write_record(TRACE_HEADER.split(','))?;
        for r in &self.records {
            w.write_record([
                r.iter.to_string(),
                r.data_passes.to_string(),
                r.loss.to_string(),
                r.grad_norm.to_string(),
                r.vp_norm.to_string(),
                r.eps_spent.to_string(),
                format!("{:.3}", r.wall_ms),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Bookkeeping shared by every optimizer loop: output selection, trace rows, iterates.
pub(crate) struct Tracker {
    iterations: usize,
    population: usize,
    every: usize,
    output_index: usize,
    theta_out: Option<ModelParams>,
    iterates: Option<Vec<ModelParams>>,
    trace: RunTrace,
    start: Instant,
}

pub(crate) struct Finished {
    pub theta_out: ModelParams,
    pub output_index: usize,
    pub trace: RunTrace,
    pub iterates: Option<Vec<ModelParams>>,
}

impl Tracker {
    pub(crate) fn new(iterations: usize, population: usize, opts: &RunOptions) -> Self {
        let every = if opts.trace_every == 0 {
            iterations.div_ceil(100).max(1)
        } else {
            opts.trace_every
        };
        Self {
            iterations,
            population,
            every,
            output_index: select_output(iterations, &mut stream(opts.seed, Purpose::Output, 0)),
            theta_out: None,
            iterates: opts.keep_iterates.then(Vec::new),
            trace: RunTrace::default(),
            start: Instant::now(),
        }
    }

    /// Called with `theta^t` before the update of iteration `t`.
    pub(crate) fn visit(&mut self, t: usize, theta: &ModelParams) {
        if t == self.output_index {
            self.theta_out = Some(theta.clone());
        }
        if let Some(its) = self.iterates.as_mut() {
            its.push(theta.clone());
        }
    }

    pub(crate) fn add_evals(&mut self, evals: u64) {
        self.trace.grad_evals += evals;
    }

    /// Append a record for iteration `t` when one is due. `diagnostics` returns the
    /// loss and true gradient norm at `theta^t`.
    pub(crate) fn record(
        &mut self,
        t: usize,
        vp_norm: f64,
        eps_spent: f64,
        diagnostics: impl FnOnce() -> Result<(f64, f64)>,
    ) -> Result<()> {
        if t % self.every != 0 && t + 1 != self.iterations {
            return Ok(());
        }
        let (loss, grad_norm) = diagnostics()?;
        self.trace.records.push(TraceRecord {
            iter: t,
            data_passes: self.trace.grad_evals as f64 / self.population as f64,
            loss,
            grad_norm,
            vp_norm,
            eps_spent,
            wall_ms: self.start.elapsed().as_secs_f64() * 1e3,
        });
        Ok(())
    }

    pub(crate) fn finish(mut self, theta_last: &ModelParams) -> Finished {
        if let Some(its) = self.iterates.as_mut() {
            its.push(theta_last.clone());
        }
        Finished {
            theta_out: self
                .theta_out
                .expect("output index lies in 0..T and every t is visited"),
            output_index: self.output_index,
            trace: self.trace,
            iterates: self.iterates,
        }
    }
}

//! Multi-party recursive gradient descent over simulated secure aggregation.
//!
//! Each party keeps its data local and only hands encoded shares to the aggregation.
//! The iteration structure, step rule, noise streams and output selection are those
//! of [`crate::optimizer::dp_srgd`], so a distributed run over parties whose data
//! concatenate to `D` replays the centralized run on `D` up to fixed-point rounding.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::objectives::{full_gradient, loss_value, norm, Dataset, GradAccumulator, ModelParams, Objective};
use crate::optimizer::engine::{
    batch_difference, check_objective_matches, full_clipped_sum, run_recursive, Accounting, Backend, Estimate, Schedule,
};
use crate::optimizer::{sample_without_replacement, RunOptions, RunOutput};
use crate::privacy::{DistributedShape, NoisePlan};
use crate::rng::{party_stream, stream, Purpose, StreamRng};
use crate::secure_agg::{encode_fixed, AggregationView, MessageCounters, SecureAggregator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartyState {
    pub party_id: usize,
    pub local_data: Dataset,
    /// Positions of the local examples in the source dataset.
    pub source_indices: Vec<usize>,
}

impl PartyState {
    pub fn len(&self) -> usize {
        self.local_data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.local_data.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub parties: Vec<PartyState>,
    /// Source indices dropped so that every party has `floor(n/m)` examples.
    pub remainder: Vec<usize>,
}

impl Partition {
    /// The parties' data concatenated in party order. Global index `g` of this dataset
    /// is local index `g % n_tilde` of party `g / n_tilde`.
    pub fn concatenated(&self) -> Result<Dataset> {
        concatenate(&self.parties)
    }
}

pub fn concatenate(parties: &[PartyState]) -> Result<Dataset> {
    let Some(first) = parties.first() else {
        return invalid("no parties");
    };
    let examples = parties
        .iter()
        .flat_map(|p| p.local_data.examples().iter().cloned())
        .collect();
    Dataset::new(examples, first.local_data.dim())
}

/// Random split of `data` into `m` disjoint parties of `floor(n/m)` examples each.
pub fn partition<R: RngCore + ?Sized>(data: &Dataset, m: usize, rng: &mut R) -> Result<Partition> {
    let n = data.len();
    if m == 0 || m > n {
        return invalid(format!("number of parties must lie in [1, n = {n}], got {m}"));
    }
    if m > u16::MAX as usize {
        return invalid(format!("at most {} parties are supported, got {m}", u16::MAX));
    }
    let perm = sample_without_replacement(n, n, rng)?;
    let per = n / m;
    let parties = (0..m)
        .map(|j| {
            let source_indices = perm[j * per..(j + 1) * per].to_vec();
            Ok(PartyState {
                party_id: j,
                local_data: data.subset(&source_indices)?,
                source_indices,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Partition {
        parties,
        remainder: perm[m * per..].to_vec(),
    })
}

/// Per-party local index sets of one joint minibatch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointSample {
    pub per_party: Vec<Vec<usize>>,
    pub b_bar: usize,
}

impl JointSample {
    pub fn counts(&self) -> Vec<usize> {
        self.per_party.iter().map(Vec::len).collect()
    }
}

fn common_size(parties: &[PartyState]) -> Result<usize> {
    let Some(first) = parties.first() else {
        return invalid("no parties");
    };
    let n_tilde = first.len();
    if let Some(p) = parties.iter().find(|p| p.len() != n_tilde) {
        return invalid(format!(
            "parties must have equal sizes: party {} has {}, party {} has {n_tilde}",
            p.party_id,
            p.len(),
            first.party_id
        ));
    }
    let d = first.local_data.dim();
    if let Some(p) = parties.iter().find(|p| p.local_data.dim() != d) {
        return invalid(format!(
            "party {} has dimension {}, expected {d}",
            p.party_id,
            p.local_data.dim()
        ));
    }
    Ok(n_tilde)
}

/// Draw `m * b_bar` distinct indices from the combined index set and route each to its
/// owner. Per-party counts are random and sum to `m * b_bar`.
pub fn joint_sample<R: RngCore + ?Sized>(parties: &[PartyState], b_bar: usize, rng: &mut R) -> Result<JointSample> {
    let n_tilde = common_size(parties)?;
    let m = parties.len();
    if b_bar == 0 || b_bar > n_tilde {
        return invalid(format!("mean batch must lie in [1, n_tilde = {n_tilde}], got {b_bar}"));
    }
    let mut per_party = vec![Vec::new(); m];
    for g in sample_without_replacement(m * n_tilde, m * b_bar, rng)? {
        per_party[g / n_tilde].push(g % n_tilde);
    }
    Ok(JointSample { per_party, b_bar })
}

/// What an audit of a distributed run gets to see.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditLog {
    /// Each party's view of each aggregation.
    pub views: Vec<AggregationView>,
    /// Plaintext party contributions per aggregation (held back from every view).
    pub contributions: Vec<Vec<Vec<f64>>>,
    /// Released aggregate per aggregation.
    pub released: Vec<Vec<f64>>,
}

struct Distributed<'a> {
    parties: &'a [PartyState],
    obj: Objective,
    shape: DistributedShape,
    seed: u64,
    aggregator: SecureAggregator,
    acc: GradAccumulator,
    audit: Option<AuditLog>,
}

impl Distributed<'_> {
    fn aggregate(&mut self, t: usize, inputs: Vec<Vec<f64>>, sigma: f64) -> Result<Vec<f64>> {
        let mut share_rngs: Vec<StreamRng> = (0..inputs.len())
            .map(|j| party_stream(self.seed, Purpose::Share, j as u16, t as u64))
            .collect();
        let released = self.aggregator.sum_with_noise(
            &inputs,
            sigma,
            &mut share_rngs,
            &mut stream(self.seed, Purpose::Noise, t as u64),
        )?;
        if let Some(log) = self.audit.as_mut() {
            log.contributions.push(inputs);
            log.released.push(released.clone());
        }
        Ok(released)
    }
}

impl Backend for Distributed<'_> {
    fn dim(&self) -> usize {
        self.parties[0].local_data.dim()
    }

    fn population(&self) -> usize {
        self.shape.parties * self.shape.per_party
    }

    fn checkpoint(&mut self, t: usize, theta: &[f64], sigma: f64) -> Result<Estimate> {
        let d = self.dim();
        let w = 1.0 / self.population() as f64;
        let inputs: Vec<Vec<f64>> = self
            .parties
            .iter()
            .map(|p| {
                let mut v = vec![0.0; d];
                full_clipped_sum(&p.local_data, &self.obj, theta, w, &mut self.acc, &mut v);
                v
            })
            .collect();
        Ok(Estimate {
            vp: self.aggregate(t, inputs, sigma)?,
            evals: self.population() as u64,
        })
    }

    fn recursive(
        &mut self,
        t: usize,
        theta: &[f64],
        theta_prev: &[f64],
        v_prev: &[f64],
        sigma: f64,
    ) -> Result<Estimate> {
        let d = self.dim();
        let sample = joint_sample(
            self.parties,
            self.shape.mean_batch,
            &mut stream(self.seed, Purpose::Batch, t as u64),
        )?;
        let total = self.shape.parties * self.shape.mean_batch;
        let w = 1.0 / total as f64;
        let inputs: Vec<Vec<f64>> = self
            .parties
            .iter()
            .zip(&sample.per_party)
            .map(|(p, batch)| {
                let mut v = vec![0.0; d];
                batch_difference(
                    &p.local_data,
                    &self.obj,
                    batch,
                    theta,
                    theta_prev,
                    w,
                    &mut self.acc,
                    &mut v,
                );
                v
            })
            .collect();
        let mut vp = self.aggregate(t, inputs, sigma)?;
        for (x, p) in vp.iter_mut().zip(v_prev) {
            *x += p;
        }
        Ok(Estimate {
            vp,
            evals: 2 * total as u64,
        })
    }

    fn diagnostics(&self, theta: &ModelParams) -> Result<(f64, f64)> {
        // Equal party sizes make the global averages plain means over parties.
        let m = self.parties.len() as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.dim()];
        for p in self.parties {
            loss += loss_value(theta, &p.local_data, self.obj.lambda)? / m;
            for (g, x) in grad
                .iter_mut()
                .zip(full_gradient(theta, &p.local_data, self.obj.lambda)?)
            {
                *g += x / m;
            }
        }
        Ok((loss, norm(&grad)))
    }

    fn messages(&self) -> Option<MessageCounters> {
        Some(self.aggregator.counters())
    }
}

fn run(
    parties: &[PartyState],
    obj: &Objective,
    plan: &NoisePlan,
    frac_bits: u32,
    opts: &RunOptions,
    audit: bool,
) -> Result<(RunOutput, Option<AuditLog>)> {
    let Some(shape) = plan.distributed else {
        return invalid("plan was not built for a distributed run");
    };
    let n_tilde = common_size(parties)?;
    if shape.parties != parties.len() || shape.per_party != n_tilde {
        return invalid(format!(
            "plan is for {} parties of {} examples, got {} parties of {n_tilde}",
            shape.parties,
            shape.per_party,
            parties.len()
        ));
    }
    check_objective_matches(obj, plan)?;
    let accounting = Accounting::for_plan(plan, opts.allow_uncertified)?;
    let mut aggregator = SecureAggregator::new(frac_bits)?;
    if audit {
        aggregator = aggregator.recording_views();
    }
    let mut backend = Distributed {
        parties,
        obj: *obj,
        shape,
        seed: opts.seed,
        acc: GradAccumulator::new(parties[0].local_data.dim()),
        aggregator,
        audit: audit.then(AuditLog::default),
    };
    let mut out = run_recursive(
        &mut backend,
        &Schedule::for_plan(plan, obj.smoothness_l),
        Some(accounting),
        opts,
    )?;
    out.plan = Some(plan.clone());
    let log = backend.audit.take().map(|mut log| {
        log.views = backend.aggregator.views().to_vec();
        log
    });
    Ok((out, log))
}

/// Distributed private recursive gradient descent.
///
/// Checkpoints aggregate each party's local clipped gradient sum scaled by
/// `1/(m n_tilde)`; recursive steps aggregate the parties' minibatch gradient
/// differences scaled by `1/(m b_bar)` and add the public `v_p^(t-1)`. Noise is drawn
/// inside the aggregation from the same per-iteration stream a centralized run uses.
pub fn ddp_srgd(
    parties: &[PartyState],
    obj: &Objective,
    plan: &NoisePlan,
    frac_bits: u32,
    opts: &RunOptions,
) -> Result<RunOutput> {
    run(parties, obj, plan, frac_bits, opts, false).map(|(out, _)| out)
}

/// [`ddp_srgd`] that also returns every party's view of every aggregation.
pub fn ddp_srgd_audited(
    parties: &[PartyState],
    obj: &Objective,
    plan: &NoisePlan,
    frac_bits: u32,
    opts: &RunOptions,
) -> Result<(RunOutput, AuditLog)> {
    let (out, log) = run(parties, obj, plan, frac_bits, opts, true)?;
    Ok((out, log.unwrap_or_default()))
}

/// Check that no view or released value of `log` equals a plaintext contribution.
/// Returns the number of (aggregation, party) pairs checked.
pub fn audit_transcript(log: &AuditLog, frac_bits: u32) -> Result<usize> {
    let mut checked = 0;
    for (k, inputs) in log.contributions.iter().enumerate() {
        let view = log.views.get(k);
        for (j, x) in inputs.iter().enumerate() {
            let words = encode_fixed(x, frac_bits)?.words;
            if inputs.len() > 1 && x.iter().any(|&v| v != 0.0) {
                if let Some(view) = view {
                    let leaked = view.received.iter().flatten().any(|s| s.words == words)
                        || view.partial_sums.iter().any(|p| *p == words);
                    if leaked {
                        return invalid(format!("aggregation {k}: party {j}'s input appears in a party view"));
                    }
                }
                if log.released.get(k).is_some_and(|r| r == x) {
                    return invalid(format!("aggregation {k}: released value equals party {j}'s input"));
                }
            }
            checked += 1;
        }
    }
    Ok(checked)
}

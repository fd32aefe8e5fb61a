//! Simulated secure aggregation.
//!
//! This is the ideal functionality of the aggregation step, not a cryptographic
//! protocol: parties additively share fixed-point encodings of their inputs, each
//! party adds up the shares it holds, and the joint computation adds Gaussian noise
//! to the reconstructed sum before releasing it. Only the perturbed aggregate leaves
//! the computation.

mod fixed_point;
mod gaussian;
mod sharing;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub use fixed_point::{decode_fixed, encode_fixed, max_magnitude, FixedPointVector, DEFAULT_FRAC_BITS};
pub use gaussian::{
    gaussian_vector, ratio_of_uniforms_candidate, ratio_of_uniforms_counted, ratio_of_uniforms_gaussian,
    rou_acceptance_rate, ROU_SCALE,
};
pub use sharing::{reconstruct, share, ShareVector};

use fixed_point::{add_assign, check_frac_bits};

/// Plumbing counters for simulated traffic.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageCounters {
    pub aggregations: u64,
    pub rounds: u64,
    pub messages: u64,
    pub ring_words: u64,
}

impl MessageCounters {
    fn record(&mut self, messages: u64, words_each: u64) {
        self.messages += messages;
        self.ring_words += messages * words_each;
    }
}

/// What each party observed during one aggregation, kept for audits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationView {
    /// `received[k]` lists the shares party `k` got from the other parties.
    pub received: Vec<Vec<ShareVector>>,
    /// Local ring sums each party hands to the joint computation.
    pub partial_sums: Vec<Vec<u64>>,
}

/// Stateful aggregator that counts messages and optionally records party views.
#[derive(Debug, Clone)]
pub struct SecureAggregator {
    frac_bits: u32,
    counters: MessageCounters,
    views: Option<Vec<AggregationView>>,
}

impl SecureAggregator {
    pub fn new(frac_bits: u32) -> Result<Self> {
        check_frac_bits(frac_bits)?;
        Ok(Self {
            frac_bits,
            counters: MessageCounters::default(),
            views: None,
        })
    }

    /// Keep every party's view of every aggregation (memory grows with the run).
    pub fn recording_views(mut self) -> Self {
        self.views = Some(Vec::new());
        self
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn counters(&self) -> MessageCounters {
        self.counters
    }

    pub fn views(&self) -> &[AggregationView] {
        self.views.as_deref().unwrap_or(&[])
    }

    /// Release `sum_j inputs[j] + sigma z`, `z ~ N(0, I)` drawn from `noise_rng`.
    ///
    /// Party `j` draws its shares from `share_rngs[j]`. A single party has nobody to
    /// share with, so its encoding goes straight to the joint computation.
    pub fn sum_with_noise<R: RngCore, N: RngCore + ?Sized>(
        &mut self,
        inputs: &[Vec<f64>],
        sigma: f64,
        share_rngs: &mut [R],
        noise_rng: &mut N,
    ) -> Result<Vec<f64>> {
        let m = inputs.len();
        let Some(first) = inputs.first() else {
            return invalid("aggregation needs at least one party");
        };
        let d = first.len();
        if let Some((j, v)) = inputs.iter().enumerate().find(|(_, v)| v.len() != d) {
            return invalid(format!("party {j} sent length {}, expected {d}", v.len()));
        }
        if share_rngs.len() != m {
            return invalid(format!("{} share streams for {m} parties", share_rngs.len()));
        }
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return invalid(format!("noise scale must be finite and >= 0, got {sigma}"));
        }

        let noise = gaussian_vector(noise_rng, d, sigma);
        check_headroom(inputs, &noise, self.frac_bits)?;

        let encoded = inputs
            .iter()
            .map(|v| encode_fixed(v, self.frac_bits))
            .collect::<Result<Vec<_>>>()?;

        let mut partial_sums: Vec<Vec<u64>>;
        let mut received: Vec<Vec<ShareVector>> = vec![Vec::new(); m];
        if m == 1 {
            partial_sums = vec![encoded[0].words.clone()];
        } else {
            partial_sums = vec![vec![0u64; d]; m];
            for (j, enc) in encoded.iter().enumerate() {
                for s in share(enc, m, &mut share_rngs[j])? {
                    let k = s.party_id;
                    add_assign(&mut partial_sums[k], &s.words);
                    if k != j {
                        received[k].push(ShareVector {
                            party_id: j,
                            words: s.words,
                        });
                    }
                }
            }
            self.counters.rounds += 1;
            self.counters.record((m * (m - 1)) as u64, d as u64);
        }

        let mut total = encode_fixed(&noise, self.frac_bits)?;
        for p in &partial_sums {
            add_assign(&mut total.words, p);
        }
        self.counters.rounds += 1;
        self.counters.record(m as u64, d as u64);
        self.counters.aggregations += 1;

        if let Some(views) = self.views.as_mut() {
            views.push(AggregationView { received, partial_sums });
        }
        Ok(decode_fixed(&total))
    }
}

fn check_headroom(inputs: &[Vec<f64>], noise: &[f64], frac_bits: u32) -> Result<()> {
    let limit = max_magnitude(frac_bits);
    for (i, z) in noise.iter().enumerate() {
        let bound = inputs.iter().map(|v| v[i].abs()).sum::<f64>() + z.abs();
        if !(bound < limit) {
            return Err(Error::Range(format!(
                "aggregate coordinate {i} may reach {bound}, outside the fixed-point range (< {limit})"
            )));
        }
    }
    Ok(())
}

/// Mean of the party vectors plus `N(0, sigma^2 I)`, computed on the fixed-point carrier.
///
/// Shares and noise are all drawn from `rng`, shares first in party order.
pub fn secure_aggregate<R: RngCore>(
    party_vectors: &[Vec<f64>],
    sigma: f64,
    frac_bits: u32,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let m = party_vectors.len();
    if m < 2 {
        return invalid(format!("secure aggregation needs at least 2 parties, got {m}"));
    }
    let scaled: Vec<Vec<f64>> = party_vectors
        .iter()
        .map(|v| v.iter().map(|x| x / m as f64).collect())
        .collect();
    check_frac_bits(frac_bits)?;
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return invalid(format!("noise scale must be finite and >= 0, got {sigma}"));
    }
    let d = scaled[0].len();
    if let Some((j, v)) = scaled.iter().enumerate().find(|(_, v)| v.len() != d) {
        return invalid(format!("party {j} sent length {}, expected {d}", v.len()));
    }
    let encoded = scaled
        .iter()
        .map(|v| encode_fixed(v, frac_bits))
        .collect::<Result<Vec<_>>>()?;
    let mut partial = vec![0u64; d];
    for enc in &encoded {
        for s in share(enc, m, rng)? {
            add_assign(&mut partial, &s.words);
        }
    }
    let noise = gaussian_vector(rng, d, sigma);
    check_headroom(&scaled, &noise, frac_bits)?;
    let mut total = encode_fixed(&noise, frac_bits)?;
    add_assign(&mut total.words, &partial);
    Ok(decode_fixed(&total))
}

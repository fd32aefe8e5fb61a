use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

use super::fixed_point::{add_assign, check_frac_bits, FixedPointVector};

/// One party's additive share of a fixed-point vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShareVector {
    pub party_id: usize,
    pub words: Vec<u64>,
}

/// Split `v` into `m` shares: `m - 1` uniform ring vectors and a final correction.
pub fn share<R: RngCore + ?Sized>(v: &FixedPointVector, m: usize, rng: &mut R) -> Result<Vec<ShareVector>> {
    if m < 2 {
        return invalid(format!("additive sharing needs at least 2 parties, got {m}"));
    }
    let mut last = v.words.clone();
    let mut shares = Vec::with_capacity(m);
    for party_id in 0..m - 1 {
        let words: Vec<u64> = (0..v.words.len()).map(|_| rng.next_u64()).collect();
        for (l, &w) in last.iter_mut().zip(&words) {
            *l = l.wrapping_sub(w);
        }
        shares.push(ShareVector { party_id, words });
    }
    shares.push(ShareVector {
        party_id: m - 1,
        words: last,
    });
    Ok(shares)
}

/// Ring sum of all shares.
pub fn reconstruct(shares: &[ShareVector], frac_bits: u32) -> Result<FixedPointVector> {
    check_frac_bits(frac_bits)?;
    let Some(first) = shares.first() else {
        return invalid("cannot reconstruct from zero shares");
    };
    let mut words = vec![0u64; first.words.len()];
    for s in shares {
        if s.words.len() != words.len() {
            return invalid(format!(
                "share of party {} has length {}, expected {}",
                s.party_id,
                s.words.len(),
                words.len()
            ));
        }
        add_assign(&mut words, &s.words);
    }
    Ok(FixedPointVector { words, frac_bits })
}

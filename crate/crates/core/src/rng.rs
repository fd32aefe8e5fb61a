//! Counter-based seeded random streams.
//!
//! Every random draw in a run comes from a ChaCha stream keyed by the run seed and
//! addressed by `(purpose, party, counter)`. Two runs that ask for the same address
//! get the same bits, which is what lets a distributed run replay the exact noise
//! and minibatches of a centralized one.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// What a stream is used for. Occupies the top byte of the ChaCha stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    Noise = 1,
    Batch = 2,
    Output = 3,
    Partition = 4,
    Share = 5,
    Synthetic = 6,
}

pub type StreamRng = ChaCha12Rng;

/// Stream for `purpose` at `counter` (usually the iteration index).
pub fn stream(seed: u64, purpose: Purpose, counter: u64) -> StreamRng {
    party_stream(seed, purpose, 0, counter)
}

/// Stream owned by one party. `party` must fit in 16 bits and `counter` in 40.
pub fn party_stream(seed: u64, purpose: Purpose, party: u16, counter: u64) -> StreamRng {
    debug_assert!(counter < (1 << 40));
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 56) | ((party as u64) << 40) | counter);
    rng
}

/// Uniform draw from the open interval (0, 1): a 53-bit dyadic rational, zero rejected.
pub fn uniform_open01<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        if u > 0.0 {
            return u;
        }
    }
}

/// Uniform integer in `[0, bound)` by rejection, free of modulo bias.
pub fn uniform_below<R: RngCore + ?Sized>(rng: &mut R, bound: u64) -> u64 {
    assert!(bound > 0);
    let zone = u64::MAX - (u64::MAX % bound);
    loop {
        let x = rng.next_u64();
        if x < zone {
            return x % bound;
        }
    }
}

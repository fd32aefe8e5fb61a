//! Standard normal variates by the ratio-of-uniforms method.
//!
//! A proposal `(u1, u2)` uniform on `(0,1)^2` yields `x = (2 u2 - 1) sqrt(2/e) / u1`,
//! accepted iff `x^2 <= -4 ln u1`. The acceptance probability is
//! `(sqrt(2 pi) / 2) / (2 sqrt(2/e)) = sqrt(pi e) / 4`.

use rand::RngCore;

use crate::rng::uniform_open01;

/// `sqrt(2 / e)`.
pub const ROU_SCALE: f64 = 0.857_763_884_960_706_8;

/// Analytic acceptance rate `sqrt(pi e) / 4`.
pub fn rou_acceptance_rate() -> f64 {
    (std::f64::consts::PI * std::f64::consts::E).sqrt() / 4.0
}

/// Candidate from one proposal, or `None` when rejected.
pub fn ratio_of_uniforms_candidate(u1: f64, u2: f64) -> Option<f64> {
    let x = (2.0 * u2 - 1.0) * ROU_SCALE / u1;
    (x * x <= -4.0 * u1.ln()).then_some(x)
}

/// One standard normal draw together with the number of proposals it took.
pub fn ratio_of_uniforms_counted<R: RngCore + ?Sized>(rng: &mut R) -> (f64, u32) {
    let mut proposals = 0;
    loop {
        proposals += 1;
        let u1 = uniform_open01(rng);
        let u2 = uniform_open01(rng);
        if let Some(x) = ratio_of_uniforms_candidate(u1, u2) {
            return (x, proposals);
        }
    }
}

pub fn ratio_of_uniforms_gaussian<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ratio_of_uniforms_counted(rng).0
}

/// `sigma * z` with `z ~ N(0, I_d)`, coordinates drawn in index order.
pub fn gaussian_vector<R: RngCore + ?Sized>(rng: &mut R, dim: usize, sigma: f64) -> Vec<f64> {
    (0..dim).map(|_| sigma * ratio_of_uniforms_gaussian(rng)).collect()
}

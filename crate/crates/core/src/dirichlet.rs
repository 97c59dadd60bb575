//! Dirichlet sampling and densities on the probability simplex.
//!
//! Sampling works with log-Gamma variates so that concentrations far below
//! one (which the proposal produces near the simplex boundary) neither
//! underflow to an all-zero vector nor lose their relative sizes.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Open01};

use crate::special::{ln_gamma, log_sum_exp};

/// `ln G` for `G ~ Gamma(shape, 1)`.
pub fn sample_ln_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        let g: f64 = Gamma::new(shape, 1.0).expect("positive shape").sample(rng);
        libm::log(g)
    } else {
        // G(shape) = G(shape + 1) * U^(1/shape)
        let g: f64 = Gamma::new(shape + 1.0, 1.0).expect("positive shape").sample(rng);
        let u: f64 = Open01.sample(rng);
        libm::log(g) + libm::log(u) / shape
    }
}

/// Draws from `Dirichlet(alpha)`. Every entry of `alpha` must be positive.
pub fn sample<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let logs: Vec<f64> = alpha.iter().map(|&a| sample_ln_gamma(a, rng)).collect();
    let total = log_sum_exp(logs.iter().copied());
    let mut out: Vec<f64> = logs.iter().map(|&l| libm::exp(l - total)).collect();
    normalize(&mut out);
    out
}

/// `ln Gamma(sum alpha) - sum ln Gamma(alpha_i)`.
pub fn ln_normalizer(alpha: &[f64]) -> f64 {
    ln_gamma(alpha.iter().sum()) - alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>()
}

/// Log density of `Dirichlet(alpha)` at `x`; `-inf` off the open simplex.
pub fn ln_pdf(alpha: &[f64], x: &[f64]) -> f64 {
    ln_pdf_with_normalizer(alpha, ln_normalizer(alpha), x)
}

pub(crate) fn ln_pdf_with_normalizer(alpha: &[f64], ln_norm: f64, x: &[f64]) -> f64 {
    let mut acc = ln_norm;
    for (&a, &xi) in alpha.iter().zip(x) {
        if !(xi > 0.0) {
            return f64::NEG_INFINITY;
        }
        acc += (a - 1.0) * libm::log(xi);
    }
    acc
}

/// Mixes `probs` with the barycenter: `(1 - eta) p + eta / len`.
pub fn nudge(probs: &mut [f64], eta: f64) {
    let uniform = eta / probs.len() as f64;
    for p in probs.iter_mut() {
        *p = (1.0 - eta) * *p + uniform;
    }
    normalize(probs);
}

/// Rescales to unit sum.
pub fn normalize(probs: &mut [f64]) {
    let total: f64 = probs.iter().sum();
    for p in probs.iter_mut() {
        *p /= total;
    }
}

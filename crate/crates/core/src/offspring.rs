//! Offspring (reproduction) laws.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson};

use crate::error::{Error, Result};

const SIMPLEX_TOL: f64 = 1e-12;

/// Distribution of the number of offspring of a single progenitor.
#[derive(Debug, Clone, PartialEq)]
pub enum OffspringLaw {
    /// Finite support `{0, .., kappa}` with `probs.len() == kappa + 1`.
    FinitePmf {
        probs: Vec<f64>,
    },
    /// `P(X = k) = q (1 - q)^k`, `k >= 0`.
    Geometric {
        q: f64,
    },
    Binomial {
        size: u64,
        success: f64,
    },
}

impl OffspringLaw {
    /// Validated finite pmf on `{0, .., probs.len() - 1}`.
    pub fn finite(probs: Vec<f64>) -> Result<Self> {
        validate_simplex(&probs)?;
        Ok(Self::FinitePmf { probs })
    }

    pub fn geometric(q: f64) -> Result<Self> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::InvalidOffspringLaw(format!(
                "geometric parameter must lie in (0,1), got {q}"
            )));
        }
        Ok(Self::Geometric { q })
    }

    pub fn binomial(size: u64, success: f64) -> Result<Self> {
        if size < 1 || !(0.0..=1.0).contains(&success) {
            return Err(Error::InvalidOffspringLaw(format!(
                "binomial needs size >= 1 and success in [0,1], got ({size}, {success})"
            )));
        }
        Ok(Self::Binomial { size, success })
    }

    /// Offspring mean `m`.
    pub fn mean(&self) -> f64 {
        match self {
            Self::FinitePmf { probs } => pmf_mean(probs),
            Self::Geometric { q } => (1.0 - q) / q,
            Self::Binomial { size, success } => *size as f64 * success,
        }
    }

    /// Largest possible offspring count, `None` for unbounded support.
    pub fn max_offspring(&self) -> Option<u64> {
        match self {
            Self::FinitePmf { probs } => Some(probs.len() as u64 - 1),
            Self::Geometric { .. } => None,
            Self::Binomial { size, .. } => Some(*size),
        }
    }

    pub fn pmf(&self, k: u64) -> f64 {
        match self {
            Self::FinitePmf { probs } => probs.get(k as usize).copied().unwrap_or(0.0),
            Self::Geometric { q } => q * libm::pow(1.0 - q, k as f64),
            Self::Binomial { size, success } => binomial_pmf(*size, *success, k),
        }
    }

    pub fn cdf(&self, k: u64) -> f64 {
        match self {
            Self::Geometric { q } => 1.0 - libm::pow(1.0 - q, k as f64 + 1.0),
            _ => {
                let top = self.max_offspring().unwrap_or(k).min(k);
                (0..=top).map(|j| self.pmf(j)).sum::<f64>().min(1.0)
            }
        }
    }

    /// The same law written as an explicit pmf; `None` for unbounded support.
    pub fn to_finite(&self) -> Option<Self> {
        let top = self.max_offspring()?;
        Some(Self::FinitePmf {
            probs: (0..=top).map(|k| self.pmf(k)).collect(),
        })
    }

    /// Draws `X_1 + .. + X_count` for iid offspring counts.
    ///
    /// Uses exact shortcuts: binomial additivity, the Gamma-Poisson form of
    /// the negative binomial for geometric sums, and a multinomial split
    /// (sequential conditional binomials) for finite pmfs, so the cost does
    /// not grow with `count`.
    pub fn sample_sum<R: Rng + ?Sized>(&self, count: u64, rng: &mut R) -> u64 {
        if count == 0 {
            return 0;
        }
        match self {
            Self::Binomial { size, success } => {
                let trials = size.saturating_mul(count);
                Binomial::new(trials, *success)
                    .expect("validated probability")
                    .sample(rng)
            }
            Self::Geometric { q } => {
                let scale = (1.0 - q) / q;
                let rate = Gamma::new(count as f64, scale)
                    .expect("positive shape and scale")
                    .sample(rng);
                if rate <= 0.0 {
                    return 0;
                }
                let rate = rate.min(Poisson::<f64>::MAX_LAMBDA);
                Poisson::new(rate).expect("positive rate").sample(rng) as u64
            }
            Self::FinitePmf { probs } => multinomial_weighted_sum(probs, count, rng),
        }
    }
}

pub(crate) fn pmf_mean(probs: &[f64]) -> f64 {
    probs.iter().enumerate().map(|(j, p)| j as f64 * p).sum()
}

pub(crate) fn validate_simplex(probs: &[f64]) -> Result<()> {
    if probs.len() < 3 {
        return Err(Error::InvalidOffspringLaw(format!(
            "finite pmf needs kappa >= 2 (at least 3 entries), got {}",
            probs.len()
        )));
    }
    if let Some((j, p)) = probs.iter().enumerate().find(|(_, p)| !(p.is_finite() && **p >= 0.0)) {
        return Err(Error::InvalidOffspringLaw(format!(
            "probability p_{j} = {p} is negative or not finite"
        )));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidOffspringLaw(format!(
            "probabilities sum to {total}, expected 1"
        )));
    }
    Ok(())
}

fn binomial_pmf(n: u64, p: f64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    if p == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p == 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    let (n, k) = (n as f64, k as f64);
    let ln_choose = libm::lgamma(n + 1.0) - libm::lgamma(k + 1.0) - libm::lgamma(n - k + 1.0);
    libm::exp(ln_choose + k * libm::log(p) + (n - k) * libm::log1p(-p))
}

fn multinomial_weighted_sum<R: Rng + ?Sized>(probs: &[f64], count: u64, rng: &mut R) -> u64 {
    let kappa = probs.len() - 1;
    let mut remaining = count;
    let mut rest = 1.0f64;
    let mut total = 0u64;
    for (j, &p) in probs.iter().enumerate().take(kappa) {
        if remaining == 0 {
            return total;
        }
        let share = if rest > 0.0 { (p / rest).clamp(0.0, 1.0) } else { 1.0 };
        let n_j = Binomial::new(remaining, share)
            .expect("share clamped to [0,1]")
            .sample(rng);
        total = total.saturating_add((j as u64).saturating_mul(n_j));
        remaining -= n_j;
        rest -= p;
    }
    total.saturating_add((kappa as u64).saturating_mul(remaining))
}

//! Priors over the model index, the offspring pmf and the control parameter.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::dirichlet;
use crate::error::{Error, Result};
use crate::special::ln_gamma;

/// Prior on the control parameter `gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControlPrior {
    Beta { a: f64, b: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl ControlPrior {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Beta { a, b } if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) => Err(Error::Config(
                format!("beta prior needs positive parameters, got ({a}, {b})"),
            )),
            Self::Uniform { lo, hi } if !(lo < hi && lo.is_finite() && hi.is_finite()) => {
                Err(Error::Config(format!("uniform prior needs lo < hi, got ({lo}, {hi})")))
            }
            _ => Ok(()),
        }
    }

    /// The open interval `Gamma` carrying the prior mass.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            Self::Beta { .. } => (0.0, 1.0),
            Self::Uniform { lo, hi } => (lo, hi),
        }
    }

    pub fn width(&self) -> f64 {
        let (lo, hi) = self.support();
        hi - lo
    }

    pub fn contains(&self, x: f64) -> bool {
        let (lo, hi) = self.support();
        x > lo && x < hi
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if !self.contains(x) {
            return f64::NEG_INFINITY;
        }
        match *self {
            Self::Beta { a, b } => {
                ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + (a - 1.0) * libm::log(x) + (b - 1.0) * libm::log1p(-x)
            }
            Self::Uniform { lo, hi } => -libm::log(hi - lo),
        }
    }

    /// Draws a value strictly inside the support.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let x = match *self {
                Self::Beta { a, b } => Beta::new(a, b).expect("validated").sample(rng),
                Self::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            };
            if self.contains(x) {
                return x;
            }
        }
    }
}

/// Dirichlet prior on `p(kappa)`.
#[derive(Debug, Clone, PartialEq)]
pub enum DirichletPrior {
    /// Every concentration equal to the given value.
    Symmetric(f64),
    /// Explicit concentrations; entry `kappa - 2` has length `kappa + 1`.
    PerModel(Vec<Vec<f64>>),
}

impl DirichletPrior {
    pub fn alpha(&self, kappa: usize) -> Vec<f64> {
        match self {
            Self::Symmetric(a) => vec![*a; kappa + 1],
            Self::PerModel(all) => all[kappa - 2].clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    /// `kappa` is uniform on `{2, .., kappa_max}`.
    pub kappa_max: usize,
    pub dirichlet: DirichletPrior,
    pub control: ControlPrior,
    ln_norms: Vec<f64>,
}

impl PriorSpec {
    pub fn new(kappa_max: usize, dirichlet: DirichletPrior, control: ControlPrior) -> Result<Self> {
        if kappa_max < 2 {
            return Err(Error::Config(format!("kappa_max must be at least 2, got {kappa_max}")));
        }
        control.validate()?;
        if let DirichletPrior::PerModel(all) = &dirichlet {
            if all.len() != kappa_max - 1 {
                return Err(Error::Config(format!(
                    "expected {} Dirichlet parameter vectors, got {}",
                    kappa_max - 1,
                    all.len()
                )));
            }
        }
        let mut ln_norms = Vec::with_capacity(kappa_max - 1);
        for kappa in 2..=kappa_max {
            let alpha = dirichlet.alpha(kappa);
            if alpha.len() != kappa + 1 || alpha.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
                return Err(Error::Config(format!(
                    "Dirichlet parameter for kappa={kappa} needs {} positive entries",
                    kappa + 1
                )));
            }
            ln_norms.push(dirichlet::ln_normalizer(&alpha));
        }
        Ok(Self {
            kappa_max,
            dirichlet,
            control,
            ln_norms,
        })
    }

    /// The default prior: flat Dirichlet.
    pub fn flat(kappa_max: usize, control: ControlPrior) -> Result<Self> {
        Self::new(kappa_max, DirichletPrior::Symmetric(1.0), control)
    }

    pub fn models(&self) -> core::ops::RangeInclusive<usize> {
        2..=self.kappa_max
    }

    pub fn ln_pdf_probs(&self, kappa: usize, probs: &[f64]) -> f64 {
        let alpha = self.dirichlet.alpha(kappa);
        dirichlet::ln_pdf_with_normalizer(&alpha, self.ln_norms[kappa - 2], probs)
    }

    /// `(kappa, p(kappa))` drawn from the prior.
    pub fn sample_model<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, Vec<f64>) {
        let kappa = rng.random_range(2..=self.kappa_max);
        (kappa, dirichlet::sample(&self.dirichlet.alpha(kappa), rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamSeed;

    #[test]
    fn flat_beta_density() {
        let p = ControlPrior::Beta { a: 1.0, b: 1.0 };
        assert!(p.ln_pdf(0.3).abs() < 1e-15);
        assert_eq!(p.ln_pdf(1.2), f64::NEG_INFINITY);
        let u = ControlPrior::Uniform {
            lo: 5000.0,
            hi: 10000.0,
        };
        assert!((u.ln_pdf(7000.0) + libm::log(5000.0)).abs() < 1e-15);
        assert_eq!(u.width(), 5000.0);
    }

    #[test]
    fn samples_inside_support() {
        let mut rng = StreamSeed::new(4).stream(0);
        let u = ControlPrior::Uniform { lo: 2.0, hi: 3.0 };
        let b = ControlPrior::Beta { a: 0.5, b: 0.5 };
        for _ in 0..1000 {
            assert!(u.contains(u.sample(&mut rng)));
            assert!(b.contains(b.sample(&mut rng)));
        }
    }

    #[test]
    fn singleton_model_set() {
        let prior = PriorSpec::flat(2, ControlPrior::Beta { a: 1.0, b: 1.0 }).unwrap();
        let mut rng = StreamSeed::new(4).stream(1);
        for _ in 0..100 {
            let (k, p) = prior.sample_model(&mut rng);
            assert_eq!(k, 2);
            assert_eq!(p.len(), 3);
        }
        assert!((prior.ln_pdf_probs(2, &[0.2, 0.3, 0.5]) - libm::log(2.0)).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_priors() {
        let beta = ControlPrior::Beta { a: 1.0, b: 1.0 };
        assert!(PriorSpec::flat(1, beta).is_err());
        assert!(PriorSpec::new(3, DirichletPrior::Symmetric(0.0), beta).is_err());
        assert!(PriorSpec::new(3, DirichletPrior::PerModel(vec![vec![1.0; 3]]), beta).is_err());
        assert!(PriorSpec::flat(3, ControlPrior::Uniform { lo: 2.0, hi: 1.0 }).is_err());
    }
}

//! Control laws: how many of the `z` current individuals become progenitors.

use alloc::format;

use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};
use crate::growth::GrowthFamily;

/// Deterministic size map `xi(z)` used by binomial controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SizeMap {
    /// `xi(z) = z`.
    Identity,
    /// `xi(z) = z + floor(ln z)` for `z >= 1`, `xi(0) = 0`.
    LogAugmented,
}

impl SizeMap {
    pub fn apply(&self, z: u64) -> u64 {
        match self {
            Self::Identity => z,
            Self::LogAugmented if z == 0 => 0,
            Self::LogAugmented => {
                let log = libm::floor(libm::log(z as f64) + 1e-12);
                z.saturating_add(log as u64)
            }
        }
    }
}

/// A control family with its parameter `gamma` left free.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControlFamily {
    /// `phi(z) ~ Binomial(xi(z), gamma)`, `gamma` in `(0, 1)`.
    BinomialXi { xi: SizeMap },
    /// `phi(z) ~ Binomial(z, s(m, z, K))` with `gamma = K`.
    ///
    /// The success probability depends on the offspring mean `m`, so the
    /// simulator feeds the current offspring law's mean into every step.
    /// Such laws require `m > 1`.
    DensityDependent { model: GrowthFamily },
}

impl ControlFamily {
    pub fn with_parameter(self, gamma: f64) -> Result<ControlLaw> {
        match self {
            Self::BinomialXi { xi } => ControlLaw::binomial_xi(gamma, xi),
            Self::DensityDependent { model } => ControlLaw::density_dependent(model, gamma),
        }
    }

    /// Whether `tau` is a usable (invertible) function of the parameter.
    pub fn has_invertible_tau(&self) -> bool {
        matches!(self, Self::BinomialXi { .. })
    }

    /// `tau(gamma) = lim_k eps(k, gamma) / k`.
    pub fn tau(&self, gamma: f64) -> Result<f64> {
        match self {
            Self::BinomialXi { .. } => Ok(gamma),
            Self::DensityDependent { .. } => Err(Error::Domain(
                "tau vanishes for density-dependent controls and is not invertible".into(),
            )),
        }
    }

    /// Inverse of `tau`, defined on `(0, 1)` for binomial controls.
    pub fn tau_inverse(&self, u: f64) -> Result<f64> {
        match self {
            Self::BinomialXi { .. } if u > 0.0 && u < 1.0 => Ok(u),
            Self::BinomialXi { .. } => Err(Error::Domain(format!("tau inverse is defined on (0,1), got {u}"))),
            Self::DensityDependent { .. } => Err(Error::Domain(
                "tau is not invertible for density-dependent controls".into(),
            )),
        }
    }

    /// `|d tau / d gamma|`.
    pub fn tau_derivative(&self, _gamma: f64) -> Result<f64> {
        match self {
            Self::BinomialXi { .. } => Ok(1.0),
            Self::DensityDependent { .. } => {
                Err(Error::Domain("tau is constant for density-dependent controls".into()))
            }
        }
    }

    /// The offspring mean must exceed one for density-dependent laws.
    pub fn accepts_offspring_mean(&self, m: f64) -> bool {
        match self {
            Self::BinomialXi { .. } => true,
            Self::DensityDependent { .. } => m > 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControlLaw {
    BinomialXi { gamma: f64, xi: SizeMap },
    DensityDependent { model: GrowthFamily, k: f64 },
}

impl ControlLaw {
    pub fn binomial_xi(gamma: f64, xi: SizeMap) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidControlLaw(format!(
                "binomial control parameter must lie in [0,1], got {gamma}"
            )));
        }
        Ok(Self::BinomialXi { gamma, xi })
    }

    pub fn density_dependent(model: GrowthFamily, k: f64) -> Result<Self> {
        model.validate()?;
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::InvalidControlLaw(format!(
                "carrying capacity must be positive, got {k}"
            )));
        }
        Ok(Self::DensityDependent { model, k })
    }

    pub fn family(&self) -> ControlFamily {
        match *self {
            Self::BinomialXi { xi, .. } => ControlFamily::BinomialXi { xi },
            Self::DensityDependent { model, .. } => ControlFamily::DensityDependent { model },
        }
    }

    pub fn parameter(&self) -> f64 {
        match *self {
            Self::BinomialXi { gamma, .. } => gamma,
            Self::DensityDependent { k, .. } => k,
        }
    }

    /// Rejects an offspring mean the law cannot be combined with.
    pub fn check_offspring_mean(&self, m: f64) -> Result<()> {
        if self.family().accepts_offspring_mean(m) {
            Ok(())
        } else {
            Err(Error::InvalidControlLaw(format!(
                "density-dependent controls need offspring mean m > 1, got {m}"
            )))
        }
    }

    /// Binomial size for a population of `z`.
    pub fn trials(&self, z: u64) -> u64 {
        match self {
            Self::BinomialXi { xi, .. } => xi.apply(z),
            Self::DensityDependent { .. } => z,
        }
    }

    /// Success probability for a population of `z` (offspring mean `m`).
    pub fn success(&self, z: u64, m: f64) -> f64 {
        match *self {
            Self::BinomialXi { gamma, .. } => gamma,
            Self::DensityDependent { model, k } => model.success(m, z as f64, k),
        }
    }

    /// `eps(z) = E[phi(z)]`.
    pub fn control_mean(&self, z: u64, m: f64) -> Result<f64> {
        self.check_offspring_mean(m)?;
        Ok(self.trials(z) as f64 * self.success(z, m))
    }

    pub fn tau(&self) -> Result<f64> {
        self.family().tau(self.parameter())
    }

    /// Draws the number of progenitors `phi(z)`.
    pub fn sample_progenitors<R: Rng + ?Sized>(&self, z: u64, m: f64, rng: &mut R) -> u64 {
        let trials = self.trials(z);
        let p = self.success(z, m);
        if trials == 0 || p <= 0.0 {
            return 0;
        }
        Binomial::new(trials, p.min(1.0))
            .expect("success probability clamped")
            .sample(rng)
    }
}

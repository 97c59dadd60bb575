//! Density-dependent success probabilities for logistic-growth controls.
//!
//! With a binomial control of size `z` and success probability
//! `s(m, z, K)`, the one-step conditional mean is `m z s(m, z, K)`. Each
//! family below also knows its equilibrium `K_e`, the positive fixed point of
//! that map.

use core::fmt;

use alloc::format;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GrowthFamily {
    /// `s = 1 - z/K`, clamped to `[0, 1]`.
    Verhulst,
    /// `s = m^(-(z/K)^theta)`; `theta = 1` is the Ricker model.
    ThetaLogistic { theta: f64 },
    /// `s = (1 + (m-1) z/K)^(-beta)`; `beta = 1` is Beverton-Holt.
    Hassell { beta: f64 },
    /// `s = m^(-ln(z+1)/ln(K+1))`.
    Gompertz,
}

impl GrowthFamily {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::ThetaLogistic { theta } if !(theta > 0.0 && theta.is_finite()) => {
                Err(Error::InvalidControlLaw(format!("theta must be positive, got {theta}")))
            }
            Self::Hassell { beta } if !(beta > 0.0 && beta.is_finite()) => {
                Err(Error::InvalidControlLaw(format!("beta must be positive, got {beta}")))
            }
            _ => Ok(()),
        }
    }

    /// Shape parameter (theta or beta), if the family has one.
    pub fn shape(&self) -> Option<f64> {
        match *self {
            Self::ThetaLogistic { theta } => Some(theta),
            Self::Hassell { beta } => Some(beta),
            Self::Verhulst | Self::Gompertz => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Verhulst => "verhulst",
            Self::ThetaLogistic { .. } => "theta_logistic",
            Self::Hassell { .. } => "hassell",
            Self::Gompertz => "gompertz",
        }
    }

    /// Unclamped success probability.
    pub fn raw_success(&self, m: f64, z: f64, k: f64) -> f64 {
        let density = z / k;
        match *self {
            Self::Verhulst => 1.0 - density,
            Self::ThetaLogistic { theta } => libm::pow(m, -libm::pow(density, theta)),
            Self::Hassell { beta } => libm::pow(1.0 + (m - 1.0) * density, -beta),
            Self::Gompertz => libm::pow(m, -libm::log(z + 1.0) / libm::log(k + 1.0)),
        }
    }

    /// Success probability clamped to `[0, 1]`.
    pub fn success(&self, m: f64, z: f64, k: f64) -> f64 {
        let s = self.raw_success(m, z, k);
        if s.is_nan() {
            0.0
        } else {
            s.clamp(0.0, 1.0)
        }
    }

    /// Equilibrium size solving `m z s(m, z, K) = z`.
    pub fn equilibrium(&self, m: f64, k: f64) -> f64 {
        match *self {
            Self::Verhulst => (1.0 - 1.0 / m) * k,
            Self::ThetaLogistic { .. } | Self::Gompertz => k,
            Self::Hassell { beta } => k * (libm::pow(m, 1.0 / beta) - 1.0) / (m - 1.0),
        }
    }
}

impl fmt::Display for GrowthFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.shape() {
            Some(shape) => write!(f, "{}:{}", self.name(), shape),
            None => f.write_str(self.name()),
        }
    }
}

//! Relative discrepancy between observed and simulated coordinates.
//!
//! `rho(x, y) = || x/y - y/x ||_2` with coordinate-wise division. Only the
//! ratios enter, so coordinates of very different magnitude are compared on
//! an equal footing.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::process::{ObservedSample, Trajectory};

/// Strictly positive comparison coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscrepancyVector(Vec<f64>);

impl DiscrepancyVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::NonPositiveEntry { index, value });
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn rho(x: &DiscrepancyVector, y: &DiscrepancyVector) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    Ok(rho_values(x.values(), y.values()))
}

/// `rho` on raw slices; the caller guarantees equal length and positivity.
pub(crate) fn rho_values(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let d = a / b - b / a;
        acc += d * d;
    }
    libm::sqrt(acc)
}

/// Which coordinates of a path enter the raw-data comparison.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationMask {
    indices: Vec<usize>,
    include_progenitors: bool,
}

impl ObservationMask {
    pub fn of(sample: &ObservedSample) -> Self {
        Self {
            indices: sample.observed().map(|(i, _)| i).collect(),
            include_progenitors: sample.last_progenitors.is_some(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn includes_progenitors(&self) -> bool {
        self.include_progenitors
    }

    pub fn len(&self) -> usize {
        self.indices.len() + usize::from(self.include_progenitors)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Observed raw vector: sizes at observed generations, then `phi_{n-1}`.
pub fn observed_raw_vector(sample: &ObservedSample) -> Result<DiscrepancyVector> {
    let mut values: Vec<f64> = sample.observed().map(|(_, z)| z as f64).collect();
    if let Some(phi) = sample.last_progenitors {
        values.push(phi as f64);
    }
    DiscrepancyVector::new(values)
}

/// Simulated raw vector under `mask`; `None` when a coordinate is zero.
pub fn raw_vector(trajectory: &Trajectory, mask: &ObservationMask) -> Option<DiscrepancyVector> {
    let mut values = Vec::with_capacity(mask.len());
    for &i in &mask.indices {
        values.push(*trajectory.sizes.get(i)? as f64);
    }
    if mask.include_progenitors {
        values.push(trajectory.last_progenitors()? as f64);
    }
    DiscrepancyVector::new(values).ok()
}

/// Compares a simulated path to the observed raw vector without allocating.
/// Incomparable paths (a zero or missing coordinate) are at distance `+inf`.
#[derive(Debug, Clone)]
pub struct RawComparator {
    mask: ObservationMask,
    observed: DiscrepancyVector,
}

impl RawComparator {
    pub fn new(sample: &ObservedSample) -> Result<Self> {
        Ok(Self {
            mask: ObservationMask::of(sample),
            observed: observed_raw_vector(sample)?,
        })
    }

    pub fn mask(&self) -> &ObservationMask {
        &self.mask
    }

    pub fn observed(&self) -> &DiscrepancyVector {
        &self.observed
    }

    pub fn distance(&self, trajectory: &Trajectory) -> f64 {
        let obs = self.observed.values();
        let mut acc = 0.0;
        let sizes = self.mask.indices.iter().map(|&i| trajectory.sizes.get(i).copied());
        let phi = self.mask.include_progenitors.then(|| trajectory.last_progenitors());
        for (sim, &y) in sizes.chain(phi).zip(obs) {
            let x = match sim {
                Some(v) if v > 0 => v as f64,
                _ => return f64::INFINITY,
            };
            let d = x / y - y / x;
            acc += d * d;
        }
        libm::sqrt(acc)
    }
}

//! Four-coordinate summary statistic of a path.
//!
//! `(sum_{i>=1} Z_i, sum_{i>=1} Z_i / sum_{i<=n-1} Z_i, phi_{n-1}/Z_{n-1}, Z_n/phi_{n-1})`.
//! On the survival set the last three coordinates converge to `tau m`,
//! `tau` and `m`. When the observed data carry no progenitor count, only the
//! first two coordinates are used, on both sides of the comparison.

use alloc::vec::Vec;

use crate::distance::DiscrepancyVector;
use crate::error::{Error, Result};
use crate::process::{ObservedSample, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SummaryKind {
    Full,
    /// Progenitor count unobserved: only `(total, growth_ratio)`.
    Reduced,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryStatistic {
    pub total: f64,
    pub growth_ratio: f64,
    /// `phi_{n-1} / Z_{n-1}`; `None` for the reduced statistic.
    pub progenitor_fraction: Option<f64>,
    /// `Z_n / phi_{n-1}`; `None` for the reduced statistic.
    pub mean_ratio: Option<f64>,
}

impl SummaryStatistic {
    pub fn kind(&self) -> SummaryKind {
        if self.progenitor_fraction.is_some() {
            SummaryKind::Full
        } else {
            SummaryKind::Reduced
        }
    }

    pub fn coordinates(&self) -> Vec<f64> {
        let mut out = alloc::vec![self.total, self.growth_ratio];
        out.extend(self.progenitor_fraction);
        out.extend(self.mean_ratio);
        out
    }

    pub fn to_vector(&self) -> Result<DiscrepancyVector> {
        DiscrepancyVector::new(self.coordinates())
    }
}

/// How summaries are taken: which generations count and whether the
/// progenitor coordinates are present. Built from the observed sample and
/// applied identically to simulated paths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryLayout {
    observed: Vec<usize>,
    generations: usize,
    kind: SummaryKind,
}

impl SummaryLayout {
    pub fn for_sample(sample: &ObservedSample) -> Self {
        let n = sample.generations();
        let full = sample.last_progenitors.is_some() && sample.sizes[n].is_some() && sample.sizes[n - 1].is_some();
        Self {
            observed: sample.observed().map(|(i, _)| i).collect(),
            generations: n,
            kind: if full { SummaryKind::Full } else { SummaryKind::Reduced },
        }
    }

    pub fn kind(&self) -> SummaryKind {
        self.kind
    }

    pub fn dimension(&self) -> usize {
        match self.kind {
            SummaryKind::Full => 4,
            SummaryKind::Reduced => 2,
        }
    }

    pub fn of_sample(&self, sample: &ObservedSample) -> Result<SummaryStatistic> {
        self.compute(|i| sample.sizes[i].unwrap_or(0), sample.last_progenitors)
    }

    pub fn of_trajectory(&self, trajectory: &Trajectory) -> Result<SummaryStatistic> {
        if trajectory.generations() != self.generations {
            return Err(Error::LengthMismatch {
                left: trajectory.generations(),
                right: self.generations,
            });
        }
        self.compute(|i| trajectory.sizes[i], trajectory.last_progenitors())
    }

    fn compute(&self, size: impl Fn(usize) -> u64, last_progenitors: Option<u64>) -> Result<SummaryStatistic> {
        let n = self.generations;
        let mut total = 0.0;
        let mut previous = 0.0;
        for &i in &self.observed {
            let z = size(i) as f64;
            if i >= 1 {
                total += z;
            }
            if i < n {
                previous += z;
            }
        }
        if total <= 0.0 {
            return Err(Error::DivisionByZero("sum of sizes is zero"));
        }
        if previous <= 0.0 {
            return Err(Error::DivisionByZero("sum of earlier sizes is zero"));
        }
        let mut stat = SummaryStatistic {
            total,
            growth_ratio: total / previous,
            progenitor_fraction: None,
            mean_ratio: None,
        };
        if self.kind == SummaryKind::Full {
            let phi = last_progenitors.ok_or(Error::DivisionByZero("missing progenitor count"))?;
            let before = size(n - 1);
            if before == 0 {
                return Err(Error::DivisionByZero("Z_{n-1} is zero"));
            }
            if phi == 0 {
                return Err(Error::DivisionByZero("phi_{n-1} is zero"));
            }
            stat.progenitor_fraction = Some(phi as f64 / before as f64);
            stat.mean_ratio = Some(size(n) as f64 / phi as f64);
        }
        Ok(stat)
    }
}

/// Summary of a fully described sample, using its own layout.
pub fn summary(sample: &ObservedSample) -> Result<SummaryStatistic> {
    SummaryLayout::for_sample(sample).of_sample(sample)
}

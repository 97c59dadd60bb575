//! Controlled branching process trajectories.
//!
//! `Z_{k+1}` is the sum of `phi_k(Z_k)` iid offspring counts, where the
//! number of progenitors `phi_k(Z_k)` is drawn from the control law. An
//! empty sum is zero, so extinction is absorbing.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::control::ControlLaw;
use crate::error::{Error, Result};
use crate::offspring::OffspringLaw;

/// Default population ceiling for simulated paths.
pub const DEFAULT_MAX_POPULATION: u64 = 1_000_000_000_000;

/// A simulated path `Z_0..Z_n` with its progenitor counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub sizes: Vec<u64>,
    /// `phi_k(Z_k)` for `k = 0..n-1`.
    pub progenitors: Vec<u64>,
    /// First generation with `Z_k = 0`.
    pub extinct_at: Option<usize>,
    /// Set when some generation hit the population ceiling.
    pub saturated: bool,
}

impl Trajectory {
    pub fn generations(&self) -> usize {
        self.sizes.len() - 1
    }

    /// `phi_{n-1}(Z_{n-1})`.
    pub fn last_progenitors(&self) -> Option<u64> {
        self.progenitors.last().copied()
    }

    /// Builds a trajectory from recorded sizes and the last progenitor count
    /// only; earlier progenitor counts are unknown.
    pub fn from_sizes(sizes: Vec<u64>, last_progenitors: u64) -> Self {
        let extinct_at = sizes.iter().position(|&z| z == 0);
        Self {
            sizes,
            progenitors: alloc::vec![last_progenitors],
            extinct_at,
            saturated: false,
        }
    }
}

/// Observed data: sizes with gaps, plus optionally `phi_{n-1}(Z_{n-1})`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservedSample {
    pub sizes: Vec<Option<u64>>,
    pub last_progenitors: Option<u64>,
}

impl ObservedSample {
    pub fn new(sizes: Vec<Option<u64>>, last_progenitors: Option<u64>) -> Result<Self> {
        match sizes.first() {
            Some(Some(z0)) if *z0 >= 1 => {}
            _ => return Err(Error::InvalidSample("Z_0 must be observed and at least 1".into())),
        }
        let observed = sizes.iter().filter(|z| z.is_some()).count();
        if observed < 2 {
            return Err(Error::InvalidSample(format!(
                "need at least 2 observed generations, got {observed}"
            )));
        }
        Ok(Self {
            sizes,
            last_progenitors,
        })
    }

    /// Fully observed sizes.
    pub fn complete(sizes: &[u64], last_progenitors: Option<u64>) -> Result<Self> {
        Self::new(sizes.iter().map(|&z| Some(z)).collect(), last_progenitors)
    }

    pub fn generations(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn initial_size(&self) -> u64 {
        self.sizes[0].expect("validated at construction")
    }

    /// Observed `(generation, size)` pairs.
    pub fn observed(&self) -> impl Iterator<Item = (usize, u64)> + '_ {
        self.sizes.iter().enumerate().filter_map(|(i, z)| z.map(|z| (i, z)))
    }
}

/// Simulates `n` generations starting from `z0` individuals.
///
/// Density-dependent controls receive `offspring.mean()` at every step.
/// Sizes above `max_population` are clamped to it and the trajectory is
/// flagged as saturated.
pub fn simulate<R: Rng + ?Sized>(
    offspring: &OffspringLaw,
    control: &ControlLaw,
    z0: u64,
    n: usize,
    max_population: u64,
    rng: &mut R,
) -> Trajectory {
    let m = offspring.mean();
    let mut sizes = Vec::with_capacity(n + 1);
    let mut progenitors = Vec::with_capacity(n);
    let mut extinct_at = None;
    let mut saturated = false;
    let mut z = z0.min(max_population);
    sizes.push(z);
    for k in 0..n {
        let phi = if z == 0 {
            0
        } else {
            control.sample_progenitors(z, m, rng)
        };
        progenitors.push(phi);
        let mut next = offspring.sample_sum(phi, rng);
        if next > max_population {
            next = max_population;
            saturated = true;
        }
        if next == 0 && extinct_at.is_none() {
            extinct_at = Some(k + 1);
        }
        z = next;
        sizes.push(z);
    }
    Trajectory {
        sizes,
        progenitors,
        extinct_at,
        saturated,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::SizeMap;
    use crate::rng::StreamSeed;

    #[test]
    fn identity_dynamics() {
        let one = OffspringLaw::finite(alloc::vec![0.0, 1.0, 0.0]).unwrap();
        let control = ControlLaw::binomial_xi(1.0, SizeMap::Identity).unwrap();
        let traj = simulate(
            &one,
            &control,
            17,
            12,
            DEFAULT_MAX_POPULATION,
            &mut StreamSeed::new(3).stream(0),
        );
        assert!(traj.sizes.iter().all(|&z| z == 17));
        assert_eq!(traj.last_progenitors(), Some(17));
        assert_eq!(traj.extinct_at, None);
    }

    #[test]
    fn immediate_extinction() {
        let zero = OffspringLaw::finite(alloc::vec![1.0, 0.0, 0.0]).unwrap();
        let control = ControlLaw::binomial_xi(0.9, SizeMap::LogAugmented).unwrap();
        let traj = simulate(
            &zero,
            &control,
            5,
            6,
            DEFAULT_MAX_POPULATION,
            &mut StreamSeed::new(3).stream(0),
        );
        assert_eq!(traj.extinct_at, Some(1));
        assert!(traj.sizes[1..].iter().all(|&z| z == 0));
    }

    #[test]
    fn reproducible_and_absorbing() {
        let law = OffspringLaw::geometric(0.4).unwrap();
        let control = ControlLaw::binomial_xi(0.75, SizeMap::LogAugmented).unwrap();
        let seed = StreamSeed::new(11);
        for i in 0..200 {
            let a = simulate(&law, &control, 1, 30, DEFAULT_MAX_POPULATION, &mut seed.stream(i));
            let b = simulate(&law, &control, 1, 30, DEFAULT_MAX_POPULATION, &mut seed.stream(i));
            assert_eq!(a, b);
            if let Some(k) = a.extinct_at {
                assert!(a.sizes[k..].iter().all(|&z| z == 0));
                assert!(a.sizes[..k].iter().all(|&z| z > 0));
            }
            for (phi, next) in a.progenitors.iter().zip(&a.sizes[1..]) {
                if *phi == 0 {
                    assert_eq!(*next, 0);
                }
            }
        }
    }

    #[test]
    fn saturation_caps_sizes() {
        let law = OffspringLaw::binomial(15, 1.0).unwrap();
        let control = ControlLaw::binomial_xi(1.0, SizeMap::Identity).unwrap();
        let traj = simulate(&law, &control, 1, 40, 1_000_000, &mut StreamSeed::new(1).stream(0));
        assert!(traj.saturated);
        assert_eq!(*traj.sizes.last().unwrap(), 1_000_000);
    }

    #[test]
    fn observed_sample_validation() {
        assert!(ObservedSample::complete(&[0, 3], None).is_err());
        assert!(ObservedSample::complete(&[3], None).is_err());
        assert!(ObservedSample::new(alloc::vec![None, Some(3), Some(4)], None).is_err());
        assert!(ObservedSample::new(alloc::vec![Some(2), None, None], None).is_err());
        let ok = ObservedSample::new(alloc::vec![Some(2), None, Some(5)], Some(1)).unwrap();
        assert_eq!(ok.generations(), 2);
        assert_eq!(ok.observed().count(), 2);
    }
}

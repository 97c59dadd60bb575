//! Fitting density-dependent (logistic-growth) controls to a size series
//! and ranking the families by the variance their forecasts explain.

use alloc::format;
use alloc::vec::Vec;

use crate::control::{ControlFamily, ControlLaw};
use crate::error::{Error, Result};
use crate::growth::GrowthFamily;
use crate::offspring::OffspringLaw;
use crate::pool::Executor;
use crate::prior::{ControlPrior, PriorSpec};
use crate::process::{simulate, ObservedSample};
use crate::refine::{refine, RefineConfig, RefineOutput};
use crate::rng::StreamSeed;
use crate::smc::{run_smc, ModelSpec, SmcConfig};

const FORECAST_DOMAIN: u64 = 0x00F0_CA57;

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthFitConfig {
    pub families: Vec<GrowthFamily>,
    /// Uniform prior interval for the carrying capacity `K`.
    pub k_prior: (f64, f64),
    pub kappa_max: usize,
    /// Replicate simulations per forecast.
    pub replicates: usize,
    pub smc: SmcConfig,
    pub refine: RefineConfig,
    pub max_population: u64,
}

impl GrowthFitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.families.is_empty() {
            return Err(Error::Config("the family grid is empty".into()));
        }
        for f in &self.families {
            f.validate()?;
        }
        let (lo, hi) = self.k_prior;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::Config(format!("K prior needs 0 < lo < hi, got ({lo}, {hi})")));
        }
        if self.replicates == 0 {
            return Err(Error::Config("forecast replicates must be positive".into()));
        }
        self.smc.validate()?;
        self.refine.validate()
    }

    fn prior(&self) -> Result<PriorSpec> {
        PriorSpec::flat(
            self.kappa_max,
            ControlPrior::Uniform {
                lo: self.k_prior.0,
                hi: self.k_prior.1,
            },
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitScore {
    pub family: GrowthFamily,
    pub r2g: f64,
    /// Forecast of each generation from the previous observed one; `None`
    /// where nothing is forecast (generation 0 and unobserved generations).
    pub expected: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthFit {
    pub family: GrowthFamily,
    pub stage2: RefineOutput,
    /// Weighted posterior mean of the offspring pmf.
    pub mean_probs: Vec<f64>,
    /// Weighted posterior mean of `K`.
    pub mean_k: f64,
    pub score: FitScore,
}

/// `1 - SSE / SST` over the observed generations `i >= 1` that have a
/// forecast.
pub fn r2g(observed: &ObservedSample, expected: &[Option<f64>]) -> Result<f64> {
    if expected.len() != observed.sizes.len() {
        return Err(Error::LengthMismatch {
            left: expected.len(),
            right: observed.sizes.len(),
        });
    }
    let pairs: Vec<(f64, f64)> = observed
        .observed()
        .filter(|(i, _)| *i >= 1)
        .filter_map(|(i, z)| expected[i].map(|e| (z as f64, e)))
        .collect();
    if pairs.len() < 3 {
        return Err(Error::InvalidSample(format!(
            "R2 needs at least 3 forecast points, got {}",
            pairs.len()
        )));
    }
    let mean = pairs.iter().map(|p| p.0).sum::<f64>() / pairs.len() as f64;
    let sst: f64 = pairs.iter().map(|(z, _)| (z - mean) * (z - mean)).sum();
    if sst == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let sse: f64 = pairs.iter().map(|(z, e)| (z - e) * (z - e)).sum();
    Ok(1.0 - sse / sst)
}

/// Forecasts every observed generation from the previous observed one, as
/// the mean of `replicates` simulations.
pub fn forecast<E: Executor + ?Sized>(
    observed: &ObservedSample,
    offspring: &OffspringLaw,
    control: &ControlLaw,
    replicates: usize,
    max_population: u64,
    seed: &StreamSeed,
    executor: &E,
) -> Vec<Option<f64>> {
    let points: Vec<(usize, usize, u64)> = {
        let obs: Vec<(usize, u64)> = observed.observed().collect();
        obs.windows(2).map(|w| (w[1].0, w[1].0 - w[0].0, w[0].1)).collect()
    };
    let mut expected = alloc::vec![None; observed.sizes.len()];
    for (target, steps, from) in points {
        let stream = seed.derive(target as u64);
        let finals = executor.map(0..replicates as u64, |r| {
            let traj = simulate(offspring, control, from, steps, max_population, &mut stream.stream(r));
            *traj.sizes.last().expect("non-empty path") as f64
        });
        expected[target] = Some(finals.iter().sum::<f64>() / replicates as f64);
    }
    expected
}

/// Fits one family: first-stage SMC, second-stage refinement with the
/// summary layout the data allow, then forecasts from the posterior means.
pub fn fit_family<E: Executor + ?Sized>(
    observed: &ObservedSample,
    family: GrowthFamily,
    cfg: &GrowthFitConfig,
    seed: &StreamSeed,
    executor: &E,
) -> Result<GrowthFit> {
    cfg.validate()?;
    let prior = cfg.prior()?;
    let mut model = ModelSpec::new(observed.clone(), ControlFamily::DensityDependent { model: family });
    model.max_population = cfg.max_population;
    let last = run_smc(&model, &prior, &cfg.smc, seed, executor, |_| {})?;
    let stage2 = refine(
        &last.particles,
        &model,
        cfg.kappa_max,
        &prior.control,
        &cfg.refine,
        None,
    )?;

    let rows = &stage2.adjusted.rows;
    let total: f64 = rows.iter().map(|r| r.weight).sum();
    let width = stage2.kappa + 1;
    let mut mean_probs = alloc::vec![0.0; width];
    let mut mean_k = 0.0;
    for r in rows {
        for (acc, p) in mean_probs.iter_mut().zip(&r.probs) {
            *acc += r.weight * p / total;
        }
        mean_k += r.weight * r.gamma / total;
    }
    crate::dirichlet::normalize(&mut mean_probs);
    let offspring = OffspringLaw::FinitePmf {
        probs: mean_probs.clone(),
    };
    let control = ControlLaw::density_dependent(family, mean_k)?;
    control.check_offspring_mean(offspring.mean())?;
    let expected = forecast(
        observed,
        &offspring,
        &control,
        cfg.replicates,
        cfg.max_population,
        &seed.derive(FORECAST_DOMAIN),
        executor,
    );
    let r2g = r2g(observed, &expected)?;
    Ok(GrowthFit {
        family,
        stage2,
        mean_probs,
        mean_k,
        score: FitScore { family, r2g, expected },
    })
}

/// Fits every family of the grid, each on its own seed substream.
pub fn fit_growth<E: Executor + ?Sized>(
    observed: &ObservedSample,
    cfg: &GrowthFitConfig,
    seed: &StreamSeed,
    executor: &E,
) -> Vec<Result<GrowthFit>> {
    cfg.families
        .iter()
        .enumerate()
        .map(|(g, family)| fit_family(observed, *family, cfg, &seed.derive(g as u64 + 1), executor))
        .collect()
}

fn tie_key(family: &GrowthFamily) -> (usize, f64, usize) {
    let order = match family {
        GrowthFamily::Verhulst => 0,
        GrowthFamily::ThetaLogistic { .. } => 1,
        GrowthFamily::Hassell { .. } => 2,
        GrowthFamily::Gompertz => 3,
    };
    match family.shape() {
        Some(s) => (1, s, order),
        None => (0, 0.0, order),
    }
}

/// Highest `r2g`; ties go to fewer shape parameters, then the smaller
/// shape, then the order Verhulst, theta-logistic, Hassell, Gompertz.
pub fn select_model(scores: &[FitScore]) -> Option<&FitScore> {
    scores.iter().min_by(|a, b| {
        b.r2g.total_cmp(&a.r2g).then_with(|| {
            let (ka, kb) = (tie_key(&a.family), tie_key(&b.family));
            ka.0.cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(ka.2.cmp(&kb.2))
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn sample() -> ObservedSample {
        ObservedSample::new(vec![Some(10), Some(20), None, Some(40), Some(30)], None).unwrap()
    }

    #[test]
    fn perfect_and_mean_only_fits() {
        let s = sample();
        let perfect = vec![None, Some(20.0), None, Some(40.0), Some(30.0)];
        assert_eq!(r2g(&s, &perfect).unwrap(), 1.0);
        let flat = vec![None, Some(30.0), None, Some(30.0), Some(30.0)];
        assert_eq!(r2g(&s, &flat).unwrap(), 0.0);
        let worse = vec![None, Some(40.0), None, Some(20.0), Some(30.0)];
        assert!(r2g(&s, &worse).unwrap() < 0.0);
    }

    #[test]
    fn r2g_errors() {
        let flat = ObservedSample::complete(&[5, 5, 5, 5], None).unwrap();
        let e = vec![None, Some(5.0), Some(5.0), Some(5.0)];
        assert!(matches!(r2g(&flat, &e), Err(Error::ZeroVariance)));
        let short = ObservedSample::complete(&[5, 6, 7], None).unwrap();
        assert!(r2g(&short, &[None, Some(6.0), Some(7.0)]).is_err());
    }

    fn score(family: GrowthFamily, r2g: f64) -> FitScore {
        FitScore {
            family,
            r2g,
            expected: Vec::new(),
        }
    }

    #[test]
    fn selection_rules() {
        let one = [score(GrowthFamily::Gompertz, 0.3)];
        assert_eq!(select_model(&one).unwrap().family, GrowthFamily::Gompertz);
        let three = [
            score(GrowthFamily::Verhulst, 0.91),
            score(GrowthFamily::ThetaLogistic { theta: 2.0 }, 0.99),
            score(GrowthFamily::Gompertz, 0.95),
        ];
        assert_eq!(select_model(&three).unwrap().r2g, 0.99);
        let tie = [score(GrowthFamily::Gompertz, 0.9), score(GrowthFamily::Verhulst, 0.9)];
        assert_eq!(select_model(&tie).unwrap().family, GrowthFamily::Verhulst);
        let shapes = [
            score(GrowthFamily::Hassell { beta: 1.25 }, 0.8),
            score(GrowthFamily::ThetaLogistic { theta: 2.0 }, 0.8),
            score(GrowthFamily::Hassell { beta: 0.5 }, 0.8),
        ];
        assert_eq!(
            select_model(&shapes).unwrap().family,
            GrowthFamily::Hassell { beta: 0.5 }
        );
        let unshaped_first = [
            score(GrowthFamily::Hassell { beta: 0.5 }, 0.8),
            score(GrowthFamily::Gompertz, 0.8),
        ];
        assert_eq!(select_model(&unshaped_first).unwrap().family, GrowthFamily::Gompertz);
        assert!(select_model(&[]).is_none());
    }

    #[test]
    fn forecasts_respect_gaps() {
        let s = sample();
        let law = OffspringLaw::finite(vec![0.0, 0.0, 1.0]).unwrap();
        let control = ControlLaw::density_dependent(GrowthFamily::Verhulst, 1e9).unwrap();
        let e = forecast(
            &s,
            &law,
            &control,
            50,
            u64::MAX,
            &StreamSeed::new(1),
            &crate::pool::Sequential,
        );
        assert_eq!(e[0], None);
        assert_eq!(e[2], None);
        // two steps from 20 with near-certain doubling
        assert!((e[3].unwrap() - 80.0).abs() < 1.0);
        assert!((e[4].unwrap() - 80.0).abs() < 1.0);
    }
}

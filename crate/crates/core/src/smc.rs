//! First stage: ABC SMC over the offspring capacity `kappa` jointly with
//! `(p(kappa), gamma)`.
//!
//! Iteration 1 is rejection ABC from the prior. Later iterations pick a model
//! uniformly among the surviving ones, resample a parent from that model's
//! population, perturb it with [`ProposalKernel`] and reweight the survivors
//! by prior over proposal-mixture density, normalised within each model.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::control::ControlFamily;
use crate::dirichlet;
use crate::distance::RawComparator;
use crate::error::{Error, Result};
use crate::offspring::{pmf_mean, OffspringLaw};
use crate::pool::{run_pool, Executor, PoolConfig, ToleranceSchedule};
use crate::prior::{ControlPrior, PriorSpec};
use crate::process::{simulate, ObservedSample, Trajectory, DEFAULT_MAX_POPULATION};
use crate::rng::StreamSeed;
use crate::special::{log_sum_exp, normal_interval_mass, normal_ln_pdf};

/// Mixing rate with the barycenter applied to parents and proposals.
pub const BOUNDARY_NUDGE: f64 = 1e-6;

/// What is being fitted: the data, the control family and simulation limits.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub sample: ObservedSample,
    pub control: ControlFamily,
    pub max_population: u64,
}

impl ModelSpec {
    pub fn new(sample: ObservedSample, control: ControlFamily) -> Self {
        Self {
            sample,
            control,
            max_population: DEFAULT_MAX_POPULATION,
        }
    }

    /// Simulates a path with the sample's initial size and length. `None`
    /// when the pair `(p, gamma)` is not admissible (a density-dependent
    /// control with `m <= 1`).
    pub fn simulate<R: Rng + ?Sized>(&self, probs: &[f64], gamma: f64, rng: &mut R) -> Option<Trajectory> {
        let offspring = OffspringLaw::FinitePmf { probs: probs.to_vec() };
        if !self.control.accepts_offspring_mean(offspring.mean()) {
            return None;
        }
        let control = self.control.with_parameter(gamma).ok()?;
        Some(simulate(
            &offspring,
            &control,
            self.sample.initial_size(),
            self.sample.generations(),
            self.max_population,
            rng,
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmcConfig {
    pub particles: usize,
    pub schedule: ToleranceSchedule,
    /// Dirichlet proposal concentration `a`.
    pub tuning_a: f64,
    /// Lower bound on the proposal variance; `None` means `1e-8` times the
    /// width of the control-parameter support.
    pub sigma_floor: Option<f64>,
    /// Attempts allowed per pool, as a multiple of the pool size.
    pub max_discard_ratio: f64,
    /// Redraws of the control-parameter proposal before giving up.
    pub gamma_redraws: u32,
}

impl SmcConfig {
    pub fn new(particles: usize, pools: &[usize], tuning_a: f64) -> Result<Self> {
        let cfg = Self {
            particles,
            schedule: ToleranceSchedule::from_pools(pools, particles)?,
            tuning_a,
            sigma_floor: None,
            max_discard_ratio: 100.0,
            gamma_redraws: 1000,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tuning_a > 0.0 && self.tuning_a.is_finite()) {
            return Err(Error::Config(format!(
                "tuning_a must be positive, got {}",
                self.tuning_a
            )));
        }
        if let Some(f) = self.sigma_floor {
            if !(f >= 0.0) {
                return Err(Error::Config(format!("sigma_floor must be >= 0, got {f}")));
            }
        }
        if self.gamma_redraws == 0 {
            return Err(Error::Config("gamma_redraws must be positive".into()));
        }
        PoolConfig::new(self.schedule.pool_sizes[0], self.particles, self.max_discard_ratio)?;
        Ok(())
    }

    pub fn iterations(&self) -> usize {
        self.schedule.iterations()
    }

    fn variance_floor(&self, prior: &ControlPrior) -> f64 {
        self.sigma_floor.unwrap_or(1e-8 * prior.width())
    }

    fn pool(&self, t: usize) -> Result<PoolConfig> {
        PoolConfig::new(self.schedule.pool_sizes[t - 1], self.particles, self.max_discard_ratio)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub kappa: usize,
    pub probs: Vec<f64>,
    pub gamma: f64,
    /// Importance weight normalised within the particle's `kappa` group
    /// (`1/N` at the first iteration).
    pub weight: f64,
    /// Importance weight normalised over the whole population; summed per
    /// group it estimates the posterior of `kappa`.
    pub model_weight: f64,
    pub distance: f64,
    pub trajectory: Trajectory,
}

impl Particle {
    pub fn offspring_mean(&self) -> f64 {
        pmf_mean(&self.probs)
    }
}

/// Output of one SMC iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub iteration: usize,
    /// Largest retained distance.
    pub epsilon: f64,
    /// Simulations run, including discarded ones.
    pub attempts: u64,
    pub particles: Vec<Particle>,
    /// Proposal standard deviation used for each model (iterations >= 2).
    pub sigmas: Vec<(usize, f64)>,
    /// Models whose weights all underflowed and were removed.
    pub dropped: Vec<usize>,
}

impl Population {
    /// Particle indices grouped by `kappa`, in increasing `kappa`.
    pub fn groups(&self) -> Vec<(usize, Vec<usize>)> {
        group_indices(&self.particles)
    }
}

fn group_indices(particles: &[Particle]) -> Vec<(usize, Vec<usize>)> {
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, p) in particles.iter().enumerate() {
        match groups.binary_search_by_key(&p.kappa, |g| g.0) {
            Ok(g) => groups[g].1.push(i),
            Err(g) => groups.insert(g, (p.kappa, alloc::vec![i])),
        }
    }
    groups
}

/// A parent prepared for proposing from and for density evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ParentSnapshot {
    pub kappa: usize,
    /// `a` times the nudged parent pmf.
    pub alpha: Vec<f64>,
    ln_norm: f64,
    /// Mean of the control-parameter proposal: `tau(gamma*) m(p*)` when
    /// `tau` is invertible, else `gamma*`.
    pub center: f64,
}

/// The joint proposal `q_t(p, gamma | p*, gamma*)`.
///
/// `p ~ Dirichlet(a p*)`. When `tau` is invertible,
/// `gamma = tau^{-1}(U / m(p))` with `U ~ N(tau(gamma*) m(p*), sigma^2)`,
/// redrawn until `gamma` falls in the prior support; otherwise `gamma` is a
/// normal random walk truncated to the support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposalKernel {
    pub tuning_a: f64,
    pub family: ControlFamily,
    pub support: (f64, f64),
    pub redraws: u32,
}

impl ProposalKernel {
    pub fn new(cfg: &SmcConfig, family: ControlFamily, prior: &ControlPrior) -> Self {
        Self {
            tuning_a: cfg.tuning_a,
            family,
            support: prior.support(),
            redraws: cfg.gamma_redraws,
        }
    }

    pub fn snapshot(&self, kappa: usize, probs: &[f64], gamma: f64) -> ParentSnapshot {
        let mut nudged = probs.to_vec();
        dirichlet::nudge(&mut nudged, BOUNDARY_NUDGE);
        let center = if self.family.has_invertible_tau() {
            self.family.tau(gamma).expect("invertible tau") * pmf_mean(&nudged)
        } else {
            gamma
        };
        let alpha: Vec<f64> = nudged.iter().map(|p| self.tuning_a * p).collect();
        ParentSnapshot {
            kappa,
            ln_norm: dirichlet::ln_normalizer(&alpha),
            alpha,
            center,
        }
    }

    /// Draws `(p', gamma')`; `None` when the redraw budget runs out.
    pub fn propose<R: Rng + ?Sized>(
        &self,
        parent: &ParentSnapshot,
        sigma: f64,
        rng: &mut R,
    ) -> Option<(Vec<f64>, f64)> {
        let mut probs = dirichlet::sample(&parent.alpha, rng);
        dirichlet::nudge(&mut probs, BOUNDARY_NUDGE);
        let m = pmf_mean(&probs);
        let (lo, hi) = self.support;
        for _ in 0..self.redraws {
            let z: f64 = StandardNormal.sample(rng);
            let u = parent.center + sigma * z;
            let gamma = if self.family.has_invertible_tau() {
                match self.family.tau_inverse(u / m) {
                    Ok(g) => g,
                    Err(_) => continue,
                }
            } else {
                u
            };
            if gamma > lo && gamma < hi {
                return Some((probs, gamma));
            }
        }
        None
    }

    /// `ln q_t(p', gamma' | parent)`; `-inf` outside the support or for a
    /// different model.
    pub fn ln_density(&self, kappa: usize, probs: &[f64], gamma: f64, parent: &ParentSnapshot, sigma: f64) -> f64 {
        if kappa != parent.kappa {
            return f64::NEG_INFINITY;
        }
        let (lo, hi) = self.support;
        if !(gamma > lo && gamma < hi) {
            return f64::NEG_INFINITY;
        }
        let ln_p = dirichlet::ln_pdf_with_normalizer(&parent.alpha, parent.ln_norm, probs);
        let ln_g = if self.family.has_invertible_tau() {
            let m = pmf_mean(probs);
            let tau = |g: f64| self.family.tau(g).expect("invertible tau");
            let u = tau(gamma) * m;
            let jacobian = m * self.family.tau_derivative(gamma).expect("invertible tau");
            let mass = normal_interval_mass(tau(lo) * m, tau(hi) * m, parent.center, sigma);
            normal_ln_pdf(u, parent.center, sigma) + libm::log(jacobian) - libm::log(mass)
        } else {
            let mass = normal_interval_mass(lo, hi, parent.center, sigma);
            normal_ln_pdf(gamma, parent.center, sigma) - libm::log(mass)
        };
        let total = ln_p + ln_g;
        if total.is_nan() {
            f64::NEG_INFINITY
        } else {
            total
        }
    }

    /// Density of proposing `(probs', gamma')` from a stored particle.
    pub fn density(&self, kappa: usize, probs: &[f64], gamma: f64, parent: &Particle, sigma: f64) -> f64 {
        let snap = self.snapshot(parent.kappa, &parent.probs, parent.gamma);
        libm::exp(self.ln_density(kappa, probs, gamma, &snap, sigma))
    }
}

struct Candidate {
    kappa: usize,
    probs: Vec<f64>,
    gamma: f64,
    trajectory: Trajectory,
}

/// Iteration 1: rejection ABC from the prior, all weights `1/N`.
pub fn smc_iteration_1<E: Executor + ?Sized>(
    model: &ModelSpec,
    prior: &PriorSpec,
    cfg: &SmcConfig,
    seed: &StreamSeed,
    executor: &E,
) -> Result<Population> {
    let comparator = RawComparator::new(&model.sample)?;
    let pool = cfg.pool(1)?;
    let outcome = run_pool(executor, &seed.derive(1), &pool, |_, rng| {
        let (kappa, mut probs) = prior.sample_model(rng);
        dirichlet::nudge(&mut probs, BOUNDARY_NUDGE);
        let gamma = prior.control.sample(rng);
        let trajectory = model.simulate(&probs, gamma, rng)?;
        let d = comparator.distance(&trajectory);
        Some((
            d,
            Candidate {
                kappa,
                probs,
                gamma,
                trajectory,
            },
        ))
    })?;
    let n = outcome.retained.len() as f64;
    let particles = outcome
        .retained
        .into_iter()
        .map(|s| Particle {
            kappa: s.item.kappa,
            probs: s.item.probs,
            gamma: s.item.gamma,
            weight: 1.0 / n,
            model_weight: 1.0 / n,
            distance: s.distance,
            trajectory: s.item.trajectory,
        })
        .collect();
    Ok(Population {
        iteration: 1,
        epsilon: outcome.epsilon,
        attempts: outcome.attempts,
        particles,
        sigmas: Vec::new(),
        dropped: Vec::new(),
    })
}

/// `sigma_t^2 = 2 Var_w(gamma)` within one model, floored at `floor`.
pub fn proposal_variance(gammas: &[f64], weights: &[f64], floor: f64) -> f64 {
    let total: f64 = weights.iter().sum();
    let mean = gammas.iter().zip(weights).map(|(g, w)| g * w).sum::<f64>() / total;
    let var = gammas
        .iter()
        .zip(weights)
        .map(|(g, w)| w * (g - mean) * (g - mean))
        .sum::<f64>()
        / total;
    (2.0 * var).max(floor)
}

struct Group {
    kappa: usize,
    parents: Vec<ParentSnapshot>,
    /// Parent weights normalised within the group, as logs.
    ln_weights: Vec<f64>,
    cumulative: Vec<f64>,
    sigma: f64,
}

impl Group {
    fn sample_parent<R: Rng + ?Sized>(&self, rng: &mut R) -> &ParentSnapshot {
        let total = *self.cumulative.last().expect("non-empty group");
        let u = rng.random::<f64>() * total;
        let i = self.cumulative.partition_point(|&c| c <= u);
        &self.parents[i.min(self.parents.len() - 1)]
    }
}

/// Iteration `t >= 2`.
pub fn smc_iteration_t<E: Executor + ?Sized>(
    prev: &Population,
    model: &ModelSpec,
    prior: &PriorSpec,
    cfg: &SmcConfig,
    t: usize,
    seed: &StreamSeed,
    executor: &E,
) -> Result<Population> {
    let comparator = RawComparator::new(&model.sample)?;
    let kernel = ProposalKernel::new(cfg, model.control, &prior.control);
    let floor = cfg.variance_floor(&prior.control);

    let groups: Vec<Group> = prev
        .groups()
        .into_iter()
        .map(|(kappa, members)| {
            let raw: Vec<f64> = members.iter().map(|&i| prev.particles[i].weight).collect();
            let total: f64 = raw.iter().sum();
            let gammas: Vec<f64> = members.iter().map(|&i| prev.particles[i].gamma).collect();
            let sigma = libm::sqrt(proposal_variance(&gammas, &raw, floor));
            let mut acc = 0.0;
            let cumulative = raw
                .iter()
                .map(|w| {
                    acc += w;
                    acc
                })
                .collect();
            Group {
                kappa,
                parents: members
                    .iter()
                    .map(|&i| {
                        let p = &prev.particles[i];
                        kernel.snapshot(p.kappa, &p.probs, p.gamma)
                    })
                    .collect(),
                ln_weights: raw.iter().map(|w| libm::log(w / total)).collect(),
                cumulative,
                sigma,
            }
        })
        .collect();
    if groups.is_empty() {
        return Err(Error::DegenerateModel { kappa: 0 });
    }

    let pool = cfg.pool(t)?;
    let outcome = run_pool(executor, &seed.derive(t as u64), &pool, |_, rng| {
        let group = &groups[rng.random_range(0..groups.len())];
        let parent = group.sample_parent(rng);
        let (probs, gamma) = kernel.propose(parent, group.sigma, rng)?;
        let trajectory = model.simulate(&probs, gamma, rng)?;
        let d = comparator.distance(&trajectory);
        Some((
            d,
            Candidate {
                kappa: group.kappa,
                probs,
                gamma,
                trajectory,
            },
        ))
    })?;

    let retained = outcome.retained;
    let ln_weights: Vec<f64> = executor.map(0..retained.len() as u64, |i| {
        let c = &retained[i as usize].item;
        let group = groups
            .iter()
            .find(|g| g.kappa == c.kappa)
            .expect("proposed from an existing group");
        let denom = log_sum_exp(
            group
                .parents
                .iter()
                .zip(&group.ln_weights)
                .map(|(parent, lw)| lw + kernel.ln_density(c.kappa, &c.probs, c.gamma, parent, group.sigma)),
        );
        let w = prior.ln_pdf_probs(c.kappa, &c.probs) + prior.control.ln_pdf(c.gamma) - denom;
        if w.is_nan() {
            f64::NEG_INFINITY
        } else {
            w
        }
    });

    let mut particles: Vec<Particle> = retained
        .into_iter()
        .map(|s| Particle {
            kappa: s.item.kappa,
            probs: s.item.probs,
            gamma: s.item.gamma,
            weight: 0.0,
            model_weight: 0.0,
            distance: s.distance,
            trajectory: s.item.trajectory,
        })
        .collect();
    let mut dropped = Vec::new();
    let mut keep = alloc::vec![true; particles.len()];
    for (kappa, members) in group_indices(&particles) {
        let group_total = log_sum_exp(members.iter().map(|&i| ln_weights[i]));
        if !group_total.is_finite() {
            dropped.push(kappa);
            for &i in &members {
                keep[i] = false;
            }
            continue;
        }
        for &i in &members {
            particles[i].weight = libm::exp(ln_weights[i] - group_total);
        }
    }
    let overall = log_sum_exp(ln_weights.iter().zip(&keep).filter(|(_, k)| **k).map(|(w, _)| *w));
    for (i, p) in particles.iter_mut().enumerate() {
        p.model_weight = libm::exp(ln_weights[i] - overall);
    }
    let mut flags = keep.iter();
    particles.retain(|_| *flags.next().unwrap());
    if particles.is_empty() {
        return Err(Error::DegenerateModel {
            kappa: dropped.first().copied().unwrap_or(0),
        });
    }

    Ok(Population {
        iteration: t,
        epsilon: outcome.epsilon,
        attempts: outcome.attempts,
        particles,
        sigmas: groups.iter().map(|g| (g.kappa, g.sigma)).collect(),
        dropped,
    })
}

/// Runs all iterations, handing each population to `on_iteration` as soon
/// as it is complete. Returns the final population.
pub fn run_smc<E: Executor + ?Sized>(
    model: &ModelSpec,
    prior: &PriorSpec,
    cfg: &SmcConfig,
    seed: &StreamSeed,
    executor: &E,
    mut on_iteration: impl FnMut(&Population),
) -> Result<Population> {
    cfg.validate()?;
    if let ControlFamily::DensityDependent { .. } = model.control {
        if !matches!(prior.control, ControlPrior::Uniform { lo, .. } if lo > 0.0) {
            return Err(Error::Config(
                "density-dependent controls need a uniform prior on a positive interval".into(),
            ));
        }
    }
    let mut population = smc_iteration_1(model, prior, cfg, seed, executor)?;
    on_iteration(&population);
    for t in 2..=cfg.iterations() {
        population = smc_iteration_t(&population, model, prior, cfg, t, seed, executor)?;
        on_iteration(&population);
    }
    Ok(population)
}

/// How the posterior of `kappa` is read off a population.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KappaEstimator {
    /// Sum of importance weights per model.
    Weighted,
    /// Particle counts per model.
    Counts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KappaPosterior {
    /// `(kappa, probability)` for `kappa = 2..=kappa_max`.
    pub pmf: Vec<(usize, f64)>,
    pub mean: f64,
    /// Nearest integer to the mean, halves rounded up.
    pub estimate: usize,
}

impl KappaPosterior {
    pub fn probability(&self, kappa: usize) -> f64 {
        self.pmf.iter().find(|(k, _)| *k == kappa).map_or(0.0, |(_, p)| *p)
    }
}

pub fn kappa_posterior(particles: &[Particle], kappa_max: usize, estimator: KappaEstimator) -> Result<KappaPosterior> {
    let mut mass = alloc::vec![0.0; kappa_max + 1];
    for p in particles {
        if p.kappa > kappa_max {
            return Err(Error::Config(format!(
                "particle with kappa={} exceeds kappa_max={kappa_max}",
                p.kappa
            )));
        }
        mass[p.kappa] += match estimator {
            KappaEstimator::Weighted => p.model_weight,
            KappaEstimator::Counts => 1.0,
        };
    }
    let total: f64 = mass.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateSample("total weight is zero".into()));
    }
    let pmf: Vec<(usize, f64)> = (2..=kappa_max).map(|k| (k, mass[k] / total)).collect();
    let mean = pmf.iter().map(|(k, p)| *k as f64 * p).sum::<f64>();
    Ok(KappaPosterior {
        pmf,
        mean,
        estimate: libm::floor(mean + 0.5) as usize,
    })
}

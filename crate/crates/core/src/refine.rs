//! Second stage: summary-statistic rejection on the particles of the
//! estimated model, local linear regression adjustment and posterior
//! summaries of the derived parameters.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::control::ControlFamily;
use crate::density::{hpd, kde, kde2d, weighted_moments, DensityEstimate, HpdInterval, JointDensity};
use crate::dirichlet;
use crate::distance::rho;
use crate::error::{Error, Result};
use crate::linalg::weighted_least_squares;
use crate::offspring::pmf_mean;
use crate::prior::ControlPrior;
use crate::smc::{kappa_posterior, KappaEstimator, KappaPosterior, ModelSpec, Particle};
use crate::summary::{SummaryLayout, SummaryStatistic};

#[derive(Debug, Clone, PartialEq)]
pub struct RefineConfig {
    /// Fraction of the estimated model's particles kept by the rejection.
    pub keep_fraction: f64,
    /// Fewest particles of the estimated model accepted as input.
    pub min_model_particles: usize,
    pub kde_grid: usize,
    pub hpd_level: f64,
    /// Points per axis of the joint `(m, gamma)` grid.
    pub joint_grid: usize,
    pub kappa_estimator: KappaEstimator,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            keep_fraction: 0.1,
            min_model_particles: 50,
            kde_grid: 512,
            hpd_level: 0.95,
            joint_grid: 64,
            kappa_estimator: KappaEstimator::Weighted,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "keep_fraction must lie in (0,1], got {}",
                self.keep_fraction
            )));
        }
        if !(self.hpd_level > 0.0 && self.hpd_level < 1.0) {
            return Err(Error::Config(format!(
                "hpd_level must lie in (0,1), got {}",
                self.hpd_level
            )));
        }
        if self.kde_grid < 2 || self.joint_grid < 2 {
            return Err(Error::Config("KDE grids need at least 2 points".into()));
        }
        if self.min_model_particles == 0 {
            return Err(Error::Config("min_model_particles must be positive".into()));
        }
        Ok(())
    }
}

/// A particle that passed the summary-statistic rejection.
#[derive(Debug, Clone, PartialEq)]
pub struct Selected {
    /// Position in the input particle list.
    pub index: usize,
    pub summary: SummaryStatistic,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub kappa: usize,
    /// Particles of the model `kappa`.
    pub candidates: usize,
    /// Candidates whose summary could not be formed.
    pub degenerate: usize,
    /// Sorted by `(distance, index)`.
    pub rows: Vec<Selected>,
    /// Largest retained summary distance.
    pub epsilon: f64,
}

/// Keeps the `ceil(keep_fraction L)` particles of model `kappa` whose
/// summaries are closest to `observed`.
pub fn select_and_reject(
    particles: &[Particle],
    kappa: usize,
    layout: &SummaryLayout,
    observed: &SummaryStatistic,
    keep_fraction: f64,
    min_particles: usize,
) -> Result<Selection> {
    let obs = observed.to_vector()?;
    let members: Vec<usize> = (0..particles.len()).filter(|&i| particles[i].kappa == kappa).collect();
    if members.len() < min_particles {
        return Err(Error::InsufficientParticles {
            kappa,
            found: members.len(),
            required: min_particles,
        });
    }
    let mut rows = Vec::with_capacity(members.len());
    let mut degenerate = 0;
    for &i in &members {
        let summary = layout
            .of_trajectory(&particles[i].trajectory)
            .and_then(|s| Ok((s, s.to_vector()?)));
        match summary {
            Ok((summary, v)) => rows.push(Selected {
                index: i,
                summary,
                distance: rho(&v, &obs)?,
            }),
            Err(_) => degenerate += 1,
        }
    }
    let keep = (libm::ceil(keep_fraction * members.len() as f64) as usize).clamp(1, members.len());
    rows.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.index.cmp(&b.index)));
    rows.truncate(keep);
    let epsilon = rows.last().map_or(0.0, |r| r.distance);
    Ok(Selection {
        kappa,
        candidates: members.len(),
        degenerate,
        rows,
        epsilon,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegressionStatus {
    Applied,
    /// Every summary coordinate was constant: nothing to regress on.
    NoRegressors,
    /// The weighted design was singular; values left unadjusted.
    Singular,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjustedRow {
    /// Adjusted pmf, renormalised to the simplex.
    pub probs: Vec<f64>,
    /// Sum of the adjusted pmf before renormalisation; `probs * raw_sum`
    /// recovers the raw regression output.
    pub raw_sum: f64,
    pub gamma: f64,
    pub m: f64,
    /// `tau(gamma) m`, when `tau` is invertible.
    pub threshold: Option<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjustedSample {
    pub kappa: usize,
    pub rows: Vec<AdjustedRow>,
    /// Rows removed for a negative adjusted probability.
    pub rejected_count: usize,
    /// Rows removed for an adjusted control parameter outside its support.
    pub out_of_support: usize,
    pub status: RegressionStatus,
}

/// Local linear regression adjustment.
///
/// Each parameter vector `theta_i = (p_i, gamma_i)` is regressed on
/// `S_i - S_obs` with Epanechnikov weights `1 - (rho_i / eps)^2`, and
/// replaced by `theta_i - B^T (S_i - S_obs)`.
pub fn regression_adjust(
    params: &[(Vec<f64>, f64)],
    selection: &Selection,
    observed: &SummaryStatistic,
    family: ControlFamily,
    support: (f64, f64),
) -> Result<AdjustedSample> {
    let n = selection.rows.len();
    if params.len() != n {
        return Err(Error::LengthMismatch {
            left: params.len(),
            right: n,
        });
    }
    let dim = observed.coordinates().len();
    let width = params.first().map_or(0, |p| p.0.len()) + 1;
    if n < dim + 2 {
        return Err(Error::InsufficientParticles {
            kappa: selection.kappa,
            found: n,
            required: dim + 2,
        });
    }

    let eps = selection.epsilon;
    let weights: Vec<f64> = selection
        .rows
        .iter()
        .map(|r| {
            if eps > 0.0 {
                let u = r.distance / eps;
                (1.0 - u * u).max(0.0)
            } else {
                1.0
            }
        })
        .collect();

    // Centered summaries, scaled per column; constant columns are dropped.
    let obs = observed.coordinates();
    let diffs: Vec<Vec<f64>> = selection
        .rows
        .iter()
        .map(|r| r.summary.coordinates().iter().zip(&obs).map(|(s, o)| s - o).collect())
        .collect();
    let mut columns = Vec::new();
    for c in 0..dim {
        let col: Vec<f64> = diffs.iter().map(|d| d[c]).collect();
        let (_, sd, _) = weighted_moments(&col, &weights);
        let spread = col.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if sd > 1e-12 * spread.max(f64::MIN_POSITIVE) && sd > 0.0 {
            columns.push((c, sd));
        }
    }

    let theta: Vec<f64> = params
        .iter()
        .flat_map(|(p, g)| p.iter().copied().chain(core::iter::once(*g)))
        .collect();
    let mut adjusted = theta.clone();
    let status = if columns.is_empty() {
        RegressionStatus::NoRegressors
    } else {
        let p = columns.len() + 1;
        let x: Vec<f64> = diffs
            .iter()
            .flat_map(|d| core::iter::once(1.0).chain(columns.iter().map(move |&(c, sd)| d[c] / sd)))
            .collect();
        match weighted_least_squares(&x, &theta, &weights, p, width) {
            Some(beta) => {
                for i in 0..n {
                    for (k, &(c, sd)) in columns.iter().enumerate() {
                        let z = diffs[i][c] / sd;
                        for j in 0..width {
                            adjusted[i * width + j] -= beta[(k + 1) * width + j] * z;
                        }
                    }
                }
                RegressionStatus::Applied
            }
            None => RegressionStatus::Singular,
        }
    };

    let (lo, hi) = support;
    let mut rows = Vec::with_capacity(n);
    let mut rejected_count = 0;
    let mut out_of_support = 0;
    for i in 0..n {
        let values = &adjusted[i * width..(i + 1) * width];
        let (probs, gamma) = values.split_at(width - 1);
        let gamma = gamma[0];
        if probs.iter().any(|p| *p < 0.0) {
            rejected_count += 1;
            continue;
        }
        if !(gamma > lo && gamma < hi) {
            out_of_support += 1;
            continue;
        }
        let mut probs = probs.to_vec();
        let raw_sum: f64 = probs.iter().sum();
        dirichlet::normalize(&mut probs);
        let m = pmf_mean(&probs);
        let threshold = family.tau(gamma).ok().map(|t| t * m);
        rows.push(AdjustedRow {
            probs,
            raw_sum,
            gamma,
            m,
            threshold,
            weight: weights[i],
        });
    }
    Ok(AdjustedSample {
        kappa: selection.kappa,
        rows,
        rejected_count,
        out_of_support,
        status,
    })
}

/// Posterior summary of one scalar quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantitySummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub density: Option<DensityEstimate>,
    pub hpd: Option<HpdInterval>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub quantities: Vec<QuantitySummary>,
    /// Joint density of `(m, gamma)`.
    pub joint: Option<JointDensity>,
}

impl PosteriorSummary {
    pub fn get(&self, name: &str) -> Option<&QuantitySummary> {
        self.quantities.iter().find(|q| q.name == name)
    }
}

fn summarize_quantity(name: &str, values: &[f64], weights: &[f64], cfg: &RefineConfig) -> QuantitySummary {
    let (mean, sd, _) = weighted_moments(values, weights);
    let density = kde(values, weights, cfg.kde_grid).ok();
    let hpd = density.as_ref().map(|d| hpd(d, cfg.hpd_level));
    QuantitySummary {
        name: name.into(),
        mean,
        sd,
        density,
        hpd,
    }
}

/// Weighted means, KDEs and HPD intervals for `m`, `gamma` and `tau m`
/// (binomial controls) or `m`, `K` and `K_e` (density-dependent controls),
/// plus the joint `(m, gamma)` density.
pub fn derived_posteriors(
    adjusted: &AdjustedSample,
    family: ControlFamily,
    cfg: &RefineConfig,
) -> Result<PosteriorSummary> {
    let rows = &adjusted.rows;
    let weights: Vec<f64> = rows.iter().map(|r| r.weight).collect();
    if rows.is_empty() || !(weights.iter().sum::<f64>() > 0.0) {
        return Err(Error::DegenerateSample("adjusted sample carries no weight".into()));
    }
    let m: Vec<f64> = rows.iter().map(|r| r.m).collect();
    let gamma: Vec<f64> = rows.iter().map(|r| r.gamma).collect();
    let mut quantities = alloc::vec![summarize_quantity("m", &m, &weights, cfg)];
    match family {
        ControlFamily::BinomialXi { .. } => {
            quantities.push(summarize_quantity("gamma", &gamma, &weights, cfg));
            let tm: Vec<f64> = rows.iter().map(|r| r.threshold.unwrap_or(f64::NAN)).collect();
            quantities.push(summarize_quantity("tau_m", &tm, &weights, cfg));
        }
        ControlFamily::DensityDependent { model } => {
            quantities.push(summarize_quantity("K", &gamma, &weights, cfg));
            let ke: Vec<f64> = rows.iter().map(|r| model.equilibrium(r.m, r.gamma)).collect();
            quantities.push(summarize_quantity("K_e", &ke, &weights, cfg));
        }
    }
    let joint = kde2d(&m, &gamma, &weights, cfg.joint_grid).ok();
    Ok(PosteriorSummary { quantities, joint })
}

/// Everything the second stage produces.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutput {
    pub kappa_posterior: KappaPosterior,
    pub kappa: usize,
    pub observed_summary: SummaryStatistic,
    pub selection: Selection,
    pub adjusted: AdjustedSample,
    pub posterior: PosteriorSummary,
}

/// Runs the second stage on the final first-stage population. `kappa`
/// overrides the estimate read off the population.
pub fn refine(
    particles: &[Particle],
    model: &ModelSpec,
    kappa_max: usize,
    control_prior: &ControlPrior,
    cfg: &RefineConfig,
    kappa: Option<usize>,
) -> Result<RefineOutput> {
    cfg.validate()?;
    let kappa_post = kappa_posterior(particles, kappa_max, cfg.kappa_estimator)?;
    let kappa = kappa.unwrap_or(kappa_post.estimate);
    let layout = SummaryLayout::for_sample(&model.sample);
    let observed = layout.of_sample(&model.sample)?;
    let selection = select_and_reject(
        particles,
        kappa,
        &layout,
        &observed,
        cfg.keep_fraction,
        cfg.min_model_particles,
    )?;
    let params: Vec<(Vec<f64>, f64)> = selection
        .rows
        .iter()
        .map(|r| (particles[r.index].probs.clone(), particles[r.index].gamma))
        .collect();
    let adjusted = regression_adjust(&params, &selection, &observed, model.control, control_prior.support())?;
    let posterior = derived_posteriors(&adjusted, model.control, cfg)?;
    Ok(RefineOutput {
        kappa_posterior: kappa_post,
        kappa,
        observed_summary: observed,
        selection,
        adjusted,
        posterior,
    })
}

//! Simulation and likelihood-free inference for controlled branching
//! processes.
//!
//! The crate is `no_std` (it needs `alloc`). Parallel execution is plugged
//! in through [`pool::Executor`]; everything else is pure computation.

#![cfg_attr(not(any(feature = "std", test)), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod control;
pub mod density;
pub mod dirichlet;
pub mod distance;
pub mod error;
pub mod fit;
pub mod growth;
pub mod linalg;
pub mod offspring;
pub mod pool;
pub mod prior;
pub mod process;
pub mod refine;
pub mod rng;
pub mod smc;
pub mod special;
pub mod summary;

pub use control::{ControlFamily, ControlLaw, SizeMap};
pub use density::{hpd, kde, DensityEstimate, HpdInterval, JointDensity};
pub use distance::{rho, DiscrepancyVector, ObservationMask, RawComparator};
pub use error::{Error, Result};
pub use fit::{fit_family, fit_growth, r2g, select_model, FitScore, GrowthFit, GrowthFitConfig};
pub use growth::GrowthFamily;
pub use offspring::OffspringLaw;
pub use pool::{run_pool, Executor, PoolConfig, PoolOutcome, Scored, Sequential, ToleranceSchedule};
pub use prior::{ControlPrior, DirichletPrior, PriorSpec};
pub use process::{simulate, ObservedSample, Trajectory};
pub use refine::{refine, AdjustedSample, PosteriorSummary, RefineConfig, RefineOutput};
pub use rng::{StreamSeed, TaskRng};
pub use smc::{
    kappa_posterior, run_smc, KappaEstimator, KappaPosterior, ModelSpec, Particle, Population, ProposalKernel,
    SmcConfig,
};
pub use summary::{SummaryKind, SummaryLayout, SummaryStatistic};

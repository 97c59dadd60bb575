//! File formats, configuration and subcommands for the `cbp` tool.

pub mod archive;
pub mod commands;
pub mod config;
pub mod error;
pub mod executor;
pub mod observations;
pub mod output;

pub use archive::{ArchiveHeader, ArchiveRow, ParticleArchive};
pub use config::RunConfig;
pub use error::{CliError, Result};
pub use executor::RayonExecutor;
pub use observations::{load_observations, Observations};

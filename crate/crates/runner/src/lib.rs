//! Monte Carlo experiment runner for the adaptive spin-feedback simulator:
//! configuration, parallel ensembles, summary statistics, CSV output and the
//! `spinadapt` CLI.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod ensemble;
pub mod output;

pub use analysis::{check_convergence, first_entry_time, last_exit_time, ExitTime};
pub use config::{ConfigError, ExperimentConfig, StateSpec};
pub use ensemble::{
    recompute_summary, resolve_threads, run_ensemble, EnsembleSummary, RunError, TrajectoryStats,
};

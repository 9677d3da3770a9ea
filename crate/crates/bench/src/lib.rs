//! Experiment runner for `msrm`.
//!
//! Loads TOML experiment configurations, runs the Fourier–RQMC solvers and
//! the physical-space baselines, sweeps sample budgets or seeds, and writes
//! result tables (CSV plus a JSON sidecar with full solver diagnostics).
//! The `msrm` binary is a thin command-line front end over this library.

pub mod compare;
pub mod config;
pub mod diagnose;
pub mod error;
pub mod results;
pub mod runner;

pub use config::{ExperimentConfig, Method};
pub use error::{BenchError, Result};

/// Environment variable holding the worker-thread count.
pub const THREADS_ENV: &str = "MSRM_THREADS";

/// Configures the global thread pool from [`THREADS_ENV`] (unset or `0`
/// leaves the default of one thread per core).
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v.trim().parse().map_err(|_| BenchError::Config {
        path: THREADS_ENV.into(),
        message: format!("expected a thread count, got {v:?}"),
    })?;
    if n > 0 {
        // a pool that was already initialised keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

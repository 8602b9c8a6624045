//! File formats, CSV ingestion, experiment runner and command line for
//! `pmfrec-core`.
//!
//! Parallel work (per-tuple marginal counting, Monte-Carlo trials) runs on
//! the global rayon pool; [`configure_threads`] caps it from the
//! `PMFREC_THREADS` environment variable.

pub mod cli;
pub mod csvio;
mod error;
pub mod experiment;
pub mod formats;

pub use error::{AppError, AppResult};

pub const THREADS_ENV: &str = "PMFREC_THREADS";

/// Sizes the global rayon pool from `PMFREC_THREADS` when it is set. Must run
/// before any parallel work.
pub fn configure_threads() -> AppResult<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            AppError::Usage(format!("{THREADS_ENV}='{value}' is not a positive integer"))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| AppError::Usage(format!("thread pool: {e}")))
}

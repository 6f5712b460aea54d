//! Command-line pipeline for spatial GLMM fitting: simulate, fit, predict,
//! bootstrap and replicated studies, each leaving a JSON manifest.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod study;

use error::CliError;

/// Caps the worker pool at `SGLMM_THREADS` when set.
pub fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("SGLMM_THREADS") else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Input(format!("SGLMM_THREADS must be a positive integer, found '{raw}'")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Input(format!("cannot size the worker pool: {e}")))
}

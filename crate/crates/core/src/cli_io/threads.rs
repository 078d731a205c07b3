//! Worker-pool sizing.

use crate::error::{BndlError, Result};

pub const THREADS_ENV: &str = "BNDL_THREADS";

/// Thread count from `BNDL_THREADS` (0 or unset = automatic), forced to one
/// when `deterministic` is set.
pub fn resolve_threads(deterministic: bool, env_value: Option<&str>) -> Result<usize> {
    if deterministic {
        return Ok(1);
    }
    match env_value.map(str::trim) {
        None | Some("") => Ok(0),
        Some(v) => v.parse().map_err(|_| {
            BndlError::Config(format!(
                "{THREADS_ENV} must be a non-negative integer, got `{v}`"
            ))
        }),
    }
}

/// Configures the global rayon pool. Call once, before any parallel work.
pub fn init_thread_pool(deterministic: bool) -> Result<usize> {
    let env = std::env::var(THREADS_ENV).ok();
    let n = resolve_threads(deterministic, env.as_deref())?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| BndlError::Config(format!("cannot start worker pool: {e}")))?;
    Ok(rayon::current_num_threads())
}

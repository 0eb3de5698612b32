//! Sizing of the internal worker pool. Results never depend on it: all
//! parallel reductions in the core library are order-preserving.

use crate::error::{HarnessError, Result};

pub const THREADS_ENV: &str = "AFFIELD_THREADS";

/// `AFFIELD_THREADS` as a positive count; unset means "library default".
pub fn env_threads() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(HarnessError::validation(format!(
                "{THREADS_ENV} must be a positive integer (got {v:?})"
            ))),
        },
    }
}

/// Runs `f` inside a pool of `threads` workers, or in the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| HarnessError::ThreadPool(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

pub fn with_env_threads<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    with_threads(env_threads()?, f)
}

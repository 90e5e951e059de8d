//! Worker-pool sizing. Results never depend on the pool size.

use crate::error::{Error, Result};

pub const THREADS_ENV: &str = "SADDLE_EXIT_THREADS";

/// Worker cap from `SADDLE_EXIT_THREADS`, if set.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
            if n == 0 {
                return Err(Error::invalid(format!("{THREADS_ENV} must be positive")));
            }
            Ok(Some(n))
        }
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Error::invalid(format!("{THREADS_ENV}: {e}"))),
    }
}

/// Runs `f` on a pool of exactly `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Runs `f` on a pool honouring the environment cap, or on the global pool.
pub fn with_env_threads<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    match thread_cap()? {
        Some(n) => with_threads(n, f),
        None => Ok(f()),
    }
}

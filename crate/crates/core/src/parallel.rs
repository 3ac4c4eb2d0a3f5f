//! Thread budget for internally parallel operations.

/// Environment variable capping internal parallelism. `0` means sequential.
pub const THREADS_ENV: &str = "TRIMFIT_THREADS";

/// Number of worker threads to use; `0` means run sequentially.
///
/// Unset or unparsable values fall back to the available parallelism.
pub fn thread_cap() -> usize {
    match std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
    {
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    }
}

/// A rayon pool sized by [`thread_cap`], or `None` when sequential.
pub fn pool() -> Option<rayon::ThreadPool> {
    match thread_cap() {
        0 | 1 => None,
        n => rayon::ThreadPoolBuilder::new().num_threads(n).build().ok(),
    }
}

//! Data-parallel map over an index range with a sequential fallback.
//!
//! Everything stochastic in this crate is parallel over path indices only.
//! The map preserves index order, and all reductions downstream consume the
//! collected vector with a fixed pairwise order, so results are bitwise
//! identical for any thread count and for the sequential fallback
//! (`--no-default-features`).

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Applies `f` to every index in `0..n`, returning results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Applies `f` to every index in `0..n`, returning results in index order.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Runs `f` inside a fresh thread pool of the given size.
///
/// With the sequential fallback the pool size is ignored and `f` runs inline;
/// reproducibility checks compare results across pool sizes through this hook.
#[cfg(feature = "parallel")]
pub fn with_threads<T: Send>(n_threads: usize, f: impl FnOnce() -> T + Send) -> T {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n_threads)
        .build()
        .expect("failed to build thread pool");
    pool.install(f)
}

/// Runs `f` inside a fresh thread pool of the given size.
#[cfg(not(feature = "parallel"))]
pub fn with_threads<T: Send>(_n_threads: usize, f: impl FnOnce() -> T + Send) -> T {
    f()
}

/// Sizes the global worker pool; call once at process start.
#[cfg(feature = "parallel")]
pub fn init_global_threads(n_threads: usize) -> Result<(), String> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n_threads)
        .build_global()
        .map_err(|e| e.to_string())
}

/// Sizes the global worker pool; a no-op in the sequential build.
#[cfg(not(feature = "parallel"))]
pub fn init_global_threads(_n_threads: usize) -> Result<(), String> {
    Ok(())
}

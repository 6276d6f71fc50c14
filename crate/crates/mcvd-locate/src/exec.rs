//! Execution strategy: data-parallel map with a sequential fallback.
//!
//! With the default `parallel` feature the indexed map runs on the rayon
//! pool; without it the same call degrades to a plain sequential loop.
//! Every caller derives per-index RNG streams, so results are identical
//! either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, collecting results in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Sequential variant, always single-threaded regardless of features;
/// the benchmark baseline and the reference for bit-identity tests.
pub fn map_indexed_serial<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Configures the global worker pool. Returns false if the pool was
/// already initialized (harmless: the pool is process-wide).
pub fn set_workers(n: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
        true
    }
}

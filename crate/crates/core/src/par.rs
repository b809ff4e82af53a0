//! Data-parallel mapping over sample indices.
//!
//! The batch workloads in this crate (random-sample property sweeps,
//! per-example verification suites) are embarrassingly parallel; they go
//! through [`map_indexed`], which fans out over rayon when the `parallel`
//! feature (default) is enabled and falls back to a plain loop otherwise.
//! [`map_indexed_serial`] is always sequential and exists so benchmarks can
//! compare the two paths within one build.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..n`, in parallel when the `parallel` feature is on.
/// Samples are cheap, so splitting is capped at chunks of 32 to keep the
/// scheduling overhead below the work.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().with_min_len(32).map(f).collect()
}

/// Map `f` over `0..n`, in parallel when the `parallel` feature is on.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_indexed_serial(n, f)
}

/// Sequential reference implementation of [`map_indexed`].
pub fn map_indexed_serial<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

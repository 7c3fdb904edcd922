//! Data-parallel helpers with a sequential fallback.
//!
//! Every reduction collects per-index results in index order and folds them
//! sequentially, so numeric output is bit-identical whether the `parallel`
//! feature is enabled or not.

use num_complex::Complex64;

#[cfg(feature = "parallel")]
pub(crate) fn map_collect<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_collect<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Forced-sequential variant, kept available regardless of features so the
/// bench suite can compare both paths in one build.
pub(crate) fn map_collect_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Pairwise (cascade) summation; bounds rounding growth on long accumulations.
pub(crate) fn pairwise_sum_c(xs: &[Complex64]) -> Complex64 {
    if xs.len() <= 64 {
        xs.iter().fold(Complex64::new(0.0, 0.0), |a, b| a + b)
    } else {
        let mid = xs.len() / 2;
        pairwise_sum_c(&xs[..mid]) + pairwise_sum_c(&xs[mid..])
    }
}

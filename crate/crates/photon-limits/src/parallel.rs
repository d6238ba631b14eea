//! Trial-level work dispatch.
//!
//! Work items are keyed by index and must be pure given their derived RNG
//! stream, so the collected output is identical whether items run on a
//! rayon pool or on a single thread. With the `parallel` feature disabled
//! the crate compiles without rayon and always runs sequentially.

/// Runs `f` over `0..n` and collects results in index order.
///
/// `workers` caps the pool size; `None` uses all available cores,
/// `Some(1)` forces sequential execution even in parallel builds.
#[cfg(feature = "parallel")]
pub(crate) fn run_indexed<T, F>(n: usize, workers: Option<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;

    match workers {
        Some(1) => (0..n).map(f).collect(),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .expect("failed to build worker pool");
            pool.install(|| (0..n).into_par_iter().map(f).collect())
        }
        None => (0..n).into_par_iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn run_indexed<T, F>(n: usize, _workers: Option<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

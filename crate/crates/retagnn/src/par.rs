//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (the default) [`map`] fans out over rayon;
//! without it, it degrades to a plain iterator. Output order always matches
//! input order, so callers that reduce sequentially over the result stay
//! deterministic regardless of thread count. [`map_seq`] is always the
//! sequential path and exists so benchmarks can compare the two.

#[cfg(feature = "parallel")]
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Sequential counterpart of [`map`], independent of feature flags.
pub fn map_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Cap rayon's global pool. A no-op without the `parallel` feature or once
/// the pool exists.
pub fn configure_workers(workers: usize) {
    #[cfg(feature = "parallel")]
    {
        if workers > 0 {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build_global();
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = workers;
}

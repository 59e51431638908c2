//! Run-level data parallelism. With the `parallel` feature, independent runs
//! are spread over the rayon pool; without it everything stays on the caller's
//! thread. Results always come back in input order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Whether this build can run work in parallel.
pub const PARALLEL_ENABLED: bool = cfg!(feature = "parallel");

/// Maps `f` over `items`, in parallel when `parallel` is set and the feature is on.
pub fn map_runs<T, U, F>(parallel: bool, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if parallel {
            return items.par_iter().map(f).collect();
        }
    }
    let _ = parallel;
    items.iter().map(f).collect()
}

/// Fallible variant of [`map_runs`]; the first error in input order wins.
pub fn try_map_runs<T, U, E, F>(parallel: bool, items: &[T], f: F) -> Result<Vec<U>, E>
where
    T: Sync,
    U: Send,
    E: Send,
    F: Fn(&T) -> Result<U, E> + Sync + Send,
{
    map_runs(parallel, items, f).into_iter().collect()
}

//! Data-parallel helpers. With the `parallel` feature, `Execution::Parallel`
//! fans work out over rayon; without it every map runs on the caller's
//! thread. Results always come back in index order, so downstream
//! reductions are independent of the worker count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// True when work will actually be spread over threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// `(0..n).map(f).collect()`, possibly in parallel.
pub fn map_indexed<T, F>(execution: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if execution.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = execution;
    (0..n).map(f).collect()
}

/// `items.iter().map(f).collect()`, possibly in parallel.
pub fn map_slice<I, T, F>(execution: Execution, items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if execution.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = execution;
    items.iter().map(f).collect()
}

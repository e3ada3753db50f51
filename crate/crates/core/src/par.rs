//! Execution facade: rayon data-parallel loops with a sequential fallback.
//!
//! Callers hand in an index range and a per-index job; results come back in
//! index order, so the output is identical whichever backend runs. The
//! sequential variant is always compiled (the bench suite compares the two);
//! the `parallel` feature only decides what [`map_indexed`] dispatches to.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..n`, returning results in index order.
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
        map_indexed_seq(n, f)
    }
}

/// Sequential reference implementation of [`map_indexed`].
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) work items run on the rayon pool;
//! without it the same closures run in order on the calling thread. Every
//! item is computed by identical code in both modes and results are written
//! to fixed slots, so output never depends on the number of threads.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Calls `f(i, row)` for each `cols`-wide row of `data`.
pub fn for_each_row<F>(data: &mut [f32], cols: usize, f: F)
where
    F: Fn(usize, &mut [f32]) + Send + Sync,
{
    if cols == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    data.par_chunks_mut(cols).enumerate().for_each(|(i, row)| f(i, row));
    #[cfg(not(feature = "parallel"))]
    data.chunks_mut(cols).enumerate().for_each(|(i, row)| f(i, row));
}

/// Maps `0..n` through `f`, preserving index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
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

/// Whether the crate was built with the rayon backend.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

//! Fixed-chunk parallel helpers. Chunk boundaries never depend on the
//! thread count, so reductions are bitwise reproducible.

use alloc::vec::Vec;

/// Maps `f` over `0..n` and collects results in index order.
pub(crate) fn map_collect<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "std")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "std"))]
    {
        (0..n).map(f).collect()
    }
}

//! Order-preserving chunked map, parallel under the `std` feature.
//!
//! Chunk boundaries depend only on the item count, and results come back in
//! chunk order, so any reduction done sequentially over the output is
//! independent of the thread count.

use alloc::vec::Vec;
use core::ops::Range;

/// Items per chunk.
pub const CHUNK: usize = 512;

pub fn map_chunks<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    let chunks = n.div_ceil(CHUNK);
    let range = move |c: usize| c * CHUNK..usize::min(n, (c + 1) * CHUNK);
    #[cfg(feature = "std")]
    {
        use rayon::prelude::*;
        (0..chunks).into_par_iter().map(|c| f(range(c))).collect()
    }
    #[cfg(not(feature = "std"))]
    {
        (0..chunks).map(|c| f(range(c))).collect()
    }
}

/// Maps every index and returns the results in index order.
pub fn map_items<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_chunks(n, |r| r.map(&f).collect::<Vec<_>>()).into_iter().flatten().collect()
}

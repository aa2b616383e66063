//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) the helpers fan work out over the
//! rayon pool. Without it they forward to [`sequential`], which runs in order
//! on the calling thread. Callers give every work item its own random
//! stream, and results are collected in input order, so both builds produce
//! identical numbers.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// In-order, single-threaded versions of the helpers. Always compiled so
/// the two paths can be compared in one binary.
pub mod sequential {
    pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
    where
        F: Fn(usize) -> T,
    {
        (0..n).map(f).collect()
    }

    pub fn map_slice<'a, S, T, F>(items: &'a [S], f: F) -> Vec<T>
    where
        F: Fn(&'a S) -> T,
    {
        items.iter().map(f).collect()
    }

    pub fn map_chunks<T, F>(n: usize, chunk: usize, f: F) -> Vec<T>
    where
        F: Fn(std::ops::Range<usize>) -> Vec<T>,
    {
        super::chunk_ranges(n, chunk).into_iter().flat_map(f).collect()
    }
}

fn chunk_ranges(n: usize, chunk: usize) -> Vec<std::ops::Range<usize>> {
    let chunk = chunk.max(1);
    (0..n).step_by(chunk).map(|start| start..(start + chunk).min(n)).collect()
}

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
        sequential::map_indexed(n, f)
    }
}

/// Map `f` over a slice, returning results in slice order.
pub fn map_slice<'a, S, T, F>(items: &'a [S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&'a S) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        sequential::map_slice(items, f)
    }
}

/// Split `0..n` into contiguous chunks of at most `chunk` items and map each.
/// Chunk results are concatenated in order.
pub fn map_chunks<T, F>(n: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> Vec<T> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        let ranges = chunk_ranges(n, chunk);
        map_slice(&ranges, |r| f(r.clone())).into_iter().flatten().collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        sequential::map_chunks(n, chunk, f)
    }
}

/// Number of worker threads the helpers will use.
pub fn workers() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Whether this build fans work out over threads.
pub const ENABLED: bool = cfg!(feature = "parallel");

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexed_map_preserves_order() {
        let out = map_indexed(100, |i| i * i);
        assert_eq!(out, (0..100).map(|i| i * i).collect::<Vec<_>>());
    }

    #[test]
    fn chunks_cover_range_in_order() {
        let out = map_chunks(23, 5, |r| r.collect());
        assert_eq!(out, (0..23).collect::<Vec<_>>());
        assert!(map_chunks::<usize, _>(0, 5, |r| r.collect()).is_empty());
    }

    #[test]
    fn both_paths_agree() {
        let f = |r: std::ops::Range<usize>| r.map(|i| (i as f64).sqrt()).collect::<Vec<_>>();
        assert_eq!(map_chunks(101, 7, f), sequential::map_chunks(101, 7, f));
        assert_eq!(map_indexed(50, |i| i + 1), sequential::map_indexed(50, |i| i + 1));
    }
}

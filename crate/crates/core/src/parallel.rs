//! Thin wrappers that run index-parallel loops on rayon when the `parallel`
//! feature is enabled and fall back to plain iterators otherwise.
//!
//! Reductions go through [`chunked_reduce`], which fixes the chunk boundaries
//! from the problem size alone. Partial results are combined left to right, so
//! floating-point sums do not depend on the number of worker threads.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Evaluate `f(i)` for `i in 0..len` and collect in index order.
pub fn map_collect<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..len).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..len).map(f).collect()
    }
}

/// Run `f` on each mutable chunk of `data` together with the chunk index.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}

/// Run `f` on every item of `items`.
pub fn for_each_mut<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(&mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter_mut().for_each(f);
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter_mut().for_each(f);
    }
}

/// Walk four equal-length slices in lockstep chunks of `chunk` items.
pub fn for_each_zip4_mut<T, F>(a: &mut [T], b: &mut [T], c: &mut [T], d: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(&mut [T], &mut [T], &mut [T], &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (
            a.par_chunks_mut(chunk),
            b.par_chunks_mut(chunk),
            c.par_chunks_mut(chunk),
            d.par_chunks_mut(chunk),
        )
            .into_par_iter()
            .for_each(|(w, x, y, z)| f(w, x, y, z));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (((w, x), y), z) in a
            .chunks_mut(chunk)
            .zip(b.chunks_mut(chunk))
            .zip(c.chunks_mut(chunk))
            .zip(d.chunks_mut(chunk))
        {
            f(w, x, y, z);
        }
    }
}

/// Number of items per chunk used by [`chunked_reduce`] for `len` items.
pub fn chunk_len(len: usize, max_chunks: usize) -> usize {
    let max_chunks = max_chunks.max(1);
    len.div_ceil(max_chunks).max(1)
}

/// Deterministic map-reduce over `0..len`.
///
/// The range is cut into at most `max_chunks` contiguous chunks. `fold` is run
/// sequentially inside each chunk starting from `init()`, chunks may run
/// concurrently, and the partial results are merged in chunk order with
/// `merge`.
pub fn chunked_reduce<A, I, F, M>(len: usize, max_chunks: usize, init: I, fold: F, merge: M) -> A
where
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(&mut A, usize) + Sync + Send,
    M: Fn(&mut A, A),
{
    let step = chunk_len(len, max_chunks);
    let n_chunks = len.div_ceil(step);
    let partials = map_collect(n_chunks, |c| {
        let mut acc = init();
        let end = ((c + 1) * step).min(len);
        for i in c * step..end {
            fold(&mut acc, i);
        }
        acc
    });
    let mut out = init();
    for p in partials {
        merge(&mut out, p);
    }
    out
}

/// Number of worker threads available to the parallel loops.
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

//! Ordered fan-out over worker threads.
//!
//! Work items are split into contiguous blocks, one per worker, and the
//! results are reassembled by index, so output never depends on thread
//! timing. `ODL_THREADS` caps the worker count.

use std::thread;

use crate::error::Result;

pub const THREADS_ENV: &str = "ODL_THREADS";

pub fn worker_count() -> usize {
    let available = thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(n) if n >= 1 => n,
        _ => available,
    }
}

/// `f(0..n)` evaluated on up to [`worker_count`] threads, results in index
/// order. The first error by index is returned.
pub fn parallel_map<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let workers = worker_count().min(n.max(1));
    if workers <= 1 {
        return (0..n).map(f).collect();
    }
    let block = n.div_ceil(workers);
    let f = &f;
    let parts: Vec<Vec<Result<T>>> = thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let lo = (w * block).min(n);
                let hi = ((w + 1) * block).min(n);
                s.spawn(move || (lo..hi).map(f).collect::<Vec<_>>())
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    parts.into_iter().flatten().collect()
}

//! Deterministic fork-join map for evaluation work.
//!
//! Worker count comes from the `PROGEN_THREADS` environment variable
//! (default 1). Items are split into contiguous chunks and results are
//! reassembled in input order, so the output is identical regardless of the
//! thread count.

pub const THREADS_ENV: &str = "PROGEN_THREADS";

pub fn worker_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

pub fn parallel_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = worker_count().min(items.len().max(1));
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    let mut out: Vec<Option<R>> = Vec::with_capacity(items.len());
    out.resize_with(items.len(), || None);
    std::thread::scope(|scope| {
        let f = &f;
        let mut handles = Vec::new();
        for (i, slice) in items.chunks(chunk).enumerate() {
            handles.push((i * chunk, scope.spawn(move || slice.iter().map(f).collect::<Vec<R>>())));
        }
        for (start, handle) in handles {
            for (offset, r) in handle.join().expect("worker panicked").into_iter().enumerate() {
                out[start + offset] = Some(r);
            }
        }
    });
    out.into_iter().map(|r| r.expect("all slots filled")).collect()
}

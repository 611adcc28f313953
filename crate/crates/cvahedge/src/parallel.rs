//! Deterministic fan-out over path indices.
//!
//! Work is split into contiguous index blocks; each worker writes results
//! into its own slots, so the collected vector is identical for any thread
//! count and reductions can run in path-index order.

/// Runs `f(i)` for `i in 0..n` on up to `threads` workers (0 = available
/// parallelism) and returns the results in index order.
pub fn run_indexed<T, F>(n: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = effective_threads(threads, n);
    if workers <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let mut out: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let chunk = n.div_ceil(workers);
    std::thread::scope(|scope| {
        for (w, slots) in out.chunks_mut(chunk).enumerate() {
            let f = &f;
            scope.spawn(move || {
                let base = w * chunk;
                for (off, slot) in slots.iter_mut().enumerate() {
                    *slot = Some(f(base + off));
                }
            });
        }
    });
    out.into_iter().map(|s| s.expect("worker filled slot")).collect()
}

pub fn effective_threads(requested: usize, n: usize) -> usize {
    let hw = std::thread::available_parallelism().map(|p| p.get()).unwrap_or(1);
    let t = if requested == 0 { hw } else { requested };
    t.min(n.max(1))
}

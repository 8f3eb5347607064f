//! Deterministic data parallelism: output buffers are split into disjoint
//! row chunks, one thread per chunk. Every output element is computed by
//! exactly one thread with a fixed accumulation order, so results are
//! bit-identical regardless of thread count.

pub(crate) fn max_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(8)
}

/// Run `f(first_row, chunk)` over `out` split into contiguous row chunks of
/// width `row_len`. Falls back to a single call when the work is small.
pub(crate) fn par_rows<E: Send, F>(out: &mut [E], row_len: usize, work_per_row: usize, f: F)
where
    F: Fn(usize, &mut [E]) + Sync,
{
    debug_assert_eq!(out.len() % row_len.max(1), 0);
    let rows = if row_len == 0 { 0 } else { out.len() / row_len };
    let threads = max_threads();
    // Threading pays off only above ~1M scalar ops.
    let heavy = rows.saturating_mul(work_per_row) >= 1_000_000;
    if threads <= 1 || rows <= 1 || !heavy {
        f(0, out);
        return;
    }
    let n_chunks = threads.min(rows);
    let chunk_rows = rows.div_ceil(n_chunks);
    std::thread::scope(|scope| {
        for (i, chunk) in out.chunks_mut(chunk_rows * row_len).enumerate() {
            let f = &f;
            scope.spawn(move || f(i * chunk_rows, chunk));
        }
    });
}

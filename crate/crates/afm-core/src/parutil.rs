//! Deterministic sharded execution.
//!
//! Batch work is split into a fixed number of ordered shards; shard results
//! are reduced in shard order, so the outcome is bit-identical whether the
//! shards run on one thread or many. The thread budget comes from the
//! `AFM_THREADS` environment variable (default: available parallelism).

use std::env;
use std::ops::Range;

/// Worker-thread budget. `AFM_THREADS` overrides; invalid values fall back
/// to 1; unset uses the machine's available parallelism.
pub fn thread_budget() -> usize {
    match env::var("AFM_THREADS") {
        Ok(v) => v.trim().parse().ok().filter(|&n| n >= 1).unwrap_or(1),
        Err(_) => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    }
}

/// Number of gradient shards for a batch: one shard per four batch rows,
/// clamped to [1, 16]. Fixed by batch size alone so that results do not
/// depend on the thread count.
pub fn shard_count(batch_size: usize) -> usize {
    (batch_size / 4).clamp(1, 16)
}

/// Split `0..n_items` into `n_shards` contiguous ranges; earlier shards take
/// the remainder. Empty ranges are possible only when n_shards > n_items.
pub fn shard_ranges(n_items: usize, n_shards: usize) -> Vec<Range<usize>> {
    assert!(n_shards >= 1, "shard_ranges: need at least one shard");
    let base = n_items / n_shards;
    let extra = n_items % n_shards;
    let mut ranges = Vec::with_capacity(n_shards);
    let mut start = 0;
    for k in 0..n_shards {
        let len = base + usize::from(k < extra);
        ranges.push(start..start + len);
        start += len;
    }
    ranges
}

/// Run `job(k)` for every shard `k`, on up to `threads` workers, and return
/// the results in shard order. Worker `w` statically takes shards
/// `w, w+W, w+2W, …`, so scheduling cannot perturb the output.
pub fn run_shards<R, F>(n_shards: usize, threads: usize, job: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync,
{
    let workers = threads.min(n_shards);
    if workers <= 1 {
        return (0..n_shards).map(job).collect();
    }
    let mut slots: Vec<Option<R>> = (0..n_shards).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let job = &job;
                scope.spawn(move || {
                    let mut out = Vec::new();
                    let mut k = w;
                    while k < n_shards {
                        out.push((k, job(k)));
                        k += workers;
                    }
                    out
                })
            })
            .collect();
        for h in handles {
            for (k, r) in h.join().expect("shard worker panicked") {
                slots[k] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("shard never ran")).collect()
}

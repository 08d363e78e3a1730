//! Minimal bounded worker pool with order-preserving delivery. Workers pull
//! indexes from a shared counter; results are slotted and handed to the sink
//! strictly in index order, so output is deterministic regardless of
//! completion order.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

/// Run `job(0..count)` on `workers` threads and deliver results to `sink` in
/// index order. A `false` from the sink cancels remaining work; undelivered
/// results are dropped.
pub(crate) fn run_ordered_streaming<T: Send>(
    count: usize,
    workers: usize,
    job: impl Fn(usize) -> T + Sync,
    mut sink: impl FnMut(usize, T) -> bool,
) {
    if count == 0 {
        return;
    }
    let workers = workers.clamp(1, count);
    let next_index = AtomicUsize::new(0);
    let cancelled = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<(usize, T)>();

    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next_index = &next_index;
            let cancelled = &cancelled;
            let job = &job;
            scope.spawn(move || loop {
                if cancelled.load(Ordering::Relaxed) {
                    break;
                }
                let i = next_index.fetch_add(1, Ordering::Relaxed);
                if i >= count {
                    break;
                }
                let result = job(i);
                if tx.send((i, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        let mut pending: BTreeMap<usize, T> = BTreeMap::new();
        let mut next_deliver = 0usize;
        let mut stopped = false;
        while let Ok((i, result)) = rx.recv() {
            if stopped {
                continue;
            }
            pending.insert(i, result);
            while let Some(result) = pending.remove(&next_deliver) {
                if !sink(next_deliver, result) {
                    cancelled.store(true, Ordering::Relaxed);
                    stopped = true;
                    break;
                }
                next_deliver += 1;
            }
        }
    });
}

//! Bounded parallel dispatch of workers.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::worker::{run_worker, WorkerContext, WorkerReport};

/// Ids of the workers currently running, never more than `ceiling`.
#[derive(Debug)]
pub struct ActiveWorkerSet {
    ceiling: usize,
    active: Mutex<BTreeSet<String>>,
    peak: AtomicUsize,
}

/// Removes its id from the set on drop.
pub struct ActiveGuard<'a> {
    set: &'a ActiveWorkerSet,
    id: String,
}

impl Drop for ActiveGuard<'_> {
    fn drop(&mut self) {
        self.set.active.lock().unwrap_or_else(|p| p.into_inner()).remove(&self.id);
    }
}

impl ActiveWorkerSet {
    pub fn new(ceiling: usize) -> Self {
        assert!(ceiling >= 1, "worker ceiling must be at least 1");
        ActiveWorkerSet { ceiling, active: Mutex::new(BTreeSet::new()), peak: AtomicUsize::new(0) }
    }

    pub fn ceiling(&self) -> usize {
        self.ceiling
    }

    /// Registers `id` as running. Panics if that would break the ceiling,
    /// which only a dispatcher bug can cause.
    pub fn enter(&self, id: &str) -> ActiveGuard<'_> {
        let mut a = self.active.lock().unwrap_or_else(|p| p.into_inner());
        a.insert(id.to_string());
        let n = a.len();
        assert!(n <= self.ceiling, "{n} active workers exceed the ceiling {}", self.ceiling);
        self.peak.fetch_max(n, Ordering::SeqCst);
        ActiveGuard { set: self, id: id.to_string() }
    }

    pub fn len(&self) -> usize {
        self.active.lock().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Highest concurrency observed so far.
    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }
}

/// Runs every context on at most `set.ceiling()` threads and returns the
/// reports in input order.
pub fn dispatch_wave(contexts: Vec<WorkerContext>, set: &ActiveWorkerSet) -> Vec<WorkerReport> {
    let n = contexts.len();
    let queue = Mutex::new(contexts.into_iter().enumerate().collect::<std::collections::VecDeque<_>>());
    let results: Mutex<Vec<Option<WorkerReport>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..set.ceiling().min(n) {
            s.spawn(|| loop {
                let next = queue.lock().unwrap_or_else(|p| p.into_inner()).pop_front();
                let Some((i, ctx)) = next else { break };
                let _guard = set.enter(&ctx.spec.id);
                let report = run_worker(ctx);
                results.lock().unwrap_or_else(|p| p.into_inner())[i] = Some(report);
            });
        }
    });
    results.into_inner().unwrap_or_else(|p| p.into_inner()).into_iter().map(|r| r.expect("every worker reports")).collect()
}

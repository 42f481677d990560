use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

/// Shared stopping rule for one solve call: wall-clock deadline, node limit
/// and an external cancellation flag.
#[derive(Debug)]
pub(crate) struct Budget {
    started: Instant,
    deadline: Option<Instant>,
    node_limit: Option<u64>,
    cancel: Option<Arc<AtomicBool>>,
    pub nodes: u64,
    pub prunes: u64,
    exhausted: bool,
}

const CHECK_EVERY: u64 = 256;

impl Budget {
    pub fn new(time: Option<Duration>, node_limit: Option<u64>, cancel: Option<Arc<AtomicBool>>) -> Self {
        let started = Instant::now();
        Budget {
            started,
            deadline: time.map(|t| started + t),
            node_limit,
            cancel,
            nodes: 0,
            prunes: 0,
            exhausted: false,
        }
    }

    /// Count one node; true when the search has to stop.
    #[inline]
    pub fn tick(&mut self) -> bool {
        self.nodes += 1;
        if self.exhausted {
            return true;
        }
        if let Some(limit) = self.node_limit {
            if self.nodes > limit {
                self.exhausted = true;
                return true;
            }
        }
        if self.nodes % CHECK_EVERY == 0 {
            return self.check();
        }
        false
    }

    pub fn check(&mut self) -> bool {
        if self.exhausted {
            return true;
        }
        let cancelled = self.cancel.as_ref().is_some_and(|c| c.load(Ordering::Relaxed));
        let late = self.deadline.is_some_and(|d| Instant::now() >= d);
        if cancelled || late {
            self.exhausted = true;
        }
        self.exhausted
    }

    pub fn exhausted(&self) -> bool {
        self.exhausted
    }

    pub fn elapsed(&self) -> Duration {
        self.started.elapsed()
    }
}

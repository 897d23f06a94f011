//! Wall clock or a manually advanced fake clock, plus bounded execution.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Elapsed {
    pub timeout: Duration,
}

#[derive(Debug, Default)]
pub struct FakeClock {
    now_ms: AtomicU64,
}

#[derive(Debug, Clone, Default)]
pub enum Clock {
    #[default]
    System,
    /// Time only moves when someone calls [`Clock::sleep`] or [`Clock::advance`].
    Fake(Arc<FakeClock>),
}

impl Clock {
    pub fn fake() -> Self {
        Clock::Fake(Arc::new(FakeClock::default()))
    }

    pub fn is_fake(&self) -> bool {
        matches!(self, Clock::Fake(_))
    }

    /// Independent clock starting at the current instant. Workers fork so that
    /// one worker's simulated sleeps never leak into another's timings.
    pub fn fork(&self) -> Self {
        match self {
            Clock::System => Clock::System,
            Clock::Fake(f) => Clock::Fake(Arc::new(FakeClock {
                now_ms: AtomicU64::new(f.now_ms.load(Ordering::SeqCst)),
            })),
        }
    }

    pub fn now_ms(&self) -> u64 {
        match self {
            Clock::System => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
            Clock::Fake(f) => f.now_ms.load(Ordering::SeqCst),
        }
    }

    pub fn sleep(&self, d: Duration) {
        match self {
            Clock::System => std::thread::sleep(d),
            Clock::Fake(_) => self.advance(d),
        }
    }

    pub fn advance(&self, d: Duration) {
        if let Clock::Fake(f) = self {
            f.now_ms.fetch_add(d.as_millis() as u64, Ordering::SeqCst);
        }
    }

    fn set_ms(&self, ms: u64) {
        if let Clock::Fake(f) = self {
            f.now_ms.store(ms, Ordering::SeqCst);
        }
    }

    /// Runs `f` with a deadline.
    ///
    /// On the system clock `f` runs on a helper thread that is abandoned at the
    /// deadline. On a fake clock `f` runs inline; if it advanced the clock past
    /// the deadline its result is discarded and the clock is rewound to the
    /// deadline, which is when the caller observes the timeout.
    pub fn run_with_timeout<T, F>(&self, timeout: Duration, f: F) -> Result<T, Elapsed>
    where
        T: Send + 'static,
        F: FnOnce() -> T + Send + 'static,
    {
        match self {
            Clock::System => {
                let (tx, rx) = mpsc::channel();
                std::thread::spawn(move || {
                    let _ = tx.send(f());
                });
                rx.recv_timeout(timeout).map_err(|_| Elapsed { timeout })
            }
            Clock::Fake(_) => {
                let start = self.now_ms();
                let out = f();
                let deadline = start + timeout.as_millis() as u64;
                if self.now_ms() > deadline {
                    self.set_ms(deadline);
                    Err(Elapsed { timeout })
                } else {
                    Ok(out)
                }
            }
        }
    }
}

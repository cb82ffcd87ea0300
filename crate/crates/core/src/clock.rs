//! Millisecond clocks. Tests and scenarios run on [`SimClock`]; `run` mode
//! uses [`WallClock`].

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

pub trait Clock: Send + Sync {
    /// Milliseconds since the Unix epoch (or since the simulation epoch).
    fn now_ms(&self) -> u64;

    /// Block until `now_ms() >= at_ms`. A simulated clock jumps forward instead.
    fn wait_until(&self, at_ms: u64);

    fn sleep_ms(&self, ms: u64) {
        self.wait_until(self.now_ms().saturating_add(ms));
    }

    fn is_simulated(&self) -> bool {
        false
    }
}

/// Manually driven clock. Cloning shares the underlying time.
#[derive(Debug, Clone, Default)]
pub struct SimClock {
    now: Arc<AtomicU64>,
}

impl SimClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn starting_at(ms: u64) -> Self {
        Self {
            now: Arc::new(AtomicU64::new(ms)),
        }
    }

    pub fn advance(&self, ms: u64) -> u64 {
        self.now.fetch_add(ms, Ordering::SeqCst) + ms
    }

    /// Moves time forward to `ms`; never backwards.
    pub fn set(&self, ms: u64) {
        self.now.fetch_max(ms, Ordering::SeqCst);
    }
}

impl Clock for SimClock {
    fn now_ms(&self) -> u64 {
        self.now.load(Ordering::SeqCst)
    }

    fn wait_until(&self, at_ms: u64) {
        self.set(at_ms);
    }

    fn is_simulated(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WallClock;

impl Clock for WallClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }

    fn wait_until(&self, at_ms: u64) {
        let now = self.now_ms();
        if at_ms > now {
            std::thread::sleep(Duration::from_millis(at_ms - now));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sim_clock_only_moves_forward() {
        let clock = SimClock::new();
        clock.wait_until(5_000);
        assert_eq!(clock.now_ms(), 5_000);
        clock.wait_until(1_000);
        assert_eq!(clock.now_ms(), 5_000);
        clock.sleep_ms(250);
        assert_eq!(clock.now_ms(), 5_250);
    }

    #[test]
    fn clones_share_time() {
        let a = SimClock::new();
        let b = a.clone();
        a.advance(42);
        assert_eq!(b.now_ms(), 42);
    }
}

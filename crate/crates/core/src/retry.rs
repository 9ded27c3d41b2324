use std::time::Duration;

/// Exponential backoff schedule shared by the stream collector and remote scorer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backoff {
    pub base: Duration,
    pub factor: u32,
    pub max: Duration,
}

impl Backoff {
    pub const fn new(base: Duration, factor: u32, max: Duration) -> Self {
        Self { base, factor, max }
    }

    /// A schedule that never sleeps. Used by tests and batch replays.
    pub const fn none() -> Self {
        Self::new(Duration::ZERO, 1, Duration::ZERO)
    }

    /// Delay before retry number `attempt` (0-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        let mult = self.factor.saturating_pow(attempt.min(16));
        self.base.saturating_mul(mult).min(self.max)
    }

    pub fn sleep(&self, attempt: u32) {
        let d = self.delay(attempt);
        if !d.is_zero() {
            std::thread::sleep(d);
        }
    }
}

impl Default for Backoff {
    fn default() -> Self {
        Self::new(Duration::from_millis(250), 2, Duration::from_secs(30))
    }
}

//! Monotonic time sources.
//!
//! Everything in the crate reads time through [`Clock`], so the same code
//! runs against the wall clock or a [`VirtualClock`] that only moves when
//! told to. Time is measured as a [`Timestamp`]: nanoseconds since the
//! clock's origin.

use std::fmt;
use std::ops::{Add, Sub};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Nanoseconds since a clock's origin.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn from_millis(ms: u64) -> Self {
        Timestamp(ms * 1_000_000)
    }

    pub fn as_nanos(self) -> u64 {
        self.0
    }

    /// Time elapsed since `earlier`, saturating at zero.
    pub fn saturating_since(self, earlier: Timestamp) -> Duration {
        Duration::from_nanos(self.0.saturating_sub(earlier.0))
    }
}

impl Add<Duration> for Timestamp {
    type Output = Timestamp;

    fn add(self, rhs: Duration) -> Timestamp {
        let ns = u64::try_from(rhs.as_nanos()).unwrap_or(u64::MAX);
        Timestamp(self.0.saturating_add(ns))
    }
}

impl Sub for Timestamp {
    type Output = Duration;

    fn sub(self, rhs: Timestamp) -> Duration {
        self.saturating_since(rhs)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    Real,
    Virtual,
}

pub trait Clock: Send + Sync + fmt::Debug {
    /// Current reading. Never decreases.
    fn now(&self) -> Timestamp;

    /// Block until `deadline`. A virtual clock jumps forward instead.
    fn sleep_until(&self, deadline: Timestamp);

    fn mode(&self) -> ClockMode;

    fn sleep(&self, d: Duration) {
        let deadline = self.now() + d;
        self.sleep_until(deadline);
    }
}

pub type SharedClock = Arc<dyn Clock>;

/// Wall-clock time, anchored at construction.
#[derive(Debug, Clone)]
pub struct RealClock {
    origin: std::time::Instant,
}

impl RealClock {
    pub fn new() -> Self {
        RealClock {
            origin: std::time::Instant::now(),
        }
    }
}

impl Default for RealClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for RealClock {
    fn now(&self) -> Timestamp {
        Timestamp(u64::try_from(self.origin.elapsed().as_nanos()).unwrap_or(u64::MAX))
    }

    fn sleep_until(&self, deadline: Timestamp) {
        let now = self.now();
        if deadline > now {
            std::thread::sleep(deadline - now);
        }
    }

    fn mode(&self) -> ClockMode {
        ClockMode::Real
    }
}

/// Simulated time. Moves only through [`VirtualClock::advance`],
/// [`VirtualClock::advance_to`] or a simulated sleep.
#[derive(Debug, Clone, Default)]
pub struct VirtualClock {
    now_ns: Arc<AtomicU64>,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn starting_at(t: Timestamp) -> Self {
        VirtualClock {
            now_ns: Arc::new(AtomicU64::new(t.0)),
        }
    }

    pub fn advance(&self, d: Duration) {
        let ns = u64::try_from(d.as_nanos()).unwrap_or(u64::MAX);
        self.now_ns.fetch_add(ns, Ordering::AcqRel);
    }

    /// Move to `t` if it lies in the future; earlier instants are ignored.
    pub fn advance_to(&self, t: Timestamp) {
        self.now_ns.fetch_max(t.0, Ordering::AcqRel);
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Timestamp {
        Timestamp(self.now_ns.load(Ordering::Acquire))
    }

    fn sleep_until(&self, deadline: Timestamp) {
        self.advance_to(deadline);
    }

    fn mode(&self) -> ClockMode {
        ClockMode::Virtual
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn virtual_clock_moves_only_when_told() {
        let clock = VirtualClock::new();
        assert_eq!(clock.now(), Timestamp::ZERO);
        clock.advance(Duration::from_millis(5));
        assert_eq!(clock.now(), Timestamp::from_millis(5));
        clock.sleep(Duration::from_millis(10));
        assert_eq!(clock.now(), Timestamp::from_millis(15));
        clock.advance_to(Timestamp::from_millis(3));
        assert_eq!(clock.now(), Timestamp::from_millis(15));
    }

    #[test]
    fn real_clock_is_monotone() {
        let clock = RealClock::new();
        let a = clock.now();
        clock.sleep(Duration::from_millis(1));
        let b = clock.now();
        assert!(b >= a + Duration::from_millis(1));
    }

    #[test]
    fn timestamp_arithmetic_saturates() {
        let a = Timestamp(10);
        let b = Timestamp(30);
        assert_eq!(b - a, Duration::from_nanos(20));
        assert_eq!(a - b, Duration::ZERO);
    }
}

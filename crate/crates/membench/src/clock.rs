//! Nanosecond timestamps and clock self-measurement.
//!
//! Everything downstream stores integer nanoseconds; floating point shows
//! up only in derived values at the analysis stage. Timer quality is data:
//! a run records the measured resolution of the clock it used, so a curve
//! whose steps sit near the tick size can be read with suspicion.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

/// A monotonic nanosecond source. Implementations must never go
/// backwards between two `now_ns` calls on the same clock.
pub trait Clock: Sync {
    fn now_ns(&self) -> u64;

    /// Tick rate, when the source declares one. `None` means derive it
    /// from the measured resolution.
    fn frequency_hz(&self) -> Option<u64> {
        None
    }

    fn source(&self) -> &str;
}

/// System monotonic clock.
#[derive(Debug, Default, Clone, Copy)]
pub struct MonotonicClock;

impl MonotonicClock {
    pub fn new() -> Self {
        MonotonicClock
    }
}

impl Clock for MonotonicClock {
    fn now_ns(&self) -> u64 {
        let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
        // CLOCK_MONOTONIC cannot fail with a valid timespec pointer.
        let rc = unsafe { libc::clock_gettime(libc::CLOCK_MONOTONIC, &mut ts) };
        debug_assert_eq!(rc, 0);
        ts.tv_sec as u64 * 1_000_000_000 + ts.tv_nsec as u64
    }

    fn source(&self) -> &str {
        "clock_gettime(CLOCK_MONOTONIC)"
    }
}

/// Deterministic clock for protocol tests. Every read advances the tick
/// by a fixed step, so timing-dependent control flow can be driven
/// without sleeping. A step of zero makes a stuck clock.
#[derive(Debug)]
pub struct MockClock {
    tick: AtomicU64,
    step: u64,
}

impl MockClock {
    pub fn new(start_ns: u64, step_ns: u64) -> Self {
        MockClock { tick: AtomicU64::new(start_ns), step: step_ns }
    }

    /// Jump the clock forward without a read.
    pub fn advance(&self, delta_ns: u64) {
        self.tick.fetch_add(delta_ns, Ordering::SeqCst);
    }

    /// Current value without advancing.
    pub fn peek(&self) -> u64 {
        self.tick.load(Ordering::SeqCst)
    }
}

impl Clock for MockClock {
    fn now_ns(&self) -> u64 {
        self.tick.fetch_add(self.step, Ordering::SeqCst)
    }

    fn frequency_hz(&self) -> Option<u64> {
        if self.step == 0 {
            None
        } else {
            Some(1_000_000_000 / self.step)
        }
    }

    fn source(&self) -> &str {
        "mock"
    }
}

/// What a measurement run knew about its clock.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClockInfo {
    pub source: String,
    /// Smallest positive delta seen between back-to-back reads.
    pub resolution_ns: u64,
    /// Declared tick rate, or the effective rate implied by the
    /// measured resolution.
    pub frequency_hz: u64,
}

#[derive(Debug, PartialEq, Eq)]
pub enum ClockError {
    /// Need at least 1000 samples for the minimum to mean anything.
    TooFewSamples { requested: usize },
    /// The clock never moved across the whole sample run.
    NoPositiveDelta,
}

impl std::fmt::Display for ClockError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ClockError::TooFewSamples { requested } => {
                write!(f, "resolution estimate needs at least 1000 samples, got {requested}")
            }
            ClockError::NoPositiveDelta => {
                write!(f, "clock did not advance during resolution estimation")
            }
        }
    }
}

impl std::error::Error for ClockError {}

/// Convenience read of the system monotonic clock.
pub fn now_ns() -> u64 {
    MonotonicClock.now_ns()
}

/// Estimate clock granularity by hammering it: the resolution is the
/// smallest positive difference between consecutive reads.
pub fn estimate_resolution(clock: &dyn Clock, samples: usize) -> Result<ClockInfo, ClockError> {
    if samples < 1000 {
        return Err(ClockError::TooFewSamples { requested: samples });
    }
    let mut min_delta = u64::MAX;
    let mut prev = clock.now_ns();
    for _ in 1..samples {
        let now = clock.now_ns();
        if now > prev {
            let delta = now - prev;
            if delta < min_delta {
                min_delta = delta;
            }
        }
        prev = now;
    }
    if min_delta == u64::MAX {
        return Err(ClockError::NoPositiveDelta);
    }
    let frequency_hz = clock
        .frequency_hz()
        .unwrap_or_else(|| 1_000_000_000u64.checked_div(min_delta).unwrap_or(0));
    Ok(ClockInfo {
        source: clock.source().to_string(),
        resolution_ns: min_delta,
        frequency_hz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::{Duration, Instant, SystemTime};

    #[test]
    fn monotonic_clock_never_decreases() {
        let c = MonotonicClock::new();
        let mut prev = c.now_ns();
        for _ in 0..1_000_000 {
            let now = c.now_ns();
            assert!(now >= prev);
            prev = now;
        }
    }

    #[test]
    fn sleep_shows_up_in_the_delta() {
        let c = MonotonicClock::new();
        let before = c.now_ns();
        std::thread::sleep(Duration::from_millis(1));
        let delta = c.now_ns() - before;
        assert!(delta >= 1_000_000, "slept 1ms but clock moved {delta}ns");
        assert!(delta < 200_000_000, "1ms sleep took {delta}ns");
    }

    // Cross-check against a second, independent clock. Both clocks read
    // the same two instants, so scheduling noise between iterations
    // cancels out; only the tiny windows between the paired reads differ.
    #[test]
    fn agrees_with_wall_clock_over_a_busy_second() {
        let c = MonotonicClock::new();
        let wall_start = SystemTime::now();
        let mono_start = c.now_ns();
        let spin_until = Instant::now() + Duration::from_secs(1);
        while Instant::now() < spin_until {
            std::hint::spin_loop();
        }
        let mono_elapsed = c.now_ns() - mono_start;
        let wall_elapsed = wall_start.elapsed().unwrap().as_nanos() as u64;
        let ratio = mono_elapsed as f64 / wall_elapsed as f64;
        assert!((0.95..1.05).contains(&ratio), "monotonic/wall ratio {ratio}");
    }

    #[test]
    fn real_resolution_is_sane() {
        let info = estimate_resolution(&MonotonicClock::new(), 100_000).unwrap();
        assert!(info.resolution_ns > 0);
        assert!(info.resolution_ns < 1_000_000, "resolution {}ns", info.resolution_ns);
        assert!(info.frequency_hz > 0);
    }

    #[test]
    fn mock_resolution_equals_the_step() {
        let clock = MockClock::new(1000, 7);
        let info = estimate_resolution(&clock, 1000).unwrap();
        assert_eq!(info.resolution_ns, 7);
        assert_eq!(info.frequency_hz, 1_000_000_000 / 7);
        assert_eq!(info.source, "mock");
    }

    #[test]
    fn stuck_clock_is_an_error_not_a_zero() {
        let clock = MockClock::new(42, 0);
        assert_eq!(estimate_resolution(&clock, 1000), Err(ClockError::NoPositiveDelta));
    }

    #[test]
    fn too_few_samples_is_rejected() {
        let clock = MockClock::new(0, 1);
        assert_eq!(
            estimate_resolution(&clock, 999),
            Err(ClockError::TooFewSamples { requested: 999 })
        );
    }

    #[test]
    fn mock_advances_exactly_one_step_per_read() {
        let clock = MockClock::new(100, 5);
        assert_eq!(clock.now_ns(), 100);
        assert_eq!(clock.now_ns(), 105);
        clock.advance(1000);
        assert_eq!(clock.now_ns(), 1110);
        assert_eq!(clock.peek(), 1115);
    }
}

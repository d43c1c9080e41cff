//! Integer-microsecond time base shared by all schedule generators.

pub const US_PER_S: f64 = 1_000_000.0;

/// Period of `freq_hz` in whole microseconds, rounded half-up.
pub fn period_us(freq_hz: f64) -> u64 {
    (US_PER_S / freq_hz + 0.5).floor() as u64
}

/// ON time for `duty_pct` of `period_us`, rounded half-up, kept inside
/// `1..period_us` so that every pulse has both an ON and an OFF part.
pub fn on_time_us(period_us: u64, duty_pct: f64) -> u64 {
    let on = (period_us as f64 * duty_pct / 100.0 + 0.5).floor() as u64;
    on.clamp(1, period_us.saturating_sub(1).max(1))
}

/// Integer periods whose frequencies lie inside `[lo_hz, hi_hz]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeriodRange {
    pub min_us: u64,
    pub max_us: u64,
}

impl PeriodRange {
    pub fn new(lo_hz: f64, hi_hz: f64) -> Self {
        if lo_hz == hi_hz {
            let p = period_us(lo_hz);
            return Self { min_us: p, max_us: p };
        }
        let min_us = (US_PER_S / hi_hz).ceil() as u64;
        let max_us = (US_PER_S / lo_hz).floor() as u64;
        if min_us > max_us {
            // range narrower than one microsecond of period
            let p = period_us(lo_hz);
            Self { min_us: p, max_us: p }
        } else {
            Self { min_us, max_us }
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.min_us == self.max_us
    }

    /// Nearest period to `freq_hz`, clamped into the range.
    pub fn nearest(&self, freq_hz: f64) -> u64 {
        period_us(freq_hz).clamp(self.min_us, self.max_us)
    }
}

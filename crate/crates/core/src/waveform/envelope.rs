use super::params::{steps_to_ma, Timing, ValidatedParams};
use super::timebase::US_PER_S;
use super::WaveformError;

/// Piecewise-linear ramp/plateau/ramp envelope in mA at `t_s` seconds.
///
/// With SHAM the plateau reads 0 while both ramps are kept.
pub fn intensity_envelope(t_s: f64, p: &ValidatedParams) -> Result<f64, WaveformError> {
    let timing = p.timing();
    let total_s = timing.total_us() as f64 / US_PER_S;
    if !(t_s >= 0.0 && t_s <= total_s) {
        return Err(WaveformError::Domain(format!(
            "t = {t_s} s outside session 0..={total_s} s"
        )));
    }
    Ok(continuous_level(&timing, t_s * US_PER_S, p.sham))
}

/// Continuous envelope at `t_us` (may be fractional).
pub(crate) fn continuous_level(timing: &Timing, t_us: f64, sham: bool) -> f64 {
    let plateau = steps_to_ma(timing.steps);
    let w = timing.warmup_us as f64;
    let dose_end = timing.dose_end_us() as f64;
    let total = timing.total_us() as f64;
    if t_us < w {
        plateau * t_us / w
    } else if t_us < dose_end {
        if sham {
            0.0
        } else {
            plateau
        }
    } else if t_us <= total {
        if timing.cooldown_us == 0 {
            0.0
        } else {
            plateau * (total - t_us) / timing.cooldown_us as f64
        }
    } else {
        0.0
    }
}

/// Index of the ramp step that contains `t_us` (relative to ramp start),
/// where step `k` spans `[floor(k*W/n), floor((k+1)*W/n))`.
pub(crate) fn ramp_step(t_us: u64, ramp_us: u64, steps: u32) -> u32 {
    if ramp_us == 0 || steps == 0 {
        return steps;
    }
    let n = steps as u128;
    let k = ((t_us as u128 + 1) * n - 1) / ramp_us as u128;
    k.min(n - 1) as u32
}

/// Start of ramp step `k` relative to the ramp start.
pub(crate) fn ramp_step_start(k: u32, ramp_us: u64, steps: u32) -> u64 {
    ((k as u128 * ramp_us as u128) / steps.max(1) as u128) as u64
}

/// Envelope as the 0.1 mA intensity DAC renders it: each ramp step holds
/// the level the continuous ramp reaches by the end of that step.
pub fn stepped_level_ma(timing: &Timing, t_us: u64, sham: bool) -> f64 {
    let n = timing.steps;
    if t_us < timing.warmup_us {
        let k = ramp_step(t_us, timing.warmup_us, n);
        steps_to_ma(k + 1)
    } else if t_us < timing.dose_end_us() {
        if sham {
            0.0
        } else {
            steps_to_ma(n)
        }
    } else if t_us < timing.total_us() {
        let k = ramp_step(t_us - timing.dose_end_us(), timing.cooldown_us, n);
        steps_to_ma(n - k)
    } else {
        0.0
    }
}

/// Which envelope flavour a caller wants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvelopeKind {
    Continuous,
    Stepped,
}

impl EnvelopeKind {
    pub fn level_ma(self, timing: &Timing, t_us: u64, sham: bool) -> f64 {
        match self {
            EnvelopeKind::Continuous => continuous_level(timing, t_us as f64, sham),
            EnvelopeKind::Stepped => stepped_level_ma(timing, t_us, sham),
        }
    }
}

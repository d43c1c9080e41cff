//! Prescription to resolved trace in one call.

use crate::analog::{resolve_trace, simulate_schedule, AnalogError, CircuitParams};
use crate::trace::Trace;
use crate::waveform::{gen_trns, generate, StimMode, ValidatedParams, WaveformError};

/// Pulsed modes are rendered at no less than this multiple of `freq_hi`.
pub const PULSED_OVERSAMPLING: f64 = 20.0;
pub const DEFAULT_TDCS_RATE_HZ: f64 = 100.0;
pub const DEFAULT_TRNS_RATE_HZ: f64 = 10_000.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RenderError {
    #[error(transparent)]
    Waveform(#[from] WaveformError),
    #[error(transparent)]
    Analog(#[from] AnalogError),
}

/// Smallest rate of the form 2^a * 5^b Hz (so the sample period is a whole
/// number of microseconds) that is at least `min_hz`.
pub fn exact_rate_at_least(min_hz: f64) -> f64 {
    let mut best = 1_000_000.0f64;
    for a in 0..=6 {
        for b in 0..=6 {
            let r = 2f64.powi(a) * 5f64.powi(b);
            if r >= min_hz && r < best {
                best = r;
            }
        }
    }
    best
}

pub fn default_sample_rate_hz(p: &ValidatedParams) -> f64 {
    match p.mode {
        StimMode::Tdcs => DEFAULT_TDCS_RATE_HZ,
        StimMode::Trns => DEFAULT_TRNS_RATE_HZ,
        _ => exact_rate_at_least(PULSED_OVERSAMPLING * p.freq_hi_hz),
    }
}

/// Generates the schedule (or noise) and resolves it through the stage.
pub fn render(
    p: &ValidatedParams,
    circuit: &CircuitParams,
    sample_rate_hz: f64,
) -> Result<Trace, RenderError> {
    match p.mode {
        StimMode::Trns => {
            circuit.validate()?;
            let mut trace = gen_trns(p, sample_rate_hz)?;
            trace.meta.insert("drive".into(), circuit.drive.to_string());
            trace
                .meta
                .insert("r_body_ohm".into(), circuit.r_body_ohm.to_string());
            resolve_trace(&mut trace, circuit);
            Ok(trace)
        }
        _ => Ok(simulate_schedule(&generate(p)?, circuit, sample_rate_hz)?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waveform::{validate_params, StimParams};

    #[test]
    fn exact_rates() {
        assert_eq!(exact_rate_at_least(20_000.0), 20_000.0);
        assert_eq!(exact_rate_at_least(2_100.0), 2_500.0);
        assert_eq!(exact_rate_at_least(1.0), 1.0);
        assert_eq!(exact_rate_at_least(3e6), 1_000_000.0);
    }

    #[test]
    fn renders_every_mode() {
        for mode in [StimMode::Tdcs, StimMode::Tpcs, StimMode::Ces, StimMode::Met, StimMode::Trns] {
            let p = validate_params(&StimParams::new(mode, 1.0, 2.0).with_ramp_rate(60.0)).unwrap();
            let t = render(&p, &CircuitParams::default(), default_sample_rate_hz(&p)).unwrap();
            assert!(t.is_consistent() && !t.is_empty(), "{mode}");
            assert_eq!(t.meta.get("mode").map(String::as_str), Some(mode.as_str()));
        }
    }

    #[test]
    fn undersampled_rejected() {
        let p = validate_params(&StimParams::new(StimMode::Tpcs, 1.0, 2.0).with_freq(1000.0, 1000.0))
            .unwrap();
        assert!(render(&p, &CircuitParams::default(), 1500.0).is_err());
    }
}

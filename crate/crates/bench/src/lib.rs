//! Shared prescriptions for the benchmarks.

use tesim_core::waveform::{validate_params, BurstConfig, PulsePattern, StimMode, StimParams, ValidatedParams};

/// A two-minute CES session at 60 mA/min ramps.
pub fn ces(pattern: PulsePattern) -> ValidatedParams {
    let mut p = StimParams::new(StimMode::Ces, 2.0, 120.0)
        .with_ramp_rate(60.0)
        .with_freq(5.0, 100.0)
        .with_pattern(pattern);
    if pattern == PulsePattern::Burst {
        p = p.with_freq(50.0, 100.0).with_burst(BurstConfig::new(10.0, 4));
    }
    validate_params(&p).expect("bench prescription is valid")
}

pub fn trns(dose_s: f64) -> ValidatedParams {
    validate_params(&StimParams::new(StimMode::Trns, 1.0, dose_s).with_ramp_rate(60.0))
        .expect("bench prescription is valid")
}

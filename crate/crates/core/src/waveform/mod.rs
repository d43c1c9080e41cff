//! Deterministic stimulation schedules for every mode.
//!
//! All generators are pure functions of the validated prescription (seed
//! included). Time is kept in integer microseconds; periods are derived from
//! frequencies by round-half-up. Random per-pulse periods are drawn uniformly
//! over the integer period range with a ChaCha8 generator seeded from
//! [`StimParams::seed`].

mod envelope;
mod noise;
mod params;
mod pulses;
mod schedule;
mod tdcs;
pub mod timebase;

pub use envelope::{intensity_envelope, stepped_level_ma, EnvelopeKind};
pub use noise::{gen_trns, trns_unit_noise, LowPass4, NOISE_CORNER_HZ, NOISE_FILTER_ORDER};
pub use params::*;
pub use pulses::{
    duty_cycle_pct, fm_schedule, gen_ces, gen_met, gen_tpcs, pulse_frequency_hz, RNG_ALGORITHM,
};
pub use schedule::{EventSchedule, OutputEvent, Polarity};
pub use tdcs::gen_tdcs;

/// Crate version stamped into schedule and trace metadata.
pub const GENERATOR_VERSION: &str = concat!("tesim-core ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WaveformError {
    #[error("{0}")]
    Domain(String),
    #[error("generator for {expected} called with a {actual} prescription")]
    WrongMode { expected: StimMode, actual: StimMode },
    #[error("tRNS has no event structure; render it with gen_trns")]
    NoiseHasNoEvents,
}

/// Builds the event schedule for any pulsed or DC mode.
pub fn generate(p: &ValidatedParams) -> Result<EventSchedule, WaveformError> {
    match p.mode {
        StimMode::Tdcs => gen_tdcs(p),
        StimMode::Tpcs => gen_tpcs(p),
        StimMode::Ces => gen_ces(p),
        StimMode::Met => gen_met(p),
        StimMode::Trns => Err(WaveformError::NoiseHasNoEvents),
    }
}

pub(crate) fn expect_mode(p: &StimParams, expected: StimMode) -> Result<(), WaveformError> {
    if p.mode == expected {
        Ok(())
    } else {
        Err(WaveformError::WrongMode {
            expected,
            actual: p.mode,
        })
    }
}

use super::envelope::ramp_step_start;
use super::params::{steps_to_ma, StimMode, ValidatedParams};
use super::schedule::{EventSchedule, OutputEvent, Polarity};
use super::{expect_mode, WaveformError};

/// tDCS: one event per 0.1 mA ramp step, one plateau event, mirrored
/// cool-down. Always anode to cathode.
pub fn gen_tdcs(p: &ValidatedParams) -> Result<EventSchedule, WaveformError> {
    expect_mode(p, StimMode::Tdcs)?;
    let timing = p.timing();
    let n = timing.steps;
    let mut schedule = EventSchedule::new(p.params().clone(), &timing);
    schedule.meta.insert("ramp_quantum_mA".into(), "0.1".into());

    let mut push = |start: u64, end: u64, amplitude_ma: f64| {
        if end > start {
            schedule.events.push(OutputEvent {
                t_start_us: start,
                duration_us: end - start,
                polarity: Polarity::Positive,
                amplitude_ma,
            });
        }
    };

    let w = timing.warmup_us;
    for k in 0..n {
        push(
            ramp_step_start(k, w, n),
            ramp_step_start(k + 1, w, n),
            steps_to_ma(k + 1),
        );
    }
    let plateau = if p.sham { 0.0 } else { steps_to_ma(n) };
    push(w, timing.dose_end_us(), plateau);
    let c0 = timing.dose_end_us();
    for k in 0..n {
        push(
            c0 + ramp_step_start(k, timing.cooldown_us, n),
            c0 + ramp_step_start(k + 1, timing.cooldown_us, n),
            steps_to_ma(n - k),
        );
    }
    Ok(schedule)
}

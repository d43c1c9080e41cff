use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::envelope::stepped_level_ma;
use super::params::{PulsePattern, StimMode, Timing, ValidatedParams};
use super::schedule::{EventSchedule, OutputEvent, Polarity};
use super::timebase::{on_time_us, period_us, PeriodRange};
use super::{expect_mode, WaveformError};

/// PRNG behind every random draw in the generators.
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha), seed_from_u64";

/// Duty cycle in percent from ON and OFF times.
pub fn duty_cycle_pct(t_on_us: f64, t_off_us: f64) -> Result<f64, WaveformError> {
    if !(t_on_us > 0.0) {
        return Err(WaveformError::Domain(format!(
            "T_ON must be positive, got {t_on_us} us"
        )));
    }
    if !(t_off_us >= 0.0) {
        return Err(WaveformError::Domain(format!(
            "T_OFF must be non-negative, got {t_off_us} us"
        )));
    }
    Ok(100.0 * t_on_us / (t_on_us + t_off_us))
}

/// Pulse repetition frequency `1 / (T_ON + T_OFF)` in hertz.
pub fn pulse_frequency_hz(t_on_us: f64, t_off_us: f64) -> Result<f64, WaveformError> {
    let period_us = t_on_us + t_off_us;
    if !(period_us > 0.0) || t_on_us < 0.0 || t_off_us < 0.0 {
        return Err(WaveformError::Domain(format!(
            "pulse period must be positive, got {period_us} us"
        )));
    }
    Ok(1e6 / period_us)
}

/// One FM cycle: `n_steps` frequencies rising linearly from `lo` to `hi`,
/// then falling back without repeating either endpoint. The cycle repeats.
pub fn fm_schedule(freq_lo_hz: f64, freq_hi_hz: f64, n_steps: u32) -> Result<Vec<f64>, WaveformError> {
    if n_steps < 2 {
        return Err(WaveformError::Domain(format!(
            "FM needs at least 2 steps, got {n_steps}"
        )));
    }
    if !(freq_lo_hz <= freq_hi_hz) {
        return Err(WaveformError::Domain(format!(
            "FM range inverted: {freq_lo_hz} > {freq_hi_hz} Hz"
        )));
    }
    let last = n_steps - 1;
    let rising: Vec<f64> = (0..n_steps)
        .map(|k| {
            if k == last {
                freq_hi_hz
            } else {
                freq_lo_hz + (freq_hi_hz - freq_lo_hz) * k as f64 / last as f64
            }
        })
        .collect();
    let falling = rising[1..last as usize].iter().rev().copied();
    Ok(rising.iter().copied().chain(falling).collect())
}

enum PeriodSource {
    Fixed(u64),
    Uniform(PeriodRange, ChaCha8Rng),
    Cycle(Vec<u64>, usize),
}

impl PeriodSource {
    fn next_period(&mut self) -> u64 {
        match self {
            PeriodSource::Fixed(p) => *p,
            PeriodSource::Uniform(range, rng) => {
                if range.is_degenerate() {
                    range.min_us
                } else {
                    rng.random_range(range.min_us..=range.max_us)
                }
            }
            PeriodSource::Cycle(periods, idx) => {
                let p = periods[*idx];
                *idx = (*idx + 1) % periods.len();
                p
            }
        }
    }
}

struct TrainBuilder<'a> {
    timing: Timing,
    duty_pct: f64,
    sham: bool,
    biphasic: bool,
    schedule: &'a mut EventSchedule,
}

impl TrainBuilder<'_> {
    /// Emits one pulse at `t_us`; returns false once a full pulse no longer
    /// fits before the session end.
    fn pulse(&mut self, t_us: u64, period_us: u64) -> bool {
        let total = self.timing.total_us();
        let on = on_time_us(period_us, self.duty_pct);
        if t_us + on > total {
            return false;
        }
        let polarity = if self.biphasic && self.schedule.events.len() % 2 == 1 {
            Polarity::Negative
        } else {
            Polarity::Positive
        };
        self.schedule.events.push(OutputEvent {
            t_start_us: t_us,
            duration_us: on,
            polarity,
            amplitude_ma: stepped_level_ma(&self.timing, t_us, self.sham),
        });
        true
    }

    fn periodic(&mut self, mut source: PeriodSource) {
        let mut t = 0u64;
        loop {
            let period = source.next_period();
            if !self.pulse(t, period) {
                break;
            }
            t += period;
        }
    }

    /// Chains of `count` pulses every `burst_us`, anchored so that a burst
    /// begins exactly at the start of the dose window.
    fn bursts(&mut self, burst_us: u64, chain_period_us: u64, count: u32) {
        let mut start = self.timing.dose_start_us() % burst_us;
        while start < self.timing.total_us() {
            for j in 0..count as u64 {
                if !self.pulse(start + j * chain_period_us, chain_period_us) {
                    return;
                }
            }
            start += burst_us;
        }
    }
}

fn rng_for(p: &ValidatedParams) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(p.seed)
}

/// tPCS: monophasic train, each period drawn uniformly from the period range.
pub fn gen_tpcs(p: &ValidatedParams) -> Result<EventSchedule, WaveformError> {
    expect_mode(p, StimMode::Tpcs)?;
    let timing = p.timing();
    let mut schedule = EventSchedule::new(p.params().clone(), &timing);
    let range = PeriodRange::new(p.freq_lo_hz, p.freq_hi_hz);
    annotate_random(&mut schedule, &range);
    TrainBuilder {
        timing,
        duty_pct: p.duty_pct,
        sham: p.sham,
        biphasic: false,
        schedule: &mut schedule,
    }
    .periodic(PeriodSource::Uniform(range, rng_for(p)));
    Ok(schedule)
}

/// CES: biphasic train whose timing follows the selected pattern.
pub fn gen_ces(p: &ValidatedParams) -> Result<EventSchedule, WaveformError> {
    expect_mode(p, StimMode::Ces)?;
    build_ces(p)
}

/// MET: CES with the fixed built-in prescription substituted at validation.
pub fn gen_met(p: &ValidatedParams) -> Result<EventSchedule, WaveformError> {
    expect_mode(p, StimMode::Met)?;
    build_ces(p)
}

fn build_ces(p: &ValidatedParams) -> Result<EventSchedule, WaveformError> {
    let timing = p.timing();
    let mut schedule = EventSchedule::new(p.params().clone(), &timing);
    schedule.meta.insert("pattern".into(), p.pattern.to_string());
    let range = PeriodRange::new(p.freq_lo_hz, p.freq_hi_hz);

    let source = match p.pattern {
        PulsePattern::Continuous => Some(PeriodSource::Fixed(period_us(p.freq_lo_hz))),
        PulsePattern::Random => {
            annotate_random(&mut schedule, &range);
            Some(PeriodSource::Uniform(range, rng_for(p)))
        }
        PulsePattern::Fm => {
            let periods = fm_schedule(p.freq_lo_hz, p.freq_hi_hz, p.fm_steps)?
                .into_iter()
                .map(|f| range.nearest(f))
                .collect();
            schedule.meta.insert("fm_steps".into(), p.fm_steps.to_string());
            Some(PeriodSource::Cycle(periods, 0))
        }
        PulsePattern::Burst => None,
    };

    let mut builder = TrainBuilder {
        timing,
        duty_pct: p.duty_pct,
        sham: p.sham,
        biphasic: true,
        schedule: &mut schedule,
    };
    match source {
        Some(source) => builder.periodic(source),
        None => {
            let burst = p.burst.ok_or_else(|| {
                WaveformError::Domain("Burst pattern without burst parameters".into())
            })?;
            let chain_hz = burst.chain_freq_hz.unwrap_or(p.freq_hi_hz);
            builder.bursts(
                period_us(burst.burst_freq_hz),
                period_us(chain_hz),
                burst.chain_count,
            );
            schedule.meta.insert("chain_freq_Hz".into(), chain_hz.to_string());
        }
    }
    Ok(schedule)
}

fn annotate_random(schedule: &mut EventSchedule, range: &PeriodRange) {
    schedule.meta.insert("rng".into(), RNG_ALGORITHM.into());
    schedule.meta.insert(
        "period_distribution".into(),
        format!("uniform integer us in [{}, {}]", range.min_us, range.max_us),
    );
}

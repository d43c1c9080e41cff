//! Measurements on rendered traces: pulse detection, duty and frequency,
//! and the power spectrum.
//!
//! Nothing here looks at the schedule that produced a trace; these functions
//! only see samples, so they can be used to check the generator.

use std::collections::BTreeMap;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::trace::{Channel, Trace};
use crate::waveform::{duty_cycle_pct, pulse_frequency_hz, Polarity};

/// Half of the 0.1 mA intensity step.
pub const DEFAULT_THRESHOLD_MA: f64 = 0.05;
pub const DEFAULT_HYSTERESIS_SAMPLES: usize = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("need at least {needed} {what}, got {got}")]
    InsufficientData {
        what: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("{0}")]
    Domain(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectOptions {
    pub threshold_ma: f64,
    /// Below-threshold gaps of at most this many samples do not end a pulse.
    pub hysteresis_samples: usize,
    pub channel: Channel,
}

impl Default for DetectOptions {
    fn default() -> Self {
        Self {
            threshold_ma: DEFAULT_THRESHOLD_MA,
            hysteresis_samples: DEFAULT_HYSTERESIS_SAMPLES,
            channel: Channel::Actual,
        }
    }
}

impl DetectOptions {
    pub fn with_threshold(mut self, threshold_ma: f64) -> Self {
        self.threshold_ma = threshold_ma;
        self
    }

    pub fn on(mut self, channel: Channel) -> Self {
        self.channel = channel;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectedPulse {
    pub start_index: usize,
    pub len_samples: usize,
    pub t_start_s: f64,
    pub duration_s: f64,
    pub polarity: Polarity,
    /// Median |current| over the pulse.
    pub amplitude_ma: f64,
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        (values[mid - 1] + values[mid]) / 2.0
    }
}

/// Splits the chosen channel into runs of `|x| >= threshold`. A sign change
/// always starts a new pulse.
pub fn detect_pulses(trace: &Trace, opts: &DetectOptions) -> Vec<DetectedPulse> {
    let x = trace.channel(opts.channel);
    let fs = trace.sample_rate_hz;
    let mut out = Vec::new();
    let mut make = |start: usize, last: usize, sign: f64| {
        let mut mags: Vec<f64> = x[start..=last]
            .iter()
            .filter(|v| v.abs() >= opts.threshold_ma)
            .map(|v| v.abs())
            .collect();
        let len = last - start + 1;
        out.push(DetectedPulse {
            start_index: start,
            len_samples: len,
            t_start_s: start as f64 / fs,
            duration_s: len as f64 / fs,
            polarity: Polarity::of(sign),
            amplitude_ma: median(&mut mags),
        });
    };

    // (start, last above-threshold index, sign)
    let mut open: Option<(usize, usize, f64)> = None;
    for (i, &v) in x.iter().enumerate() {
        let above = v.abs() >= opts.threshold_ma;
        let sign = v.signum();
        match open {
            Some((start, last, s)) => {
                if above && sign == s {
                    open = Some((start, i, s));
                } else if above {
                    make(start, last, s);
                    open = Some((i, i, sign));
                } else if i - last > opts.hysteresis_samples {
                    make(start, last, s);
                    open = None;
                }
            }
            None if above => open = Some((i, i, sign)),
            None => {}
        }
    }
    if let Some((start, last, s)) = open {
        make(start, last, s);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PulseMeasurement {
    pub t_on_s: f64,
    pub t_period_s: f64,
    pub duty_pct: f64,
    pub freq_hz: f64,
}

/// Duty and frequency for each consecutive pair: the period is the distance
/// between starts and ON time is the first pulse's duration.
pub fn measure_duty_and_freq(
    pulses: &[DetectedPulse],
) -> Result<Vec<PulseMeasurement>, AnalysisError> {
    if pulses.len() < 2 {
        return Err(AnalysisError::InsufficientData {
            what: "pulses",
            needed: 2,
            got: pulses.len(),
        });
    }
    pulses
        .windows(2)
        .map(|w| {
            let t_p = w[1].t_start_s - w[0].t_start_s;
            let t_on = w[0].duration_s;
            let t_off = t_p - t_on;
            let us = 1e6;
            Ok(PulseMeasurement {
                t_on_s: t_on,
                t_period_s: t_p,
                duty_pct: duty_cycle_pct(t_on * us, t_off * us)
                    .map_err(|e| AnalysisError::Domain(e.to_string()))?,
                freq_hz: pulse_frequency_hz(t_on * us, t_off * us)
                    .map_err(|e| AnalysisError::Domain(e.to_string()))?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeasurementSummary {
    pub pulses: usize,
    pub median_duty_pct: f64,
    pub median_freq_hz: f64,
    pub min_freq_hz: f64,
    pub max_freq_hz: f64,
}

pub fn summarize(pulses: usize, m: &[PulseMeasurement]) -> MeasurementSummary {
    let mut duty: Vec<f64> = m.iter().map(|x| x.duty_pct).collect();
    let mut freq: Vec<f64> = m.iter().map(|x| x.freq_hz).collect();
    MeasurementSummary {
        pulses,
        median_duty_pct: median(&mut duty),
        median_freq_hz: median(&mut freq),
        min_freq_hz: freq.first().copied().unwrap_or(0.0),
        max_freq_hz: freq.last().copied().unwrap_or(0.0),
    }
}

/// One-sided power spectrum scaled so that the bins sum to the mean-square
/// value of the input.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Spectrum {
    pub bin_width_hz: f64,
    pub power: Vec<f64>,
    pub meta: BTreeMap<String, String>,
}

impl Spectrum {
    pub fn total_power(&self) -> f64 {
        self.power.iter().sum()
    }

    pub fn nyquist_hz(&self) -> f64 {
        self.bin_width_hz * (self.power.len() - 1) as f64
    }

    pub fn frequency_hz(&self, bin: usize) -> f64 {
        bin as f64 * self.bin_width_hz
    }

    pub fn peak_bin(&self) -> usize {
        self.power
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |(i, _)| i)
    }
}

pub fn mean_square(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Spectrum of one channel, zero-padded to the next power of two.
pub fn fft_spectrum(trace: &Trace, channel: Channel) -> Result<Spectrum, AnalysisError> {
    spectrum_of(trace.channel(channel), trace.sample_rate_hz)
}

pub fn spectrum_of(x: &[f64], sample_rate_hz: f64) -> Result<Spectrum, AnalysisError> {
    if x.len() < 2 {
        return Err(AnalysisError::InsufficientData {
            what: "samples",
            needed: 2,
            got: x.len(),
        });
    }
    if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
        return Err(AnalysisError::Domain(format!(
            "sample rate {sample_rate_hz} Hz must be positive"
        )));
    }
    let n = x.len();
    let m = n.next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    buf.resize(m, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);

    let scale = 1.0 / (m as f64 * n as f64);
    let half = m / 2;
    let power = (0..=half)
        .map(|k| {
            let p = buf[k].norm_sqr() * scale;
            if k == 0 || k == half {
                p
            } else {
                2.0 * p
            }
        })
        .collect();

    let mut meta = BTreeMap::new();
    meta.insert("samples".into(), n.to_string());
    meta.insert("fft_length".into(), m.to_string());
    meta.insert("padding".into(), "zero-padded to next power of two".into());
    meta.insert("scaling".into(), "one-sided power, sums to mean square".into());
    Ok(Spectrum {
        bin_width_hz: sample_rate_hz / m as f64,
        power,
        meta,
    })
}

/// Fraction of spectral power in bins at or below `cutoff_hz`.
pub fn band_energy_ratio(s: &Spectrum, cutoff_hz: f64) -> Result<f64, AnalysisError> {
    let nyquist = s.nyquist_hz();
    if !(cutoff_hz >= 0.0 && cutoff_hz <= nyquist * (1.0 + 1e-12)) {
        return Err(AnalysisError::Domain(format!(
            "cutoff {cutoff_hz} Hz outside 0..={nyquist} Hz"
        )));
    }
    let total = s.total_power();
    if total == 0.0 {
        return Ok(1.0);
    }
    let below: f64 = s
        .power
        .iter()
        .enumerate()
        .filter(|(k, _)| s.frequency_hz(*k) <= cutoff_hz)
        .map(|(_, p)| p)
        .sum();
    Ok(below / total)
}

//! Band-limited random noise (tRNS).

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::envelope::continuous_level;
use super::params::{StimMode, ValidatedParams};
use super::pulses::RNG_ALGORITHM;
use super::timebase::US_PER_S;
use super::{expect_mode, WaveformError};
use crate::trace::Trace;

/// -3 dB corner of the noise shaping filter. Keeps at least 95 % of the
/// noise energy below 300 Hz.
pub const NOISE_CORNER_HZ: f64 = 240.0;
pub const NOISE_FILTER_ORDER: u32 = 4;
pub const MIN_NOISE_SAMPLE_RATE_HZ: f64 = 2000.0;

#[derive(Debug, Clone, Copy)]
struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    z1: f64,
    z2: f64,
}

impl Biquad {
    fn lowpass(corner_hz: f64, sample_rate_hz: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * corner_hz / sample_rate_hz;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b0: (1.0 - cos) / 2.0 / a0,
            b1: (1.0 - cos) / a0,
            b2: (1.0 - cos) / 2.0 / a0,
            a1: -2.0 * cos / a0,
            a2: (1.0 - alpha) / a0,
            z1: 0.0,
            z2: 0.0,
        }
    }

    // transposed direct form II
    fn process(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.z1;
        self.z1 = self.b1 * x - self.a1 * y + self.z2;
        self.z2 = self.b2 * x - self.a2 * y;
        y
    }
}

/// 4th-order Butterworth low-pass built from two bilinear-transform biquads.
#[derive(Debug, Clone)]
pub struct LowPass4 {
    sections: [Biquad; 2],
}

impl LowPass4 {
    pub fn new(corner_hz: f64, sample_rate_hz: f64) -> Self {
        // pole-pair Q values of a 4th-order Butterworth
        let q1 = 1.0 / (2.0 * (PI / 8.0).cos());
        let q2 = 1.0 / (2.0 * (3.0 * PI / 8.0).cos());
        Self {
            sections: [
                Biquad::lowpass(corner_hz, sample_rate_hz, q1),
                Biquad::lowpass(corner_hz, sample_rate_hz, q2),
            ],
        }
    }

    pub fn process(&mut self, x: f64) -> f64 {
        self.sections.iter_mut().fold(x, |acc, s| s.process(acc))
    }
}

fn sample_count(total_us: u64, sample_rate_hz: f64) -> usize {
    (total_us as f64 * sample_rate_hz / US_PER_S).ceil() as usize
}

fn sample_time_us(k: usize, sample_rate_hz: f64) -> f64 {
    k as f64 * US_PER_S / sample_rate_hz
}

/// Filtered Gaussian noise for the whole session, normalised to unit RMS
/// over the dose window.
pub fn trns_unit_noise(p: &ValidatedParams, sample_rate_hz: f64) -> Result<Vec<f64>, WaveformError> {
    check_rate(sample_rate_hz)?;
    let timing = p.timing();
    let n = sample_count(timing.total_us(), sample_rate_hz);
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut filter = LowPass4::new(NOISE_CORNER_HZ, sample_rate_hz);
    let mut out: Vec<f64> = (0..n)
        .map(|_| {
            let x: f64 = StandardNormal.sample(&mut rng);
            filter.process(x)
        })
        .collect();

    let dose = (timing.dose_start_us() as f64, timing.dose_end_us() as f64);
    let (sum_sq, count) = out
        .iter()
        .enumerate()
        .filter(|(k, _)| {
            let t = sample_time_us(*k, sample_rate_hz);
            t >= dose.0 && t < dose.1
        })
        .fold((0.0, 0usize), |(s, c), (_, v)| (s + v * v, c + 1));
    let (sum_sq, count) = if count == 0 {
        (out.iter().map(|v| v * v).sum(), out.len())
    } else {
        (sum_sq, count)
    };
    let rms = (sum_sq / count.max(1) as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms);
    }
    Ok(out)
}

/// tRNS: unit noise scaled by the intensity envelope, so the plateau RMS
/// equals the prescribed intensity.
pub fn gen_trns(p: &ValidatedParams, sample_rate_hz: f64) -> Result<Trace, WaveformError> {
    expect_mode(p, StimMode::Trns)?;
    let timing = p.timing();
    let unit = trns_unit_noise(p, sample_rate_hz)?;
    let commanded: Vec<f64> = unit
        .iter()
        .enumerate()
        .map(|(k, u)| {
            let level = continuous_level(&timing, sample_time_us(k, sample_rate_hz), p.sham);
            u * level
        })
        .collect();

    let mut meta = BTreeMap::new();
    meta.insert("generator".into(), super::GENERATOR_VERSION.into());
    meta.insert("mode".into(), p.mode.to_string());
    meta.insert("seed".into(), p.seed.to_string());
    meta.insert("rng".into(), RNG_ALGORITHM.into());
    meta.insert(
        "noise_filter".into(),
        format!("butterworth order {NOISE_FILTER_ORDER}, corner {NOISE_CORNER_HZ} Hz"),
    );
    meta.insert("intensity_mA".into(), p.intensity_ma.to_string());
    meta.insert("sham".into(), p.sham.to_string());
    Ok(Trace::from_commanded(sample_rate_hz, commanded, meta))
}

fn check_rate(sample_rate_hz: f64) -> Result<(), WaveformError> {
    if sample_rate_hz >= MIN_NOISE_SAMPLE_RATE_HZ && sample_rate_hz.is_finite() {
        Ok(())
    } else {
        Err(WaveformError::Domain(format!(
            "noise sample rate {sample_rate_hz} Hz below the 2 kHz minimum"
        )))
    }
}

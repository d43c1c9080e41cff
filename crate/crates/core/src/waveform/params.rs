//! Stimulation prescriptions and their validation against the device limits.

use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::timebase::{period_us, US_PER_S};

pub const INTENSITY_MIN_MA: f64 = 0.1;
pub const INTENSITY_MAX_MA: f64 = 4.0;
pub const INTENSITY_STEP_MA: f64 = 0.1;
pub const FREQ_MIN_HZ: f64 = 0.5;
pub const FREQ_MAX_HZ: f64 = 1000.0;
pub const DUTY_MIN_PCT: f64 = 10.0;
pub const DUTY_MAX_PCT: f64 = 90.0;
pub const BURST_FREQ_MIN_HZ: f64 = 1.0;
pub const BURST_FREQ_MAX_HZ: f64 = 20.0;
pub const CHAIN_COUNT_MIN: u32 = 2;
pub const CHAIN_COUNT_MAX: u32 = 15;
pub const DEFAULT_RAMP_RATE_MA_PER_MIN: f64 = 1.0;
pub const DEFAULT_FM_STEPS: u32 = 16;
pub const DEFAULT_SEED: u64 = 1;

/// Fixed MET prescription: 0.5 Hz biphasic, 1 % duty (20 ms pulses), no pattern.
pub const MET_FREQ_HZ: f64 = 0.5;
pub const MET_DUTY_PCT: f64 = 1.0;

const LATTICE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StimMode {
    Tdcs,
    Tpcs,
    Ces,
    Met,
    Trns,
}

impl StimMode {
    pub fn as_str(self) -> &'static str {
        match self {
            StimMode::Tdcs => "tdcs",
            StimMode::Tpcs => "tpcs",
            StimMode::Ces => "ces",
            StimMode::Met => "met",
            StimMode::Trns => "trns",
        }
    }

    /// Modes whose output is a pulse train.
    pub fn is_pulsed(self) -> bool {
        matches!(self, StimMode::Tpcs | StimMode::Ces | StimMode::Met)
    }
}

impl fmt::Display for StimMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StimMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tdcs" => Ok(StimMode::Tdcs),
            "tpcs" => Ok(StimMode::Tpcs),
            "ces" => Ok(StimMode::Ces),
            "met" => Ok(StimMode::Met),
            "trns" => Ok(StimMode::Trns),
            other => Err(format!(
                "unknown mode `{other}` (expected tdcs, tpcs, ces, met or trns)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PulsePattern {
    #[default]
    Continuous,
    Random,
    Fm,
    Burst,
}

impl PulsePattern {
    pub fn as_str(self) -> &'static str {
        match self {
            PulsePattern::Continuous => "continuous",
            PulsePattern::Random => "random",
            PulsePattern::Fm => "fm",
            PulsePattern::Burst => "burst",
        }
    }
}

impl fmt::Display for PulsePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PulsePattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "continuous" => Ok(PulsePattern::Continuous),
            "random" => Ok(PulsePattern::Random),
            "fm" => Ok(PulsePattern::Fm),
            "burst" => Ok(PulsePattern::Burst),
            other => Err(format!(
                "unknown pattern `{other}` (expected continuous, random, fm or burst)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurstConfig {
    pub burst_freq_hz: f64,
    pub chain_count: u32,
    /// Pulse rate inside a chain. `None` runs the chain at `freq_hi_hz`.
    pub chain_freq_hz: Option<f64>,
}

impl BurstConfig {
    pub fn new(burst_freq_hz: f64, chain_count: u32) -> Self {
        Self {
            burst_freq_hz,
            chain_count,
            chain_freq_hz: None,
        }
    }
}

/// Full prescription for one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimParams {
    pub mode: StimMode,
    pub intensity_ma: f64,
    pub ramp_rate_ma_per_min: f64,
    pub dose_s: f64,
    pub freq_lo_hz: f64,
    pub freq_hi_hz: f64,
    pub duty_pct: f64,
    pub pattern: PulsePattern,
    pub burst: Option<BurstConfig>,
    /// FM steps per half-cycle.
    pub fm_steps: u32,
    pub sham: bool,
    pub seed: u64,
}

impl StimParams {
    /// Prescription with the documented defaults: 1 mA/min ramps, a 10 Hz
    /// single-frequency range at 50 % duty, continuous pattern, no SHAM.
    pub fn new(mode: StimMode, intensity_ma: f64, dose_s: f64) -> Self {
        Self {
            mode,
            intensity_ma,
            ramp_rate_ma_per_min: DEFAULT_RAMP_RATE_MA_PER_MIN,
            dose_s,
            freq_lo_hz: 10.0,
            freq_hi_hz: 10.0,
            duty_pct: 50.0,
            pattern: PulsePattern::Continuous,
            burst: None,
            fm_steps: DEFAULT_FM_STEPS,
            sham: false,
            seed: DEFAULT_SEED,
        }
    }

    pub fn with_freq(mut self, lo_hz: f64, hi_hz: f64) -> Self {
        self.freq_lo_hz = lo_hz;
        self.freq_hi_hz = hi_hz;
        self
    }

    pub fn with_duty(mut self, duty_pct: f64) -> Self {
        self.duty_pct = duty_pct;
        self
    }

    pub fn with_pattern(mut self, pattern: PulsePattern) -> Self {
        self.pattern = pattern;
        self
    }

    pub fn with_burst(mut self, burst: BurstConfig) -> Self {
        self.pattern = PulsePattern::Burst;
        self.burst = Some(burst);
        self
    }

    pub fn with_ramp_rate(mut self, ma_per_min: f64) -> Self {
        self.ramp_rate_ma_per_min = ma_per_min;
        self
    }

    pub fn with_sham(mut self, sham: bool) -> Self {
        self.sham = sham;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// One broken rule: which field, what it held, and what is legal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub value: String,
    pub rule: String,
}

impl Violation {
    fn new(field: &str, value: impl fmt::Display, rule: impl Into<String>) -> Self {
        Self {
            field: field.to_string(),
            value: value.to_string(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {}: {}", self.field, self.value, self.rule)
    }
}

/// Every violation found in a prescription.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct Violations(pub Vec<Violation>);

impl Violations {
    pub fn iter(&self) -> impl Iterator<Item = &Violation> {
        self.0.iter()
    }

    pub fn mentions(&self, field: &str) -> bool {
        self.0.iter().any(|v| v.field == field)
    }
}

impl fmt::Display for Violations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} violation(s)", self.0.len())?;
        for v in &self.0 {
            write!(f, "\n  - {v}")?;
        }
        Ok(())
    }
}

/// Segment lengths of the ramp/dose/ramp envelope in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timing {
    pub warmup_us: u64,
    pub dose_us: u64,
    pub cooldown_us: u64,
    /// Intensity in 0.1 mA steps.
    pub steps: u32,
}

impl Timing {
    pub fn total_us(&self) -> u64 {
        self.warmup_us + self.dose_us + self.cooldown_us
    }

    pub fn dose_start_us(&self) -> u64 {
        self.warmup_us
    }

    pub fn dose_end_us(&self) -> u64 {
        self.warmup_us + self.dose_us
    }

    pub fn in_dose(&self, t_us: u64) -> bool {
        t_us >= self.dose_start_us() && t_us < self.dose_end_us()
    }
}

/// A prescription that passed [`validate_params`].
///
/// Holds the *effective* parameters: for MET the user frequency, duty and
/// pattern are replaced by the fixed built-ins.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedParams {
    params: StimParams,
    warnings: Vec<String>,
}

impl ValidatedParams {
    pub fn params(&self) -> &StimParams {
        &self.params
    }

    pub fn into_params(self) -> StimParams {
        self.params
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Intensity as a count of 0.1 mA steps.
    pub fn intensity_steps(&self) -> u32 {
        intensity_steps(self.params.intensity_ma)
    }

    /// Intensity snapped to the 0.1 mA lattice.
    pub fn quantized_intensity_ma(&self) -> f64 {
        steps_to_ma(self.intensity_steps())
    }

    pub fn timing(&self) -> Timing {
        let steps = self.intensity_steps();
        let ramp_s = steps_to_ma(steps) / self.params.ramp_rate_ma_per_min * 60.0;
        let warmup_us = (ramp_s * US_PER_S).round() as u64;
        let dose_us = (self.params.dose_s * US_PER_S).round() as u64;
        Timing {
            warmup_us,
            dose_us,
            cooldown_us: warmup_us,
            steps,
        }
    }

    /// Bypasses validation. Used for internal paths that need a zero
    /// intensity, which the public rules reject.
    #[cfg(test)]
    pub(crate) fn new_unchecked(params: StimParams) -> Self {
        Self {
            params,
            warnings: Vec::new(),
        }
    }
}

impl Deref for ValidatedParams {
    type Target = StimParams;

    fn deref(&self) -> &StimParams {
        &self.params
    }
}

pub(crate) fn intensity_steps(intensity_ma: f64) -> u32 {
    (intensity_ma / INTENSITY_STEP_MA).round().max(0.0) as u32
}

pub(crate) fn steps_to_ma(steps: u32) -> f64 {
    steps as f64 / 10.0
}

/// True when `ma` lies on the 0.1 mA lattice between 0.1 and 4.0 mA.
pub fn is_legal_intensity(ma: f64) -> bool {
    intensity_violation(ma).is_none()
}

fn intensity_violation(ma: f64) -> Option<Violation> {
    let field = "intensity_mA";
    if !ma.is_finite() {
        return Some(Violation::new(field, ma, "must be a finite number"));
    }
    if ma < INTENSITY_MIN_MA - LATTICE_TOL {
        return Some(Violation::new(
            field,
            ma,
            "intensity below 0.1 mA minimum (legal range 0.1..=4.0 mA)",
        ));
    }
    if ma > INTENSITY_MAX_MA + LATTICE_TOL {
        return Some(Violation::new(
            field,
            ma,
            "intensity above 4.0 mA maximum (legal range 0.1..=4.0 mA)",
        ));
    }
    let scaled = ma / INTENSITY_STEP_MA;
    if (scaled - scaled.round()).abs() > LATTICE_TOL * 10.0 {
        return Some(Violation::new(
            field,
            ma,
            "intensity must be a multiple of 0.1 mA",
        ));
    }
    None
}

/// Checks every prescription rule and reports all broken ones.
pub fn validate_params(p: &StimParams) -> Result<ValidatedParams, Violations> {
    let mut out = Vec::new();
    let mut warnings = Vec::new();

    out.extend(intensity_violation(p.intensity_ma));

    if !(p.ramp_rate_ma_per_min.is_finite() && p.ramp_rate_ma_per_min > 0.0) {
        out.push(Violation::new(
            "ramp_rate_mA_per_min",
            p.ramp_rate_ma_per_min,
            "ramp rate must be a positive number",
        ));
    }
    if !(p.dose_s.is_finite() && p.dose_s * US_PER_S >= 1.0) {
        out.push(Violation::new(
            "dose_s",
            p.dose_s,
            "dose duration must be positive (at least 1 us)",
        ));
    }

    let uses_pulses = matches!(p.mode, StimMode::Tpcs | StimMode::Ces);
    if uses_pulses {
        check_frequency_range(p, &mut out);
        if !(p.duty_pct >= DUTY_MIN_PCT && p.duty_pct <= DUTY_MAX_PCT) {
            out.push(Violation::new(
                "duty_pct",
                p.duty_pct,
                "duty cycle outside 10..=90 %",
            ));
        }
    }

    match p.mode {
        StimMode::Ces => {
            match (p.pattern, &p.burst) {
                (PulsePattern::Burst, None) => out.push(Violation::new(
                    "burst",
                    "missing",
                    "Burst pattern requires burst_freq_Hz and chain_count",
                )),
                (PulsePattern::Burst, Some(b)) => check_burst(p, b, &mut out),
                (_, Some(_)) => out.push(Violation::new(
                    "burst",
                    "present",
                    "burst parameters only apply to the Burst pattern",
                )),
                (_, None) => {}
            }
            if p.pattern == PulsePattern::Fm && p.fm_steps < 2 {
                out.push(Violation::new(
                    "fm_steps",
                    p.fm_steps,
                    "FM needs at least 2 steps per half-cycle",
                ));
            }
            if p.pattern == PulsePattern::Continuous && p.freq_lo_hz != p.freq_hi_hz {
                warnings.push(format!(
                    "continuous pattern runs at a single frequency; using freq_lo_Hz = {} Hz and ignoring freq_hi_Hz = {} Hz",
                    p.freq_lo_hz, p.freq_hi_hz
                ));
            }
        }
        StimMode::Met => {
            if p.pattern != PulsePattern::Continuous || p.burst.is_some() {
                warnings.push("MET uses fixed built-in pattern, frequency and duty; user values ignored".into());
            }
        }
        StimMode::Tdcs | StimMode::Tpcs | StimMode::Trns => {
            if p.burst.is_some() {
                out.push(Violation::new(
                    "burst",
                    "present",
                    format!("burst parameters only apply to CES, not {}", p.mode),
                ));
            }
        }
    }

    if !out.is_empty() {
        return Err(Violations(out));
    }

    let mut params = p.clone();
    if params.mode == StimMode::Met {
        params.freq_lo_hz = MET_FREQ_HZ;
        params.freq_hi_hz = MET_FREQ_HZ;
        params.duty_pct = MET_DUTY_PCT;
        params.pattern = PulsePattern::Continuous;
        params.burst = None;
    }
    Ok(ValidatedParams { params, warnings })
}

fn check_frequency_range(p: &StimParams, out: &mut Vec<Violation>) {
    let lo_ok = p.freq_lo_hz >= FREQ_MIN_HZ && p.freq_lo_hz <= FREQ_MAX_HZ;
    let hi_ok = p.freq_hi_hz >= FREQ_MIN_HZ && p.freq_hi_hz <= FREQ_MAX_HZ;
    if !lo_ok {
        out.push(Violation::new(
            "freq_lo_Hz",
            p.freq_lo_hz,
            "frequency outside 0.5..=1000 Hz",
        ));
    }
    if !hi_ok {
        out.push(Violation::new(
            "freq_hi_Hz",
            p.freq_hi_hz,
            "frequency outside 0.5..=1000 Hz",
        ));
    }
    if lo_ok && hi_ok && p.freq_lo_hz > p.freq_hi_hz {
        out.push(Violation::new(
            "freq_lo_Hz",
            p.freq_lo_hz,
            format!("must not exceed freq_hi_Hz = {}", p.freq_hi_hz),
        ));
    }
}

fn check_burst(p: &StimParams, b: &BurstConfig, out: &mut Vec<Violation>) {
    let fb_ok = b.burst_freq_hz >= BURST_FREQ_MIN_HZ && b.burst_freq_hz <= BURST_FREQ_MAX_HZ;
    if !fb_ok {
        out.push(Violation::new(
            "burst_freq_Hz",
            b.burst_freq_hz,
            "burst frequency outside 1..=20 Hz",
        ));
    }
    if b.chain_count < CHAIN_COUNT_MIN {
        out.push(Violation::new(
            "chain_count",
            b.chain_count,
            "pulse chain count N must be greater than 1 (legal range 2..=15)",
        ));
    } else if b.chain_count > CHAIN_COUNT_MAX {
        out.push(Violation::new(
            "chain_count",
            b.chain_count,
            "pulse chain count N above 15 (legal range 2..=15)",
        ));
    }
    if let Some(cf) = b.chain_freq_hz {
        if !(cf >= p.freq_lo_hz && cf <= p.freq_hi_hz) {
            out.push(Violation::new(
                "chain_freq_Hz",
                cf,
                format!(
                    "chain pulse rate must lie in the basic range {}..={} Hz",
                    p.freq_lo_hz, p.freq_hi_hz
                ),
            ));
        }
    }
    let lo_ok = p.freq_lo_hz >= FREQ_MIN_HZ && p.freq_lo_hz <= FREQ_MAX_HZ;
    if !fb_ok || !lo_ok {
        return;
    }
    let burst_us = period_us(b.burst_freq_hz);
    let max_basic_us = period_us(p.freq_lo_hz);
    if burst_us < 2 * max_basic_us {
        out.push(Violation::new(
            "burst_freq_Hz",
            b.burst_freq_hz,
            format!(
                "burst period {:.1} ms < 2 x {:.1} ms (must be at least twice the longest basic pulse period)",
                burst_us as f64 / 1000.0,
                max_basic_us as f64 / 1000.0
            ),
        ));
    }
    if b.chain_count >= CHAIN_COUNT_MIN && (b.chain_count as u64) * max_basic_us > burst_us {
        out.push(Violation::new(
            "chain_count",
            b.chain_count,
            format!(
                "{} pulses of {:.1} ms do not fit in one {:.1} ms burst period",
                b.chain_count,
                max_basic_us as f64 / 1000.0,
                burst_us as f64 / 1000.0
            ),
        ));
    }
}

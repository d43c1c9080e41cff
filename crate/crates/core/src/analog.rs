//! Output electronics: PWM-averaging intensity DAC, the buffered
//! common-emitter current source and the 30 V compliance budget.
//!
//! Currents are in milliamps, voltages in volts, resistances in ohms. All
//! cutoff conditions clamp at zero current. When the load would need more
//! voltage than the stage can supply, the current is hard-clamped at the
//! compliance limit and the sample is reported non-compliant.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::trace::Trace;
use crate::waveform::timebase::US_PER_S;
use crate::waveform::EventSchedule;

/// How the controller picks the intensity voltage for a commanded current.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriveMode {
    /// Solve the stage equation for the drive voltage that delivers the
    /// commanded current (clamped to the logic rail).
    #[default]
    Calibrated,
    /// Invert only the ideal transconductance: `v = v_be + i * R_E`. The
    /// saturation and Early-effect errors then show up in the output.
    OpenLoop,
}

impl fmt::Display for DriveMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DriveMode::Calibrated => "calibrated",
            DriveMode::OpenLoop => "open_loop",
        })
    }
}

impl FromStr for DriveMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "calibrated" => Ok(DriveMode::Calibrated),
            "open_loop" => Ok(DriveMode::OpenLoop),
            other => Err(format!(
                "unknown drive `{other}` (expected calibrated or open_loop)"
            )),
        }
    }
}

/// Stage constants. The transistor drops are shared by T1..T3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircuitParams {
    pub v_supply_v: f64,
    pub v_cc_v: f64,
    pub v_be_on_v: f64,
    pub v_ce_sat_v: f64,
    pub r_e_ohm: f64,
    pub v_early_v: f64,
    pub r_body_ohm: f64,
    pub drive: DriveMode,
}

impl Default for CircuitParams {
    fn default() -> Self {
        Self {
            v_supply_v: 30.0,
            v_cc_v: 5.0,
            v_be_on_v: 0.6,
            v_ce_sat_v: 0.2,
            r_e_ohm: 1000.0,
            v_early_v: 100.0,
            r_body_ohm: 10_000.0,
            drive: DriveMode::Calibrated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalogError {
    #[error("{0}")]
    Domain(String),
    #[error("invalid circuit: {0}")]
    InvalidCircuit(String),
}

impl CircuitParams {
    pub fn with_load(mut self, r_body_ohm: f64) -> Self {
        self.r_body_ohm = r_body_ohm;
        self
    }

    pub fn validate(&self) -> Result<(), AnalogError> {
        let positive = [
            ("v_supply_V", self.v_supply_v),
            ("v_cc_V", self.v_cc_v),
            ("v_be_on_V", self.v_be_on_v),
            ("v_ce_sat_V", self.v_ce_sat_v),
            ("r_e_ohm", self.r_e_ohm),
            ("v_early_V", self.v_early_v),
            ("r_body_ohm", self.r_body_ohm),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(AnalogError::InvalidCircuit(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if self.v_cc_v >= self.v_supply_v {
            return Err(AnalogError::InvalidCircuit(format!(
                "v_cc_V = {} must be below v_supply_V = {}",
                self.v_cc_v, self.v_supply_v
            )));
        }
        Ok(())
    }
}

/// Resolved output for one commanded current.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircuitOutput {
    pub i_actual_ma: f64,
    pub v_body_v: f64,
    pub compliant: bool,
    /// Compliance limit minus the body voltage the stage tried to develop.
    pub headroom_v: f64,
}

/// RC-averaged PWM level: `v_cc * duty / 100`.
pub fn pwm_to_level(duty_pct: f64, v_cc_v: f64) -> Result<f64, AnalogError> {
    if !(0.0..=100.0).contains(&duty_pct) {
        return Err(AnalogError::Domain(format!(
            "PWM duty {duty_pct} % outside 0..=100 %"
        )));
    }
    Ok(v_cc_v * duty_pct / 100.0)
}

/// Ideal voltage-to-current conversion `(V_intensity - V_BE) / R_E`.
pub fn v2i_ideal(v_intensity_v: f64, c: &CircuitParams) -> f64 {
    ((v_intensity_v - c.v_be_on_v) / c.r_e_ohm * 1000.0).max(0.0)
}

/// Voltage left for the load: `V_supply - (V_CC - V_BE(T3) - V_CE(sat)T3)`.
pub fn available_voltage(c: &CircuitParams) -> f64 {
    c.v_supply_v - (c.v_cc_v - c.v_be_on_v - c.v_ce_sat_v)
}

/// Target current reduced by the T1 saturation drop across R_E.
pub fn i_out_with_error(i_target_ma: f64, c: &CircuitParams) -> f64 {
    (i_target_ma - c.v_ce_sat_v / c.r_e_ohm * 1000.0).max(0.0)
}

/// Output current with the Early-effect factor applied to T2.
pub fn i_out_early(i_target_ma: f64, v_intensity_v: f64, c: &CircuitParams) -> f64 {
    let base = i_target_ma - c.v_ce_sat_v / c.r_e_ohm * 1000.0;
    let v_ce_t2 = (c.v_cc_v - c.v_be_on_v) - (v_intensity_v - c.v_be_on_v);
    (base * (1.0 + v_ce_t2 / c.v_early_v)).max(0.0)
}

/// Highest body voltage the stage can develop. Never reaches the rail: at
/// least one saturation drop always remains across the output transistor.
pub fn compliance_limit_v(c: &CircuitParams) -> f64 {
    available_voltage(c).min(c.v_supply_v - c.v_ce_sat_v)
}

/// Intensity voltage and the matching ideal target current for a commanded
/// current, per the configured drive mode.
pub fn drive_point(i_commanded_ma: f64, c: &CircuitParams) -> (f64, f64) {
    let i = i_commanded_ma.max(0.0);
    match c.drive {
        DriveMode::OpenLoop => {
            let v = c.v_be_on_v + i / 1000.0 * c.r_e_ohm;
            if v > c.v_cc_v {
                (c.v_cc_v, v2i_ideal(c.v_cc_v, c))
            } else {
                (v, i)
            }
        }
        DriveMode::Calibrated => {
            if i == 0.0 {
                return (0.0, 0.0);
            }
            // With u = (v - v_be - v_ce)/R_E the output is
            // i = u (K - u R_E) / V_A, K = V_A + V_CC - V_BE - V_CE.
            let re = c.r_e_ohm;
            let k = c.v_early_v + c.v_cc_v - c.v_be_on_v - c.v_ce_sat_v;
            let disc = k * k - 4.0 * re * c.v_early_v * (i / 1000.0);
            let u = if disc >= 0.0 {
                (k - disc.sqrt()) / (2.0 * re)
            } else {
                k / (2.0 * re)
            };
            let v = (c.v_be_on_v + c.v_ce_sat_v + u * re).min(c.v_cc_v);
            (v, v2i_ideal(v, c))
        }
    }
}

/// Commanded current -> delivered current and body voltage on `r_body`.
pub fn resolve_output(i_commanded_ma: f64, c: &CircuitParams) -> CircuitOutput {
    let (v_intensity, i_target) = drive_point(i_commanded_ma, c);
    let i_stage = if i_target > 0.0 {
        i_out_early(i_target, v_intensity, c)
    } else {
        0.0
    };
    let limit = compliance_limit_v(c);
    let v_wanted = i_stage * c.r_body_ohm / 1000.0;
    let headroom_v = limit - v_wanted;
    let i_actual_ma = if headroom_v >= 0.0 {
        i_stage
    } else {
        limit / c.r_body_ohm * 1000.0
    };
    CircuitOutput {
        i_actual_ma,
        v_body_v: i_actual_ma * c.r_body_ohm / 1000.0,
        compliant: headroom_v >= 0.0,
        headroom_v,
    }
}

/// Minimum sample rate accepted for rendering a schedule.
pub fn min_sample_rate_hz(schedule: &EventSchedule) -> f64 {
    if schedule.params.mode.is_pulsed() {
        2.0 * schedule.params.freq_hi_hz
    } else {
        0.0
    }
}

/// Renders a schedule through the stage model at `sample_rate_hz`.
///
/// Sample `k` sits at `k / sample_rate_hz` and reads the event covering that
/// instant; the delivered current keeps the commanded polarity.
pub fn simulate_schedule(
    schedule: &EventSchedule,
    c: &CircuitParams,
    sample_rate_hz: f64,
) -> Result<Trace, AnalogError> {
    c.validate()?;
    let min = min_sample_rate_hz(schedule);
    if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) || sample_rate_hz < min {
        return Err(AnalogError::Domain(format!(
            "sample rate {sample_rate_hz} Hz is below the {min} Hz needed for this schedule"
        )));
    }
    let n = (schedule.total_duration_us as f64 * sample_rate_hz / US_PER_S).ceil() as usize;
    let mut commanded = Vec::with_capacity(n);
    let mut cursor = 0usize;
    let events = &schedule.events;
    for k in 0..n {
        let t_us = k as f64 * US_PER_S / sample_rate_hz;
        while cursor < events.len() && (events[cursor].end_us() as f64) <= t_us {
            cursor += 1;
        }
        let value = match events.get(cursor) {
            Some(e) if e.t_start_us as f64 <= t_us => e.signed_ma(),
            _ => 0.0,
        };
        commanded.push(value);
    }

    let mut meta = schedule.meta.clone();
    meta.insert("drive".into(), c.drive.to_string());
    meta.insert("r_body_ohm".into(), c.r_body_ohm.to_string());
    let mut trace = Trace::from_commanded(sample_rate_hz, commanded, meta);
    resolve_trace(&mut trace, c);
    Ok(trace)
}

/// Fills the actual-current, body-voltage and compliance channels of a
/// trace from its commanded channel.
pub fn resolve_trace(trace: &mut Trace, c: &CircuitParams) {
    let mut cache: HashMap<u64, CircuitOutput> = HashMap::new();
    let n = trace.commanded_ma.len();
    trace.actual_ma.resize(n, 0.0);
    trace.v_body_v.resize(n, 0.0);
    trace.compliant.resize(n, true);
    for i in 0..n {
        let cmd = trace.commanded_ma[i];
        let magnitude = cmd.abs();
        let out = *cache
            .entry(magnitude.to_bits())
            .or_insert_with(|| resolve_output(magnitude, c));
        let sign = if cmd < 0.0 { -1.0 } else { 1.0 };
        trace.actual_ma[i] = sign * out.i_actual_ma;
        trace.v_body_v[i] = sign * out.v_body_v;
        trace.compliant[i] = out.compliant;
        // bounded for continuous-valued channels such as noise
        if cache.len() > 4096 {
            cache.clear();
        }
    }
}

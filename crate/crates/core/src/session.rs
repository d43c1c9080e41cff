//! Session lifecycle driven by caller-supplied ticks.
//!
//! A session is created `Armed` with its schedule pre-generated, started
//! into `WarmUp`, and then advanced by [`Session::tick`]. Phase changes are
//! purely time-driven. Every frame carries two views of the output:
//!
//! * the *displayed* current, which is what the non-SHAM prescription would
//!   deliver and is the only value the blinded channel exposes;
//! * the *actual* current, resolved through the output-stage model.
//!
//! Aborting never cuts the output. The level ramps to zero at
//! [`ABORT_RAMP_MA_PER_MIN`] before the session reports `Aborted`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::analog::{resolve_output, AnalogError, CircuitParams};
use crate::waveform::timebase::US_PER_S;
use crate::waveform::{
    generate, is_legal_intensity, trns_unit_noise, validate_params, EventSchedule, StimMode,
    StimParams, Timing, ValidatedParams, Violations, WaveformError,
};

pub const ABORT_RAMP_MA_PER_MIN: f64 = 4.0;
/// Sample rate of the pre-generated noise used by tRNS sessions.
pub const SESSION_NOISE_RATE_HZ: f64 = 2000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SessionState {
    Idle,
    Armed,
    WarmUp,
    Dose,
    CoolDown,
    Done,
    Aborted,
}

impl SessionState {
    /// Output stage may be delivering current.
    pub fn is_running(self) -> bool {
        matches!(self, SessionState::WarmUp | SessionState::Dose | SessionState::CoolDown)
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, SessionState::Done | SessionState::Aborted)
    }
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Full (unblinded) telemetry for one tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    pub t_ms: u64,
    pub state: SessionState,
    #[serde(rename = "displayed_mA")]
    pub displayed_ma: f64,
    #[serde(rename = "actual_mA")]
    pub actual_ma: f64,
    #[serde(rename = "v_body_V")]
    pub v_body_v: f64,
    pub compliant: bool,
    /// Compliance of the displayed current; what the blinded channel shows.
    pub displayed_compliant: bool,
}

/// The part of a frame that may be shown without unblinding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlindedFrame {
    pub t_ms: u64,
    pub state: SessionState,
    #[serde(rename = "displayed_mA")]
    pub displayed_ma: f64,
    pub compliant: bool,
}

impl TelemetryFrame {
    pub fn blinded(&self) -> BlindedFrame {
        BlindedFrame {
            t_ms: self.t_ms,
            state: self.state,
            displayed_ma: self.displayed_ma,
            compliant: self.displayed_compliant,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SessionError {
    #[error("invalid prescription: {0}")]
    Invalid(Violations),
    #[error(transparent)]
    Circuit(#[from] AnalogError),
    #[error(transparent)]
    Waveform(#[from] WaveformError),
    #[error("cannot {op} a session in state {state}")]
    State { op: &'static str, state: SessionState },
    #[error("rejected: {0}")]
    Rejected(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbortAck {
    pub from_ma: f64,
    pub ramp_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityAck {
    pub from_ma: f64,
    pub to_ma: f64,
    pub ramp_ms: u64,
}

#[derive(Debug, Clone)]
enum Output {
    Events {
        actual: EventSchedule,
        display: EventSchedule,
    },
    Noise {
        unit: Vec<f64>,
        sample_rate_hz: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Plan {
    Programmed,
    Adjusted { t0_us: u64, from_ma: f64, to_ma: f64 },
    Aborting { t0_us: u64, from_ma: f64, zero_actual: bool },
}

#[derive(Debug, Clone)]
pub struct Session {
    params: ValidatedParams,
    circuit: CircuitParams,
    timing: Timing,
    output: Output,
    started: bool,
    idle: bool,
    clock_us: u64,
    plan: Plan,
    last_commanded_ma: f64,
}

fn quantize_up(level_ma: f64) -> f64 {
    ((level_ma * 10.0 - 1e-9).ceil().max(0.0)) / 10.0
}

impl Session {
    /// Validates, pre-generates the schedule and returns an `Armed` session.
    pub fn create(params: StimParams, circuit: CircuitParams) -> Result<Self, SessionError> {
        let vp = validate_params(&params).map_err(SessionError::Invalid)?;
        circuit.validate()?;
        let output = match vp.mode {
            StimMode::Trns => Output::Noise {
                unit: trns_unit_noise(&vp, SESSION_NOISE_RATE_HZ)?,
                sample_rate_hz: SESSION_NOISE_RATE_HZ,
            },
            _ => {
                let actual = generate(&vp)?;
                let display = if vp.sham {
                    let mut open = vp.params().clone();
                    open.sham = false;
                    generate(&validate_params(&open).map_err(SessionError::Invalid)?)?
                } else {
                    actual.clone()
                };
                Output::Events { actual, display }
            }
        };
        Ok(Self {
            timing: vp.timing(),
            params: vp,
            circuit,
            output,
            started: false,
            idle: false,
            clock_us: 0,
            plan: Plan::Programmed,
            last_commanded_ma: 0.0,
        })
    }

    pub fn params(&self) -> &ValidatedParams {
        &self.params
    }

    pub fn circuit(&self) -> &CircuitParams {
        &self.circuit
    }

    pub fn timing(&self) -> Timing {
        self.timing
    }

    /// Pre-generated schedule actually delivered (None for tRNS).
    pub fn schedule(&self) -> Option<&EventSchedule> {
        match &self.output {
            Output::Events { actual, .. } => Some(actual),
            Output::Noise { .. } => None,
        }
    }

    pub fn elapsed_ms(&self) -> u64 {
        self.clock_us / 1000
    }

    /// Signed commanded current at the last emitted frame.
    pub fn last_commanded_ma(&self) -> f64 {
        self.last_commanded_ma
    }

    pub fn state(&self) -> SessionState {
        if self.idle {
            return SessionState::Idle;
        }
        if !self.started {
            return if matches!(self.plan, Plan::Aborting { .. }) {
                SessionState::Aborted
            } else {
                SessionState::Armed
            };
        }
        self.state_at(self.clock_us)
    }

    fn ramp_rate_per_us(&self) -> f64 {
        self.params.ramp_rate_ma_per_min / 60.0 / US_PER_S
    }

    fn abort_rate_per_us() -> f64 {
        ABORT_RAMP_MA_PER_MIN / 60.0 / US_PER_S
    }

    fn dose_end_us(&self) -> u64 {
        self.timing.dose_end_us()
    }

    /// Level of an adjusted plan at `t_us` (continuous, display side).
    fn adjusted_level(&self, t_us: u64, t0_us: u64, from: f64, to: f64) -> f64 {
        let rate = self.ramp_rate_per_us();
        let plateau_at = |t: u64| {
            let dt = t.saturating_sub(t0_us) as f64;
            if to >= from {
                (from + rate * dt).min(to)
            } else {
                (from - rate * dt).max(to)
            }
        };
        let dose_end = self.dose_end_us();
        if t_us < dose_end {
            plateau_at(t_us)
        } else {
            let start = plateau_at(dose_end);
            (start - rate * (t_us - dose_end) as f64).max(0.0)
        }
    }

    fn adjusted_end_us(&self, t0_us: u64, from: f64, to: f64) -> u64 {
        let start = self.adjusted_level(self.dose_end_us(), t0_us, from, to);
        self.dose_end_us() + (start / self.ramp_rate_per_us()).ceil() as u64
    }

    fn abort_end_us(t0_us: u64, from: f64) -> u64 {
        t0_us + (from / Self::abort_rate_per_us()).ceil() as u64
    }

    fn state_at(&self, t_us: u64) -> SessionState {
        match self.plan {
            Plan::Programmed => {
                if t_us < self.timing.warmup_us {
                    SessionState::WarmUp
                } else if t_us < self.dose_end_us() {
                    SessionState::Dose
                } else if t_us < self.timing.total_us() {
                    SessionState::CoolDown
                } else {
                    SessionState::Done
                }
            }
            Plan::Adjusted { t0_us, from_ma, to_ma } => {
                if t_us < self.dose_end_us() {
                    SessionState::Dose
                } else if t_us < self.adjusted_end_us(t0_us, from_ma, to_ma) {
                    SessionState::CoolDown
                } else {
                    SessionState::Done
                }
            }
            Plan::Aborting { t0_us, from_ma, .. } => {
                if t_us < Self::abort_end_us(t0_us, from_ma) {
                    SessionState::CoolDown
                } else {
                    SessionState::Aborted
                }
            }
        }
    }

    /// Continuous display-side level at `t_us`.
    fn display_level(&self, t_us: u64) -> f64 {
        match self.plan {
            Plan::Programmed => {
                crate::waveform::EnvelopeKind::Continuous.level_ma(&self.timing, t_us, false)
            }
            Plan::Adjusted { t0_us, from_ma, to_ma } => {
                self.adjusted_level(t_us, t0_us, from_ma, to_ma)
            }
            Plan::Aborting { t0_us, from_ma, .. } => {
                (from_ma - Self::abort_rate_per_us() * t_us.saturating_sub(t0_us) as f64).max(0.0)
            }
        }
    }

    fn noise_at(unit: &[f64], sample_rate_hz: f64, t_us: u64) -> f64 {
        let k = (t_us as f64 * sample_rate_hz / US_PER_S) as usize;
        unit.get(k).copied().unwrap_or(0.0)
    }

    /// (display, actual) signed commanded currents at `t_us`.
    fn commanded_at(&self, t_us: u64) -> (f64, f64) {
        let state = self.state_at(t_us);
        if state.is_terminal() {
            return (0.0, 0.0);
        }
        let (display, actual_programmed) = match (&self.output, self.plan) {
            (Output::Events { actual, display }, Plan::Programmed) => {
                (display.commanded_at(t_us), Some(actual.commanded_at(t_us)))
            }
            (Output::Noise { unit, sample_rate_hz }, Plan::Programmed) => {
                let u = Self::noise_at(unit, *sample_rate_hz, t_us);
                let d = u * self.display_level(t_us);
                let a = u
                    * crate::waveform::EnvelopeKind::Continuous.level_ma(
                        &self.timing,
                        t_us,
                        self.params.sham,
                    );
                (d, Some(a))
            }
            (Output::Events { display, .. }, _) => {
                let shape = display
                    .event_at(t_us)
                    .map(|i| display.events[i].polarity.sign())
                    .unwrap_or(0.0);
                (shape * quantize_up(self.display_level(t_us)), None)
            }
            (Output::Noise { unit, sample_rate_hz }, _) => (
                Self::noise_at(unit, *sample_rate_hz, t_us) * self.display_level(t_us),
                None,
            ),
        };
        let actual = actual_programmed.unwrap_or_else(|| {
            let silent = match self.plan {
                Plan::Aborting { zero_actual, .. } => zero_actual,
                _ => self.params.sham && state == SessionState::Dose,
            };
            if silent {
                0.0
            } else {
                display
            }
        });
        (display, actual)
    }

    fn frame_at(&mut self, t_us: u64) -> TelemetryFrame {
        let live = self.started && !self.idle;
        let state = if live { self.state_at(t_us) } else { self.state() };
        let (display, actual) = if live { self.commanded_at(t_us) } else { (0.0, 0.0) };
        self.last_commanded_ma = actual;
        let out = resolve_output(actual.abs(), &self.circuit);
        let shown = resolve_output(display.abs(), &self.circuit);
        let sign = if actual < 0.0 { -1.0 } else { 1.0 };
        TelemetryFrame {
            t_ms: t_us / 1000,
            state,
            displayed_ma: display.abs(),
            actual_ma: sign * out.i_actual_ma,
            v_body_v: sign * out.v_body_v,
            compliant: out.compliant,
            displayed_compliant: shown.compliant,
        }
    }

    /// Frame for the current clock without advancing it.
    pub fn current_frame(&mut self) -> TelemetryFrame {
        self.frame_at(self.clock_us)
    }

    /// `Armed -> WarmUp`.
    pub fn start(&mut self) -> Result<(), SessionError> {
        let state = self.state();
        if state != SessionState::Armed {
            return Err(SessionError::State { op: "start", state });
        }
        self.started = true;
        Ok(())
    }

    /// Advances the clock by `dt_ms` and reports the output at the new time.
    pub fn tick(&mut self, dt_ms: u64) -> Result<TelemetryFrame, SessionError> {
        let state = self.state();
        match state {
            SessionState::Idle | SessionState::Done | SessionState::Aborted => {
                Err(SessionError::State { op: "tick", state })
            }
            SessionState::Armed => Ok(self.current_frame()),
            _ => {
                self.clock_us += dt_ms * 1000;
                Ok(self.current_frame())
            }
        }
    }

    /// Starts the accelerated ramp-down; `Armed` sessions abort at once.
    pub fn abort(&mut self) -> Result<AbortAck, SessionError> {
        let state = self.state();
        match state {
            SessionState::Armed => {
                self.plan = Plan::Aborting {
                    t0_us: 0,
                    from_ma: 0.0,
                    zero_actual: true,
                };
                Ok(AbortAck { from_ma: 0.0, ramp_ms: 0 })
            }
            s if s.is_running() => {
                let now = self.clock_us;
                if let Plan::Aborting { t0_us, from_ma, .. } = self.plan {
                    let remaining = Self::abort_end_us(t0_us, from_ma).saturating_sub(now);
                    return Ok(AbortAck {
                        from_ma: self.display_level(now),
                        ramp_ms: remaining.div_ceil(1000),
                    });
                }
                let from_ma = self.display_level(now);
                self.plan = Plan::Aborting {
                    t0_us: now,
                    from_ma,
                    zero_actual: self.params.sham && state == SessionState::Dose,
                };
                let end = Self::abort_end_us(now, from_ma);
                Ok(AbortAck {
                    from_ma,
                    ramp_ms: (end - now).div_ceil(1000),
                })
            }
            _ => Err(SessionError::State { op: "abort", state }),
        }
    }

    /// Retargets the plateau during `Dose` via a ramp at the prescription's
    /// ramp rate. The dose end time does not move.
    pub fn set_intensity(&mut self, new_ma: f64) -> Result<IntensityAck, SessionError> {
        let state = self.state();
        if state != SessionState::Dose {
            return Err(SessionError::State {
                op: "set intensity on",
                state,
            });
        }
        if !is_legal_intensity(new_ma) {
            return Err(SessionError::Rejected(format!(
                "intensity {new_ma} mA outside 0.1..=4.0 mA in 0.1 mA steps"
            )));
        }
        let new_ma = quantize_up(new_ma);
        let target = match self.plan {
            Plan::Adjusted { to_ma, .. } => to_ma,
            _ => self.params.quantized_intensity_ma(),
        };
        let now = self.clock_us;
        let from_ma = self.display_level(now);
        if (new_ma - target).abs() < 1e-9 {
            return Ok(IntensityAck {
                from_ma,
                to_ma: new_ma,
                ramp_ms: 0,
            });
        }
        self.plan = Plan::Adjusted {
            t0_us: now,
            from_ma,
            to_ma: new_ma,
        };
        let ramp_us = ((new_ma - from_ma).abs() / self.ramp_rate_per_us()).ceil() as u64;
        Ok(IntensityAck {
            from_ma,
            to_ma: new_ma,
            ramp_ms: ramp_us.div_ceil(1000),
        })
    }

    /// `Done | Aborted -> Idle`.
    pub fn reset(&mut self) -> Result<(), SessionError> {
        let state = self.state();
        if !state.is_terminal() {
            return Err(SessionError::State { op: "reset", state });
        }
        self.idle = true;
        Ok(())
    }

    /// `Idle -> Armed` with a new prescription.
    pub fn configure(&mut self, params: StimParams, circuit: CircuitParams) -> Result<(), SessionError> {
        let state = self.state();
        if state != SessionState::Idle {
            return Err(SessionError::State { op: "configure", state });
        }
        *self = Session::create(params, circuit)?;
        Ok(())
    }
}

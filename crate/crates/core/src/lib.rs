//! Software model of a digital transcranial electrical stimulator.
//!
//! * [`waveform`] turns a prescription into a deterministic event schedule
//!   (or, for tRNS, a sampled noise trace).
//! * [`analog`] resolves commanded current through the output stage.
//! * [`session`] runs the tick-driven session state machine.
//! * [`analysis`] measures rendered traces independently of the generator.
//! * [`config`] and [`trace`] cover the text and CSV interchange formats.

pub mod analog;
pub mod analysis;
pub mod config;
pub mod pipeline;
pub mod session;
pub mod trace;
pub mod waveform;

pub use analog::{resolve_output, CircuitOutput, CircuitParams, DriveMode};
pub use config::{parse_session_config, SessionConfig};
pub use pipeline::render;
pub use session::{BlindedFrame, Session, SessionError, SessionState, TelemetryFrame};
pub use trace::{read_trace_csv, write_trace_csv, Trace};
pub use waveform::{
    validate_params, EventSchedule, OutputEvent, Polarity, PulsePattern, StimMode, StimParams,
    ValidatedParams,
};

//! Wire shapes. Field names here are the protocol; the contract tests pin them.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use serde_json::json;

use tesim_core::analog::{CircuitParams, DriveMode};
use tesim_core::session::{AbortAck, BlindedFrame, IntensityAck, SessionState, TelemetryFrame};
use tesim_core::waveform::{PulsePattern, StimMode, ValidatedParams, Violation};

#[derive(Debug, Deserialize)]
pub struct CreateRequest {
    pub config: String,
}

#[derive(Debug, Deserialize)]
pub struct IntensityRequest {
    #[serde(rename = "intensity_mA")]
    pub intensity_ma: f64,
}

/// Prescription echo without the sham flag.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ParamsEcho {
    pub mode: StimMode,
    #[serde(rename = "intensity_mA")]
    pub intensity_ma: f64,
    #[serde(rename = "ramp_rate_mA_per_min")]
    pub ramp_rate_ma_per_min: f64,
    pub dose_s: f64,
    #[serde(rename = "freq_lo_Hz")]
    pub freq_lo_hz: f64,
    #[serde(rename = "freq_hi_Hz")]
    pub freq_hi_hz: f64,
    pub duty_pct: f64,
    pub pattern: PulsePattern,
    #[serde(rename = "burst_freq_Hz", skip_serializing_if = "Option::is_none")]
    pub burst_freq_hz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chain_count: Option<u32>,
    #[serde(rename = "chain_freq_Hz", skip_serializing_if = "Option::is_none")]
    pub chain_freq_hz: Option<f64>,
    pub fm_steps: u32,
    pub seed: u64,
}

impl From<&ValidatedParams> for ParamsEcho {
    fn from(p: &ValidatedParams) -> Self {
        Self {
            mode: p.mode,
            intensity_ma: p.intensity_ma,
            ramp_rate_ma_per_min: p.ramp_rate_ma_per_min,
            dose_s: p.dose_s,
            freq_lo_hz: p.freq_lo_hz,
            freq_hi_hz: p.freq_hi_hz,
            duty_pct: p.duty_pct,
            pattern: p.pattern,
            burst_freq_hz: p.burst.map(|b| b.burst_freq_hz),
            chain_count: p.burst.map(|b| b.chain_count),
            chain_freq_hz: p.burst.and_then(|b| b.chain_freq_hz),
            fm_steps: p.fm_steps,
            seed: p.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CircuitEcho {
    #[serde(rename = "v_supply_V")]
    pub v_supply_v: f64,
    #[serde(rename = "v_cc_V")]
    pub v_cc_v: f64,
    #[serde(rename = "v_be_on_V")]
    pub v_be_on_v: f64,
    #[serde(rename = "v_ce_sat_V")]
    pub v_ce_sat_v: f64,
    pub r_e_ohm: f64,
    #[serde(rename = "v_early_V")]
    pub v_early_v: f64,
    pub r_body_ohm: f64,
    pub drive: DriveMode,
}

impl From<&CircuitParams> for CircuitEcho {
    fn from(c: &CircuitParams) -> Self {
        Self {
            v_supply_v: c.v_supply_v,
            v_cc_v: c.v_cc_v,
            v_be_on_v: c.v_be_on_v,
            v_ce_sat_v: c.v_ce_sat_v,
            r_e_ohm: c.r_e_ohm,
            v_early_v: c.v_early_v,
            r_body_ohm: c.r_body_ohm,
            drive: c.drive,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SessionResource {
    pub id: String,
    pub state: SessionState,
    pub created_at: String,
    pub elapsed_ms: u64,
    pub params: ParamsEcho,
    pub circuit: CircuitEcho,
    pub warnings: Vec<String>,
    /// Present only for requests carrying the unblind token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sham: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_path: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct AbortResponse {
    pub session: SessionResource,
    #[serde(rename = "from_mA")]
    pub from_ma: f64,
    pub ramp_ms: u64,
}

impl AbortResponse {
    pub fn new(session: SessionResource, ack: AbortAck) -> Self {
        Self {
            session,
            from_ma: ack.from_ma,
            ramp_ms: ack.ramp_ms,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct IntensityResponse {
    pub session: SessionResource,
    #[serde(rename = "from_mA")]
    pub from_ma: f64,
    #[serde(rename = "to_mA")]
    pub to_ma: f64,
    pub ramp_ms: u64,
}

impl IntensityResponse {
    pub fn new(session: SessionResource, ack: IntensityAck) -> Self {
        Self {
            session,
            from_ma: ack.from_ma,
            to_ma: ack.to_ma,
            ramp_ms: ack.ramp_ms,
        }
    }
}

/// One NDJSON line on the blinded channel.
#[derive(Debug, Serialize)]
pub struct BlindedRecord {
    #[serde(flatten)]
    pub frame: BlindedFrame,
    /// Frames this subscriber missed because it fell behind.
    pub dropped: u64,
}

/// One NDJSON line on the unblinded channel.
#[derive(Debug, Serialize)]
pub struct UnblindedRecord {
    #[serde(flatten)]
    pub frame: TelemetryFrame,
    pub sham: bool,
    pub dropped: u64,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub kind: &'static str,
    pub message: String,
    pub violations: Option<Vec<Violation>>,
}

impl ApiError {
    pub fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            kind,
            message: message.into(),
            violations: None,
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("no session `{id}`"))
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", message)
    }

    pub fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.kind, "message": self.message });
        if let Some(v) = self.violations {
            body["violations"] = json!(v);
        }
        (self.status, Json(body)).into_response()
    }
}

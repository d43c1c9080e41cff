//! Session config text format.
//!
//! ```text
//! # 20 min of 2 mA tDCS
//! [stim]
//! mode = tdcs
//! intensity_mA = 2.0
//! dose_s = 1200
//!
//! [circuit]
//! r_body_ohm = 10000
//! ```
//!
//! Keys are case-sensitive and every unknown or repeated key is an error.
//! Omitted optional keys take the defaults of [`StimParams::new`] and
//! [`CircuitParams::default`]. Range checks are left to
//! [`crate::waveform::validate_params`].

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::analog::{CircuitParams, DriveMode};
use crate::waveform::{BurstConfig, PulsePattern, StimMode, StimParams};

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub stim: StimParams,
    pub circuit: CircuitParams,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ConfigError {
    /// 1-based; 0 when the problem is not tied to one line.
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Stim,
    Circuit,
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Section::Stim => "stim",
            Section::Circuit => "circuit",
        })
    }
}

const STIM_KEYS: &[&str] = &[
    "mode",
    "intensity_mA",
    "ramp_rate_mA_per_min",
    "dose_s",
    "freq_lo_Hz",
    "freq_hi_Hz",
    "duty_pct",
    "pattern",
    "burst_freq_Hz",
    "chain_count",
    "chain_freq_Hz",
    "fm_steps",
    "sham",
    "seed",
];

const CIRCUIT_KEYS: &[&str] = &[
    "v_supply_V",
    "v_cc_V",
    "v_be_on_V",
    "v_ce_sat_V",
    "r_e_ohm",
    "v_early_V",
    "r_body_ohm",
    "drive",
];

const REQUIRED: &[&str] = &["mode", "intensity_mA", "dose_s"];

struct Entry {
    section: Section,
    key: String,
    value: String,
    line: usize,
}

fn value<T: FromStr>(e: &Entry) -> Result<T, ConfigError> {
    e.value.parse().map_err(|_| {
        err(
            e.line,
            format!("cannot parse `{}` as the value of {}", e.value, e.key),
        )
    })
}

fn parse_bool(e: &Entry) -> Result<bool, ConfigError> {
    match e.value.as_str() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(err(
            e.line,
            format!("{} must be true or false, got `{other}`", e.key),
        )),
    }
}

fn scan(text: &str) -> Result<Vec<Entry>, ConfigError> {
    let mut entries: Vec<Entry> = Vec::new();
    let mut section = None;
    let mut seen_sections = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let s = match name.trim() {
                "stim" => Section::Stim,
                "circuit" => Section::Circuit,
                other => return Err(err(line, format!("unknown section [{other}]"))),
            };
            if seen_sections.contains(&s) {
                return Err(err(line, format!("section [{s}] appears twice")));
            }
            seen_sections.push(s);
            section = Some(s);
            continue;
        }
        let (key, val) = content
            .split_once('=')
            .ok_or_else(|| err(line, format!("expected `key = value`, found `{content}`")))?;
        let (key, val) = (key.trim(), val.trim());
        let section =
            section.ok_or_else(|| err(line, format!("key `{key}` appears before any section")))?;
        let known = match section {
            Section::Stim => STIM_KEYS,
            Section::Circuit => CIRCUIT_KEYS,
        };
        if !known.contains(&key) {
            return Err(err(line, format!("unknown key `{key}` in [{section}]")));
        }
        if let Some(prev) = entries.iter().find(|e| e.key == key) {
            return Err(err(
                line,
                format!("duplicate key `{key}` (first set on line {})", prev.line),
            ));
        }
        if val.is_empty() {
            return Err(err(line, format!("key `{key}` has no value")));
        }
        entries.push(Entry {
            section,
            key: key.to_string(),
            value: val.to_string(),
            line,
        });
    }
    Ok(entries)
}

/// Parses a session config document.
pub fn parse_session_config(text: &str) -> Result<SessionConfig, ConfigError> {
    let entries = scan(text)?;
    let get = |k: &str| entries.iter().find(|e| e.key == k);

    let stim_line = entries
        .iter()
        .find(|e| e.section == Section::Stim)
        .map_or(0, |e| e.line);
    for key in REQUIRED {
        if get(key).is_none() {
            return Err(err(stim_line, format!("missing required key `{key}` in [stim]")));
        }
    }

    let mode_entry = get("mode").expect("checked above");
    let mode = StimMode::from_str(&mode_entry.value).map_err(|m| err(mode_entry.line, m))?;
    let mut stim = StimParams::new(
        mode,
        value(get("intensity_mA").expect("checked above"))?,
        value(get("dose_s").expect("checked above"))?,
    );

    for e in entries.iter().filter(|e| e.section == Section::Stim) {
        match e.key.as_str() {
            "ramp_rate_mA_per_min" => stim.ramp_rate_ma_per_min = value(e)?,
            "freq_lo_Hz" => stim.freq_lo_hz = value(e)?,
            "freq_hi_Hz" => stim.freq_hi_hz = value(e)?,
            "duty_pct" => stim.duty_pct = value(e)?,
            "pattern" => {
                stim.pattern = PulsePattern::from_str(&e.value).map_err(|m| err(e.line, m))?
            }
            "fm_steps" => stim.fm_steps = value(e)?,
            "sham" => stim.sham = parse_bool(e)?,
            "seed" => stim.seed = value(e)?,
            _ => {}
        }
    }

    let burst_keys = ["burst_freq_Hz", "chain_count", "chain_freq_Hz"];
    if let Some(first) = burst_keys.iter().filter_map(|k| get(k)).min_by_key(|e| e.line) {
        let (Some(f), Some(n)) = (get("burst_freq_Hz"), get("chain_count")) else {
            return Err(err(
                first.line,
                "a burst needs both burst_freq_Hz and chain_count",
            ));
        };
        stim.burst = Some(BurstConfig {
            burst_freq_hz: value(f)?,
            chain_count: value(n)?,
            chain_freq_hz: get("chain_freq_Hz").map(value).transpose()?,
        });
    }

    let mut circuit = CircuitParams::default();
    for e in entries.iter().filter(|e| e.section == Section::Circuit) {
        match e.key.as_str() {
            "v_supply_V" => circuit.v_supply_v = value(e)?,
            "v_cc_V" => circuit.v_cc_v = value(e)?,
            "v_be_on_V" => circuit.v_be_on_v = value(e)?,
            "v_ce_sat_V" => circuit.v_ce_sat_v = value(e)?,
            "r_e_ohm" => circuit.r_e_ohm = value(e)?,
            "v_early_V" => circuit.v_early_v = value(e)?,
            "r_body_ohm" => circuit.r_body_ohm = value(e)?,
            "drive" => circuit.drive = DriveMode::from_str(&e.value).map_err(|m| err(e.line, m))?,
            _ => {}
        }
    }

    Ok(SessionConfig { stim, circuit })
}

impl SessionConfig {
    pub fn new(stim: StimParams, circuit: CircuitParams) -> Self {
        Self { stim, circuit }
    }

    /// Writes every key explicitly; parsing the result gives back `self`.
    pub fn to_text(&self) -> String {
        let s = &self.stim;
        let c = &self.circuit;
        let mut out = String::from("[stim]\n");
        let mut kv = |k: &str, v: &dyn fmt::Display| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("mode", &s.mode);
        kv("intensity_mA", &s.intensity_ma);
        kv("ramp_rate_mA_per_min", &s.ramp_rate_ma_per_min);
        kv("dose_s", &s.dose_s);
        kv("freq_lo_Hz", &s.freq_lo_hz);
        kv("freq_hi_Hz", &s.freq_hi_hz);
        kv("duty_pct", &s.duty_pct);
        kv("pattern", &s.pattern);
        if let Some(b) = &s.burst {
            kv("burst_freq_Hz", &b.burst_freq_hz);
            kv("chain_count", &b.chain_count);
            if let Some(cf) = b.chain_freq_hz {
                kv("chain_freq_Hz", &cf);
            }
        }
        kv("fm_steps", &s.fm_steps);
        kv("sham", &s.sham);
        kv("seed", &s.seed);
        out.push_str("\n[circuit]\n");
        let mut kv = |k: &str, v: &dyn fmt::Display| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("v_supply_V", &c.v_supply_v);
        kv("v_cc_V", &c.v_cc_v);
        kv("v_be_on_V", &c.v_be_on_v);
        kv("v_ce_sat_V", &c.v_ce_sat_v);
        kv("r_e_ohm", &c.r_e_ohm);
        kv("v_early_V", &c.v_early_v);
        kv("r_body_ohm", &c.r_body_ohm);
        kv("drive", &c.drive);
        out
    }
}

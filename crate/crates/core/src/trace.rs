//! Uniformly sampled current/voltage record and its CSV interchange format.
//!
//! ```text
//! # sample_rate_Hz=20000
//! # mode=ces
//! t_s,commanded_mA,actual_mA,v_body_V,compliant
//! 0,1,1,10,1
//! ```
//!
//! Metadata lines come first as `# key=value`. Floats are written with the
//! shortest representation that parses back to the same value, so a
//! write/read round trip is exact.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

pub const CSV_HEADER: &str = "t_s,commanded_mA,actual_mA,v_body_V,compliant";
const SAMPLE_RATE_KEY: &str = "sample_rate_Hz";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Commanded,
    Actual,
    BodyVoltage,
}

impl std::str::FromStr for Channel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "commanded" | "commanded_mA" => Ok(Channel::Commanded),
            "actual" | "actual_mA" => Ok(Channel::Actual),
            "v_body" | "v_body_V" => Ok(Channel::BodyVoltage),
            other => Err(format!("unknown channel `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub sample_rate_hz: f64,
    pub commanded_ma: Vec<f64>,
    pub actual_ma: Vec<f64>,
    pub v_body_v: Vec<f64>,
    pub compliant: Vec<bool>,
    pub meta: BTreeMap<String, String>,
}

impl Trace {
    pub fn empty(sample_rate_hz: f64) -> Self {
        Self {
            sample_rate_hz,
            commanded_ma: Vec::new(),
            actual_ma: Vec::new(),
            v_body_v: Vec::new(),
            compliant: Vec::new(),
            meta: BTreeMap::new(),
        }
    }

    /// A trace whose output stage has not been resolved yet: actual equals
    /// commanded, body voltage is zero and every sample is compliant.
    pub fn from_commanded(
        sample_rate_hz: f64,
        commanded_ma: Vec<f64>,
        meta: BTreeMap<String, String>,
    ) -> Self {
        let n = commanded_ma.len();
        Self {
            sample_rate_hz,
            actual_ma: commanded_ma.clone(),
            commanded_ma,
            v_body_v: vec![0.0; n],
            compliant: vec![true; n],
            meta,
        }
    }

    pub fn len(&self) -> usize {
        self.commanded_ma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.commanded_ma.is_empty()
    }

    pub fn is_consistent(&self) -> bool {
        let n = self.len();
        self.sample_rate_hz > 0.0
            && self.actual_ma.len() == n
            && self.v_body_v.len() == n
            && self.compliant.len() == n
    }

    pub fn time_s(&self, index: usize) -> f64 {
        index as f64 / self.sample_rate_hz
    }

    pub fn channel(&self, channel: Channel) -> &[f64] {
        match channel {
            Channel::Commanded => &self.commanded_ma,
            Channel::Actual => &self.actual_ma,
            Channel::BodyVoltage => &self.v_body_v,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trace is missing the `{SAMPLE_RATE_KEY}` metadata line")]
    MissingSampleRate,
    #[error("trace channels have unequal lengths or a non-positive sample rate")]
    Inconsistent,
}

fn parse_err(line: usize, message: impl Into<String>) -> TraceError {
    TraceError::Parse {
        line,
        message: message.into(),
    }
}

pub fn write_trace_csv<W: Write>(trace: &Trace, mut out: W) -> Result<(), TraceError> {
    if !trace.is_consistent() {
        return Err(TraceError::Inconsistent);
    }
    writeln!(out, "# {SAMPLE_RATE_KEY}={}", trace.sample_rate_hz)?;
    for (k, v) in &trace.meta {
        if k == SAMPLE_RATE_KEY {
            continue;
        }
        let k = k.replace(['=', '\n', '\r'], "_");
        let v = v.replace(['\n', '\r'], " ");
        writeln!(out, "# {k}={v}")?;
    }
    writeln!(out, "{CSV_HEADER}")?;
    for i in 0..trace.len() {
        writeln!(
            out,
            "{},{},{},{},{}",
            trace.time_s(i),
            trace.commanded_ma[i],
            trace.actual_ma[i],
            trace.v_body_v[i],
            u8::from(trace.compliant[i])
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trace_csv<R: BufRead>(input: R) -> Result<Trace, TraceError> {
    let mut meta = BTreeMap::new();
    let mut sample_rate = None;
    let mut trace = Trace::empty(1.0);
    let mut seen_header = false;

    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if !seen_header {
            if let Some(rest) = line.strip_prefix('#') {
                let (k, v) = rest
                    .trim_start()
                    .split_once('=')
                    .ok_or_else(|| parse_err(line_no, "metadata line must be `# key=value`"))?;
                if k == SAMPLE_RATE_KEY {
                    let rate: f64 = v
                        .parse()
                        .map_err(|_| parse_err(line_no, format!("bad sample rate `{v}`")))?;
                    if !(rate > 0.0 && rate.is_finite()) {
                        return Err(parse_err(line_no, "sample rate must be positive"));
                    }
                    sample_rate = Some(rate);
                } else {
                    meta.insert(k.to_string(), v.to_string());
                }
                continue;
            }
            if line != CSV_HEADER {
                return Err(parse_err(
                    line_no,
                    format!("expected header `{CSV_HEADER}`, found `{line}`"),
                ));
            }
            seen_header = true;
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(parse_err(
                line_no,
                format!("expected 5 columns, found {}", cols.len()),
            ));
        }
        let num = |i: usize, name: &str| -> Result<f64, TraceError> {
            cols[i]
                .parse::<f64>()
                .map_err(|_| parse_err(line_no, format!("bad {name} value `{}`", cols[i])))
        };
        num(0, "t_s")?;
        trace.commanded_ma.push(num(1, "commanded_mA")?);
        trace.actual_ma.push(num(2, "actual_mA")?);
        trace.v_body_v.push(num(3, "v_body_V")?);
        trace.compliant.push(match cols[4] {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(line_no, format!("compliant must be 0 or 1, got `{other}`"))),
        });
    }
    if !seen_header {
        return Err(parse_err(0, "missing CSV header"));
    }
    trace.sample_rate_hz = sample_rate.ok_or(TraceError::MissingSampleRate)?;
    trace.meta = meta;
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Trace {
        let mut meta = BTreeMap::new();
        meta.insert("mode".into(), "ces".into());
        Trace {
            sample_rate_hz: 2000.0,
            commanded_ma: vec![0.0, 1.5, -1.5, 0.1],
            actual_ma: vec![0.0, 1.5, -1.29, 0.1 + 0.2],
            v_body_v: vec![0.0, 15.0, 25.8, 3.0000000000000004],
            compliant: vec![true, true, false, true],
            meta,
        }
    }

    fn round_trip(t: &Trace) -> Trace {
        let mut buf = Vec::new();
        write_trace_csv(t, &mut buf).unwrap();
        read_trace_csv(buf.as_slice()).unwrap()
    }

    #[test]
    fn exact_round_trip() {
        let t = sample();
        assert_eq!(round_trip(&t), t);
    }

    #[test]
    fn empty_trace_is_header_only() {
        let t = Trace::empty(100.0);
        let mut buf = Vec::new();
        write_trace_csv(&t, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text, format!("# sample_rate_Hz=100\n{CSV_HEADER}\n"));
        assert_eq!(read_trace_csv(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn bad_column_count_names_line() {
        let text = format!(
            "# sample_rate_Hz=10\n# a=b\n{CSV_HEADER}\n0,0,0,0,1\n0.1,0,0,0,1\n0.2,0,0,0,1\n0.3,0,0,1\n"
        );
        match read_trace_csv(text.as_bytes()) {
            Err(TraceError::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_flag_rejected() {
        let text = format!("# sample_rate_Hz=10\n{CSV_HEADER}\n0,0,0,0,yes\n");
        assert!(matches!(
            read_trace_csv(text.as_bytes()),
            Err(TraceError::Parse { line: 3, .. })
        ));
    }

    proptest! {
        #[test]
        fn finite_values_round_trip(
            rate in 1.0f64..1e6,
            rows in proptest::collection::vec(
                (-1e6f64..1e6, -1e6f64..1e6, -1e3f64..1e3, any::<bool>()), 0..40)
        ) {
            let t = Trace {
                sample_rate_hz: rate,
                commanded_ma: rows.iter().map(|r| r.0).collect(),
                actual_ma: rows.iter().map(|r| r.1).collect(),
                v_body_v: rows.iter().map(|r| r.2).collect(),
                compliant: rows.iter().map(|r| r.3).collect(),
                meta: BTreeMap::new(),
            };
            prop_assert_eq!(round_trip(&t), t);
        }
    }
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::{StimParams, Timing};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Positive => 1.0,
            Polarity::Negative => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }

    pub fn of(value: f64) -> Self {
        if value < 0.0 {
            Polarity::Negative
        } else {
            Polarity::Positive
        }
    }
}

impl From<Polarity> for i8 {
    fn from(p: Polarity) -> i8 {
        match p {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }
}

impl TryFrom<i8> for Polarity {
    type Error = String;

    fn try_from(v: i8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(Polarity::Positive),
            -1 => Ok(Polarity::Negative),
            other => Err(format!("polarity must be +1 or -1, got {other}")),
        }
    }
}

/// One commanded output interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputEvent {
    pub t_start_us: u64,
    pub duration_us: u64,
    pub polarity: Polarity,
    pub amplitude_ma: f64,
}

impl OutputEvent {
    pub fn end_us(&self) -> u64 {
        self.t_start_us + self.duration_us
    }

    pub fn signed_ma(&self) -> f64 {
        self.amplitude_ma * self.polarity.sign()
    }

    pub fn contains(&self, t_us: u64) -> bool {
        t_us >= self.t_start_us && t_us < self.end_us()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSchedule {
    pub params: StimParams,
    pub events: Vec<OutputEvent>,
    pub total_duration_us: u64,
    pub meta: BTreeMap<String, String>,
}

impl EventSchedule {
    pub(crate) fn new(params: StimParams, timing: &Timing) -> Self {
        let mut meta = BTreeMap::new();
        meta.insert("generator".into(), super::GENERATOR_VERSION.into());
        meta.insert("mode".into(), params.mode.to_string());
        meta.insert("seed".into(), params.seed.to_string());
        meta.insert("warmup_us".into(), timing.warmup_us.to_string());
        meta.insert("dose_us".into(), timing.dose_us.to_string());
        meta.insert("cooldown_us".into(), timing.cooldown_us.to_string());
        Self {
            params,
            events: Vec::new(),
            total_duration_us: timing.total_us(),
            meta,
        }
    }

    /// Index of the event active at `t_us`, if any.
    pub fn event_at(&self, t_us: u64) -> Option<usize> {
        let idx = self.events.partition_point(|e| e.t_start_us <= t_us);
        if idx == 0 {
            return None;
        }
        self.events[idx - 1].contains(t_us).then_some(idx - 1)
    }

    /// Signed commanded current at `t_us`.
    pub fn commanded_at(&self, t_us: u64) -> f64 {
        self.event_at(t_us)
            .map(|i| self.events[i].signed_ma())
            .unwrap_or(0.0)
    }

    /// Time-averaged |current| over `[from_us, to_us)`.
    pub fn mean_abs_current_ma(&self, from_us: u64, to_us: u64) -> f64 {
        if to_us <= from_us {
            return 0.0;
        }
        let charge: f64 = self
            .events
            .iter()
            .map(|e| {
                let start = e.t_start_us.max(from_us);
                let end = e.end_us().min(to_us);
                if end > start {
                    e.amplitude_ma * (end - start) as f64
                } else {
                    0.0
                }
            })
            .sum();
        charge / (to_us - from_us) as f64
    }

    /// Sorted, non-overlapping, positive-duration events inside the session.
    pub fn is_well_formed(&self) -> bool {
        self.events.iter().all(|e| e.duration_us > 0 && e.amplitude_ma >= 0.0)
            && self.events.windows(2).all(|w| w[0].end_us() <= w[1].t_start_us)
            && self
                .events
                .last()
                .is_none_or(|e| e.end_us() <= self.total_duration_us)
    }
}

//! HTTP control service for the stimulator twin.
//!
//! | method | path                               | body                  |
//! |--------|------------------------------------|-----------------------|
//! | POST   | `/v1/sessions`                     | `{"config": "<text>"}`|
//! | GET    | `/v1/sessions`                     |                       |
//! | GET    | `/v1/sessions/{id}`                |                       |
//! | POST   | `/v1/sessions/{id}/start`          |                       |
//! | POST   | `/v1/sessions/{id}/abort`          |                       |
//! | POST   | `/v1/sessions/{id}/intensity`      | `{"intensity_mA": x}` |
//! | POST   | `/v1/sessions/{id}/reset`          |                       |
//! | GET    | `/v1/sessions/{id}/telemetry?channel=blinded\|unblinded` | |
//!
//! Each started session gets its own driver task that ticks the engine at
//! [`TICK_HZ`] and publishes every [`PUBLISH_EVERY`]th frame (plus every
//! state change) to its telemetry subscribers. The unblinded channel, the
//! sham flag and the recorded trace path need the `x-unblind-token` header.

mod resource;
mod routes;

use std::collections::BTreeMap;
use std::fs::File;
use std::future::Future;
use std::io::{self, BufWriter};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use chrono::{DateTime, SecondsFormat, Utc};
use tokio::sync::broadcast;
use tokio::time::MissedTickBehavior;

use tesim_core::session::{Session, SessionState, TelemetryFrame};
use tesim_core::trace::{write_trace_csv, Trace};
use tesim_core::waveform::GENERATOR_VERSION;

pub use resource::{
    BlindedRecord, CircuitEcho, ParamsEcho, SessionResource, UnblindedRecord,
};

pub const TICK_HZ: u32 = 100;
pub const PUBLISH_EVERY: u32 = 10;
pub const STREAM_BUFFER: usize = 256;
pub const UNBLIND_HEADER: &str = "x-unblind-token";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub tick_hz: u32,
    pub publish_every: u32,
    /// Session milliseconds advanced per wall-clock millisecond.
    pub time_scale: f64,
    pub unblind_token: Option<String>,
    /// Where finished sessions write `<id>.csv`.
    pub trace_dir: Option<PathBuf>,
    pub stream_buffer: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            tick_hz: TICK_HZ,
            publish_every: PUBLISH_EVERY,
            time_scale: 1.0,
            unblind_token: None,
            trace_dir: None,
            stream_buffer: STREAM_BUFFER,
        }
    }
}

impl ServiceConfig {
    /// Session time advanced by one driver tick.
    pub fn tick_dt_ms(&self) -> u64 {
        ((1000.0 / self.tick_hz.max(1) as f64) * self.time_scale)
            .round()
            .max(1.0) as u64
    }
}

pub(crate) struct Entry {
    id: String,
    created_at: DateTime<Utc>,
    engine: Session,
    tx: broadcast::Sender<TelemetryFrame>,
    last_published: Option<TelemetryFrame>,
    ticks: u64,
    recorder: Option<Trace>,
    trace_path: Option<PathBuf>,
}

impl Entry {
    fn new(id: String, engine: Session, buffer: usize) -> Self {
        let (tx, _) = broadcast::channel(buffer.max(1));
        Self {
            id,
            created_at: Utc::now(),
            engine,
            tx,
            last_published: None,
            ticks: 0,
            recorder: None,
            trace_path: None,
        }
    }

    pub(crate) fn resource(&self, unblinded: bool) -> SessionResource {
        let p = self.engine.params();
        SessionResource {
            id: self.id.clone(),
            state: self.engine.state(),
            created_at: self.created_at.to_rfc3339_opts(SecondsFormat::Millis, true),
            elapsed_ms: self.engine.elapsed_ms(),
            params: ParamsEcho::from(p),
            circuit: CircuitEcho::from(self.engine.circuit()),
            warnings: p.warnings().to_vec(),
            sham: unblinded.then_some(p.sham),
            trace_path: if unblinded {
                self.trace_path.as_ref().map(|p| p.display().to_string())
            } else {
                None
            },
        }
    }

    fn publish(&mut self, frame: TelemetryFrame) {
        self.last_published = Some(frame);
        // no subscribers is fine
        let _ = self.tx.send(frame);
    }

    fn begin_recording(&mut self, dt_ms: u64) {
        let p = self.engine.params();
        let c = self.engine.circuit();
        let mut trace = Trace::empty(1000.0 / dt_ms as f64);
        let meta = &mut trace.meta;
        meta.insert("session".into(), self.id.clone());
        meta.insert("generator".into(), GENERATOR_VERSION.into());
        meta.insert("mode".into(), p.mode.to_string());
        meta.insert("seed".into(), p.seed.to_string());
        meta.insert("sham".into(), p.sham.to_string());
        meta.insert("intensity_mA".into(), p.intensity_ma.to_string());
        meta.insert("drive".into(), c.drive.to_string());
        meta.insert("r_body_ohm".into(), c.r_body_ohm.to_string());
        self.recorder = Some(trace);
    }

    fn record(&mut self, f: &TelemetryFrame) {
        let commanded = self.engine.last_commanded_ma();
        if let Some(t) = &mut self.recorder {
            t.commanded_ma.push(commanded);
            t.actual_ma.push(f.actual_ma);
            t.v_body_v.push(f.v_body_v);
            t.compliant.push(f.compliant);
        }
    }

    fn flush_trace(&mut self, dir: Option<&PathBuf>) {
        let (Some(dir), Some(trace)) = (dir, self.recorder.take()) else {
            return;
        };
        let path = dir.join(format!("{}.csv", self.id));
        let result = File::create(&path)
            .map_err(tesim_core::trace::TraceError::from)
            .and_then(|f| write_trace_csv(&trace, BufWriter::new(f)));
        match result {
            Ok(()) => {
                tracing::info!(session = %self.id, path = %path.display(), "trace written");
                self.trace_path = Some(path);
            }
            Err(e) => tracing::warn!(session = %self.id, error = %e, "trace not written"),
        }
    }

    /// Advances one driver tick. Returns false once the session has ended.
    fn step(&mut self, dt_ms: u64, publish_every: u32, trace_dir: Option<&PathBuf>) -> bool {
        let before = self.engine.state();
        if !before.is_running() {
            return false;
        }
        let Ok(frame) = self.engine.tick(dt_ms) else {
            return false;
        };
        self.record(&frame);
        self.ticks += 1;
        let terminal = frame.state.is_terminal();
        if terminal || frame.state != before || self.ticks % publish_every.max(1) as u64 == 0 {
            self.publish(frame);
        }
        if terminal {
            self.flush_trace(trace_dir);
        }
        !terminal
    }
}

type EntryRef = Arc<Mutex<Entry>>;

#[derive(Default)]
struct Registry {
    sessions: BTreeMap<String, EntryRef>,
    next_id: u64,
}

struct Shared {
    config: ServiceConfig,
    registry: Mutex<Registry>,
}

/// Cheap-to-clone handle to the service state.
#[derive(Clone)]
pub struct AppState(Arc<Shared>);

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        Self(Arc::new(Shared {
            config,
            registry: Mutex::new(Registry::default()),
        }))
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.0.config
    }

    pub fn router(&self) -> axum::Router {
        routes::router(self.clone())
    }

    pub(crate) fn token_ok(&self, presented: Option<&str>) -> bool {
        match (&self.0.config.unblind_token, presented) {
            (Some(expected), Some(got)) => {
                expected.len() == got.len()
                    && expected
                        .bytes()
                        .zip(got.bytes())
                        .fold(0u8, |acc, (a, b)| acc | (a ^ b))
                        == 0
            }
            _ => false,
        }
    }

    pub(crate) fn insert(&self, engine: Session) -> EntryRef {
        let mut reg = lock(&self.0.registry);
        reg.next_id += 1;
        let id = format!("s{:06}", reg.next_id);
        let entry = Arc::new(Mutex::new(Entry::new(
            id.clone(),
            engine,
            self.0.config.stream_buffer,
        )));
        reg.sessions.insert(id, entry.clone());
        entry
    }

    pub(crate) fn get(&self, id: &str) -> Option<EntryRef> {
        lock(&self.0.registry).sessions.get(id).cloned()
    }

    pub(crate) fn all(&self) -> Vec<EntryRef> {
        lock(&self.0.registry).sessions.values().cloned().collect()
    }

    /// Starts `entry` unless another session holds the output stage.
    pub(crate) fn start(&self, entry: &EntryRef) -> Result<(), resource::ApiError> {
        let reg = lock(&self.0.registry);
        let id = lock(entry).id.clone();
        for (other_id, other) in &reg.sessions {
            if *other_id != id && lock(other).engine.state().is_running() {
                return Err(resource::ApiError::conflict(format!(
                    "session `{other_id}` is using the output stage"
                )));
            }
        }
        let mut e = lock(entry);
        e.engine
            .start()
            .map_err(|err| resource::ApiError::conflict(err.to_string()))?;
        if self.0.config.trace_dir.is_some() {
            e.begin_recording(self.0.config.tick_dt_ms());
        }
        let first = e.engine.current_frame();
        e.record(&first);
        e.publish(first);
        drop(e);
        drop(reg);
        tokio::spawn(drive(self.clone(), entry.clone()));
        Ok(())
    }

    /// Publishes the frame after an out-of-band state change and flushes the
    /// trace if that change ended the session.
    pub(crate) fn after_command(&self, e: &mut Entry) {
        let frame = e.engine.current_frame();
        if frame.state.is_terminal() || frame.state == SessionState::Idle {
            e.publish(frame);
            e.flush_trace(self.0.config.trace_dir.as_ref());
        }
    }

    /// Aborts every unfinished session and runs its ramp to completion
    /// without waiting for the wall clock.
    pub fn shutdown(&self) {
        let dt = self.0.config.tick_dt_ms();
        let dir = self.0.config.trace_dir.clone();
        for entry in self.all() {
            let mut e = lock(&entry);
            let state = e.engine.state();
            if state.is_terminal() || state == SessionState::Idle {
                continue;
            }
            if let Ok(ack) = e.engine.abort() {
                tracing::info!(session = %e.id, from_ma = ack.from_ma, "aborting on shutdown");
            }
            while e.step(dt, self.0.config.publish_every, dir.as_ref()) {}
            // Armed sessions abort without ticking
            let frame = e.engine.current_frame();
            if e.last_published != Some(frame) {
                e.publish(frame);
            }
            e.flush_trace(dir.as_ref());
        }
    }
}

async fn drive(state: AppState, entry: EntryRef) {
    let cfg = &state.0.config;
    let period = Duration::from_secs_f64(1.0 / cfg.tick_hz.max(1) as f64);
    let dt = cfg.tick_dt_ms();
    let mut interval = tokio::time::interval(period);
    interval.set_missed_tick_behavior(MissedTickBehavior::Delay);
    interval.tick().await;
    loop {
        interval.tick().await;
        if !lock(&entry).step(dt, cfg.publish_every, cfg.trace_dir.as_ref()) {
            break;
        }
    }
}

/// Serves until `signal` resolves, then aborts and finishes any session
/// still running so that open telemetry streams see a final frame.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    signal: impl Future<Output = ()> + Send + 'static,
) -> io::Result<()> {
    let app = state.router();
    let on_signal = state.clone();
    axum::serve(listener, app)
        .with_graceful_shutdown(async move {
            signal.await;
            on_signal.shutdown();
        })
        .await
}

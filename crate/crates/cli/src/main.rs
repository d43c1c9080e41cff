mod analyze;

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tesim_core::analog::{resolve_output, CircuitParams};
use tesim_core::config::{parse_session_config, SessionConfig};
use tesim_core::pipeline::{default_sample_rate_hz, render};
use tesim_core::trace::{read_trace_csv, write_trace_csv};
use tesim_core::waveform::{validate_params, PulsePattern, StimMode, ValidatedParams};
use tesim_service::{serve, AppState, ServiceConfig};

/// Software twin of a digital transcranial electrical stimulator.
#[derive(Debug, Parser)]
#[command(name = "tesim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a session config and print the resolved prescription.
    Validate { config: PathBuf },
    /// Generate a session and resolve it through the output stage into a CSV trace.
    Render {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to 100 Hz for tDCS, 10 kHz for tRNS and a 20x oversampled
        /// exact rate otherwise.
        #[arg(long = "sample-rate", value_name = "HZ")]
        sample_rate: Option<f64>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Detect pulses and print a conformance report for a trace.
    Analyze {
        trace: PathBuf,
        /// Add a power spectrum summary and the band-energy ratio.
        #[arg(long)]
        fft: bool,
        /// List saturated intervals and per-pulse spreads.
        #[arg(long)]
        report: bool,
        #[arg(long, default_value_t = analyze::DEFAULT_BAND_HZ, value_name = "HZ")]
        band: f64,
        #[arg(long, default_value = "actual")]
        channel: String,
    },
    /// Run the HTTP control service until interrupted.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
        /// Environment variable holding the unblind token. Without it the
        /// unblinded channel is disabled.
        #[arg(long = "unblind-token-env", value_name = "VAR")]
        unblind_token_env: Option<String>,
        /// Directory that receives one CSV trace per finished session.
        #[arg(long = "trace-dir")]
        trace_dir: Option<PathBuf>,
        /// Session milliseconds per wall-clock millisecond.
        #[arg(long = "time-scale", default_value_t = 1.0)]
        time_scale: f64,
    },
}

#[derive(Debug)]
pub(crate) enum CliError {
    Validation(String),
    Io(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Io(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Io(m) | CliError::Runtime(m) => m,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { config } => validate(&config),
        Command::Render {
            config,
            out,
            sample_rate,
            seed,
        } => render_cmd(&config, &out, sample_rate, seed),
        Command::Analyze {
            trace,
            fft,
            report,
            band,
            channel,
        } => analyze_cmd(&trace, fft, report, band, &channel),
        Command::Serve {
            listen,
            unblind_token_env,
            trace_dir,
            time_scale,
        } => serve_cmd(listen, unblind_token_env, trace_dir, time_scale),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn load(path: &Path) -> Result<(ValidatedParams, CircuitParams), CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let SessionConfig { stim, circuit } = parse_session_config(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let p = validate_params(&stim)
        .map_err(|v| CliError::Validation(format!("{}: {v}", path.display())))?;
    circuit
        .validate()
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    Ok((p, circuit))
}

fn validate(path: &Path) -> Result<(), CliError> {
    let (p, circuit) = load(path)?;
    let s = p.params();
    let t = p.timing();
    let mut out = io::stdout().lock();
    let _ = writeln!(out, "ok: {}", path.display());
    let _ = writeln!(out, "mode: {}", s.mode);
    let _ = writeln!(out, "intensity_mA: {:.1}", p.quantized_intensity_ma());
    let _ = writeln!(out, "ramp_rate_mA_per_min: {}", s.ramp_rate_ma_per_min);
    let _ = writeln!(
        out,
        "timing_s: warm-up {:.3}, dose {:.3}, cool-down {:.3}, total {:.3}",
        t.warmup_us as f64 / 1e6,
        t.dose_us as f64 / 1e6,
        t.cooldown_us as f64 / 1e6,
        t.total_us() as f64 / 1e6
    );
    if s.mode.is_pulsed() {
        let _ = writeln!(out, "freq_Hz: {} to {}", s.freq_lo_hz, s.freq_hi_hz);
        let _ = writeln!(out, "duty_pct: {}", s.duty_pct);
        let _ = writeln!(out, "pattern: {}", s.pattern);
        if s.pattern == PulsePattern::Burst {
            if let Some(b) = s.burst {
                let _ = writeln!(
                    out,
                    "burst: {} Hz x {} pulses, chain {} Hz",
                    b.burst_freq_hz,
                    b.chain_count,
                    b.chain_freq_hz.unwrap_or(s.freq_hi_hz)
                );
            }
        }
    }
    if s.mode != StimMode::Tdcs {
        let _ = writeln!(out, "seed: {}", s.seed);
    }
    let plateau = resolve_output(p.quantized_intensity_ma(), &circuit);
    let _ = writeln!(
        out,
        "output_stage: {} drive into {} ohm -> {:.4} mA at {:.3} V{}",
        circuit.drive,
        circuit.r_body_ohm,
        plateau.i_actual_ma,
        plateau.v_body_v,
        if plateau.compliant { "" } else { " (out of compliance)" }
    );
    for w in p.warnings() {
        let _ = writeln!(out, "warning: {w}");
    }
    Ok(())
}

fn render_cmd(
    path: &Path,
    out: &Path,
    sample_rate: Option<f64>,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let (p, circuit) = load(path)?;
    let p = match seed {
        Some(seed) => validate_params(&p.into_params().with_seed(seed))
            .map_err(|v| CliError::Validation(v.to_string()))?,
        None => p,
    };
    let fs = sample_rate.unwrap_or_else(|| default_sample_rate_hz(&p));
    if !(fs.is_finite() && fs > 0.0) {
        return Err(CliError::Validation(format!(
            "sample rate must be positive, got {fs}"
        )));
    }
    let trace = render(&p, &circuit, fs).map_err(|e| CliError::Validation(e.to_string()))?;
    let file = File::create(out).map_err(|e| io_err(out, e))?;
    let mut w = BufWriter::new(file);
    write_trace_csv(&trace, &mut w).map_err(|e| io_err(out, e))?;
    w.flush().map_err(|e| io_err(out, e))?;
    let peak = trace.actual_ma.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let saturated = trace.compliant.iter().filter(|c| !**c).count();
    println!(
        "wrote {} samples at {} Hz to {} (peak |actual| {:.4} mA, {} non-compliant samples)",
        trace.len(),
        fs,
        out.display(),
        peak,
        saturated
    );
    Ok(())
}

fn analyze_cmd(
    path: &Path,
    fft: bool,
    report: bool,
    band: f64,
    channel: &str,
) -> Result<(), CliError> {
    let channel = channel.parse().map_err(CliError::Validation)?;
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let trace = read_trace_csv(BufReader::new(file)).map_err(|e| match e {
        tesim_core::trace::TraceError::Io(e) => io_err(path, e),
        e => CliError::Validation(format!("{}: {e}", path.display())),
    })?;
    let opts = analyze::Options {
        fft,
        report,
        band_hz: band,
        channel,
    };
    let text = analyze::analyze(&trace, &opts).map_err(CliError::Runtime)?;
    print!("{text}");
    Ok(())
}

fn serve_cmd(
    listen: SocketAddr,
    token_env: Option<String>,
    trace_dir: Option<PathBuf>,
    time_scale: f64,
) -> Result<(), CliError> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(io::stderr)
        .init();
    let unblind_token = match token_env {
        Some(var) => match std::env::var(&var) {
            Ok(t) if !t.is_empty() => Some(t),
            _ => {
                return Err(CliError::Validation(format!(
                    "environment variable {var} is unset or empty"
                )))
            }
        },
        None => None,
    };
    if !(time_scale.is_finite() && time_scale > 0.0) {
        return Err(CliError::Validation(format!(
            "time scale must be positive, got {time_scale}"
        )));
    }
    if let Some(dir) = &trace_dir {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let config = ServiceConfig {
        time_scale,
        unblind_token,
        trace_dir,
        ..ServiceConfig::default()
    };
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(listen)
            .await
            .map_err(|e| CliError::Io(format!("cannot listen on {listen}: {e}")))?;
        let addr = listener
            .local_addr()
            .map_err(|e| CliError::Io(e.to_string()))?;
        println!("listening on http://{addr}");
        let _ = io::stdout().flush();
        serve(listener, AppState::new(config), shutdown_signal())
            .await
            .map_err(|e| CliError::Runtime(e.to_string()))
    })?;
    println!("stopped");
    Ok(())
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = match signal(SignalKind::terminate()) {
            Ok(s) => s,
            Err(_) => {
                let _ = tokio::signal::ctrl_c().await;
                return;
            }
        };
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    let _ = tokio::signal::ctrl_c().await;
    tracing::info!("shutting down");
}

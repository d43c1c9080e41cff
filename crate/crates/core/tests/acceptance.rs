//! Acceptance suite: one PASS/FAIL line per criterion, each with its time
//! budget. Exits non-zero if any criterion fails.
//!
//! Set `UPDATE_GOLDEN=1` to rewrite the golden trace snapshots.

use std::fs;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tesim_core::analog::{
    available_voltage, i_out_early, i_out_with_error, resolve_output, v2i_ideal, CircuitParams,
    DriveMode,
};
use tesim_core::analysis::{
    band_energy_ratio, detect_pulses, measure_duty_and_freq, spectrum_of, DetectOptions,
};
use tesim_core::pipeline::{exact_rate_at_least, render};
use tesim_core::session::{Session, SessionState};
use tesim_core::trace::{write_trace_csv, Channel, Trace};
use tesim_core::waveform::{
    fm_schedule, gen_ces, gen_tdcs, gen_trns, generate, validate_params, BurstConfig,
    EventSchedule, OutputEvent, PulsePattern, StimMode, StimParams, ValidatedParams,
};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

// ---------------------------------------------------------------- oracles

/// Round-half-up microsecond period, independent of the timebase module.
fn oracle_period_us(f_hz: f64) -> u64 {
    (1e6 / f_hz + 0.5).floor() as u64
}

fn oracle_period_range(lo: f64, hi: f64) -> (u64, u64) {
    ((1e6 / hi).ceil() as u64, (1e6 / lo).floor() as u64)
}

/// True if some sample instant `k * dt_us` lies in `[start, end)`.
fn covers_sample(e: &OutputEvent, dt_us: u64) -> bool {
    let first = e.t_start_us.div_ceil(dt_us) * dt_us;
    first < e.t_start_us + e.duration_us
}

fn validated(p: &StimParams) -> Result<ValidatedParams, String> {
    validate_params(p).map_err(|v| format!("{p:?} rejected: {v}"))
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    (rng.random_range(lo.ln()..=hi.ln())).exp().clamp(lo, hi)
}

/// Ramp rate that makes the warm-up last `ramp_s` seconds.
fn ramp_rate_for(intensity: f64, ramp_s: f64) -> f64 {
    intensity * 60.0 / ramp_s
}

fn random_burst(rng: &mut ChaCha8Rng) -> StimParams {
    loop {
        let fb = rng.random_range(1.0..=20.0);
        let n = rng.random_range(2..=15u32);
        let lo = log_uniform(rng, (2.0f64).max(n as f64) * fb, 1000.0);
        let hi = log_uniform(rng, lo, 1000.0);
        let intensity = rng.random_range(1..=40u32) as f64 / 10.0;
        let windows = rng.random_range(4..=12) as f64;
        let p = StimParams::new(StimMode::Ces, intensity, windows / fb)
            .with_ramp_rate(ramp_rate_for(intensity, rng.random_range(0.1..1.0)))
            .with_freq(lo, hi)
            .with_duty(rng.random_range(10.0..=90.0))
            .with_burst(BurstConfig::new(fb, n))
            .with_seed(rng.random());
        if validate_params(&p).is_ok() {
            return p;
        }
    }
}

fn random_pulsed(rng: &mut ChaCha8Rng) -> StimParams {
    let kind = rng.random_range(0..5);
    if kind == 4 {
        return random_burst(rng);
    }
    loop {
        let lo = log_uniform(rng, 0.5, 1000.0);
        let hi = log_uniform(rng, lo, 1000.0);
        let intensity = rng.random_range(1..=40u32) as f64 / 10.0;
        let (mode, pattern) = match kind {
            0 => (StimMode::Tpcs, PulsePattern::Continuous),
            1 => (StimMode::Ces, PulsePattern::Continuous),
            2 => (StimMode::Ces, PulsePattern::Random),
            _ => (StimMode::Ces, PulsePattern::Fm),
        };
        let hi = if pattern == PulsePattern::Continuous && mode == StimMode::Ces {
            lo
        } else {
            hi
        };
        let fs = exact_rate_at_least(20.0 * hi);
        let dose = (8.0 / lo).min(1.5e6 / fs).max(0.05);
        let p = StimParams::new(mode, intensity, dose)
            .with_ramp_rate(ramp_rate_for(intensity, rng.random_range(0.05..0.5)))
            .with_freq(lo, hi)
            .with_duty(rng.random_range(10.0..=90.0))
            .with_pattern(pattern)
            .with_seed(rng.random());
        if validate_params(&p).is_ok() {
            return p;
        }
    }
}

// ---------------------------------------------------------------- criteria

fn c1_parameter_ranges() -> Outcome {
    let base = |i: f64| StimParams::new(StimMode::Tdcs, i, 60.0);
    let mut accepted = 0;
    for k in 0..=50u32 {
        let legal = (1..=40).contains(&k);
        let typed: f64 = format!("{}.{}", k / 10, k % 10).parse().unwrap();
        for i in [typed, k as f64 * 0.1] {
            let ok = validate_params(&base(i)).is_ok();
            ensure!(ok == legal, "intensity {i} mA: accepted={ok}, expected {legal}");
            accepted += usize::from(ok);
        }
    }
    ensure!(accepted == 80, "accepted {accepted} of 80 lattice points");
    for i in [0.0, 4.1, 0.05, 0.15, -0.1, f64::NAN] {
        ensure!(validate_params(&base(i)).is_err(), "intensity {i} accepted");
    }

    let tpcs = |lo: f64, hi: f64, duty: f64| {
        StimParams::new(StimMode::Tpcs, 1.0, 60.0)
            .with_freq(lo, hi)
            .with_duty(duty)
    };
    for (lo, hi, duty, legal) in [
        (0.5, 1000.0, 50.0, true),
        (0.5, 0.5, 50.0, true),
        (1000.0, 1000.0, 50.0, true),
        (0.4, 10.0, 50.0, false),
        (10.0, 1001.0, 50.0, false),
        (10.0, 10.0, 10.0, true),
        (10.0, 10.0, 90.0, true),
        (10.0, 10.0, 9.0, false),
        (10.0, 10.0, 91.0, false),
    ] {
        let ok = validate_params(&tpcs(lo, hi, duty)).is_ok();
        ensure!(ok == legal, "tPCS {lo}-{hi} Hz {duty} %: accepted={ok}");
    }

    let burst = |fb: f64, n: u32| {
        StimParams::new(StimMode::Ces, 1.0, 60.0)
            .with_freq(1000.0, 1000.0)
            .with_burst(BurstConfig::new(fb, n))
    };
    for (fb, n, legal) in [
        (1.0, 2, true),
        (20.0, 2, true),
        (20.0, 15, true),
        (0.9, 2, false),
        (21.0, 2, false),
        (10.0, 1, false),
        (10.0, 16, false),
    ] {
        let r = validate_params(&burst(fb, n));
        ensure!(r.is_ok() == legal, "burst f_B={fb} N={n}: {r:?}");
        if let Err(v) = r {
            let field = if n == 1 || n == 16 { "chain_count" } else { "burst_freq_Hz" };
            ensure!(v.mentions(field), "burst f_B={fb} N={n}: violation not on {field}: {v}");
        }
    }

    let all_bad = StimParams::new(StimMode::Tpcs, 4.1, 60.0)
        .with_freq(0.4, 1001.0)
        .with_duty(91.0);
    let v = validate_params(&all_bad).unwrap_err();
    ensure!(v.0.len() == 4, "expected 4 violations, got {}: {v}", v.0.len());
    Ok("51-point intensity lattice and every boundary pair checked".into())
}

fn c2_tdcs_schedule() -> Outcome {
    let p = validated(&StimParams::new(StimMode::Tdcs, 2.0, 1200.0))?;
    let s = gen_tdcs(&p).map_err(|e| e.to_string())?;
    let t = p.timing();
    // 2.0 mA at 1 mA/min
    let expected_us = (2.0f64 / 1.0 * 60.0 * 1e6) as u64;
    ensure!(t.warmup_us == expected_us, "T_w = {} us", t.warmup_us);
    ensure!(t.cooldown_us == expected_us, "T_c = {} us", t.cooldown_us);
    let plateau: Vec<_> = s
        .events
        .iter()
        .filter(|e| e.t_start_us >= t.warmup_us && e.end_us() <= t.dose_end_us())
        .collect();
    ensure!(!plateau.is_empty(), "no plateau events");
    ensure!(
        plateau.iter().all(|e| e.amplitude_ma == 2.0),
        "plateau amplitudes {:?}",
        plateau.iter().map(|e| e.amplitude_ma).collect::<Vec<_>>()
    );
    let covered: u64 = plateau.iter().map(|e| e.duration_us).sum();
    ensure!(covered == 1_200_000_000, "plateau covers {covered} us");
    ensure!(s.total_duration_us == 1_440_000_000, "total {} us", s.total_duration_us);
    let peak = s.events.iter().map(|e| e.amplitude_ma).fold(0.0, f64::max);
    ensure!(peak == 2.0, "peak {peak}");
    Ok(format!(
        "T_w = T_c = {} s, plateau 2.0 mA for {} s",
        t.warmup_us / 1_000_000,
        covered / 1_000_000
    ))
}

fn c3_closed_loop() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xD07);
    let mut pairs = 0usize;
    for case in 0..200 {
        let p = random_pulsed(&mut rng);
        let vp = validated(&p)?;
        let schedule = generate(&vp).map_err(|e| e.to_string())?;
        let fs = exact_rate_at_least(20.0 * p.freq_hi_hz);
        let dt_us = (1e6 / fs) as u64;
        let dt_s = 1.0 / fs;
        let trace = render(&vp, &CircuitParams::default(), fs).map_err(|e| e.to_string())?;
        let pulses = detect_pulses(&trace, &DetectOptions::default());

        let expected: Vec<&OutputEvent> = schedule
            .events
            .iter()
            .filter(|e| e.amplitude_ma > 0.0 && covers_sample(e, dt_us))
            .collect();
        ensure!(
            pulses.len() == expected.len(),
            "case {case} {p:?}: detected {} pulses, schedule has {}",
            pulses.len(),
            expected.len()
        );
        if pulses.len() < 2 {
            continue;
        }
        let m = measure_duty_and_freq(&pulses).map_err(|e| e.to_string())?;
        let chain = p.burst.map(|b| b.chain_count as usize);
        let (p_min, p_max) = oracle_period_range(p.freq_lo_hz, p.freq_hi_hz);
        for (i, mi) in m.iter().enumerate() {
            if chain.is_some_and(|n| i % n == n - 1) {
                continue;
            }
            let t_p_true = (expected[i + 1].t_start_us - expected[i].t_start_us) as f64 / 1e6;
            let t_on_meas = mi.duty_pct / 100.0 * mi.t_period_s;
            let t_on_cfg = p.duty_pct / 100.0 * t_p_true;
            // one rendered sample, plus half of the 1 us clock quantum
            ensure!(
                (t_on_meas - t_on_cfg).abs() <= dt_s + 0.5e-6 + 1e-12,
                "case {case} pair {i}: ON {t_on_meas} s vs configured {t_on_cfg} s (dt {dt_s})"
            );
            let t_p_meas = 1.0 / mi.freq_hz;
            ensure!(
                t_p_meas >= p_min as f64 / 1e6 - dt_s - 1e-12
                    && t_p_meas <= p_max as f64 / 1e6 + dt_s + 1e-12,
                "case {case} pair {i}: {} Hz outside {}..={} Hz",
                mi.freq_hz,
                p.freq_lo_hz,
                p.freq_hi_hz
            );
            pairs += 1;
        }
    }
    Ok(format!("200 configs, {pairs} pulse pairs within tolerance"))
}

fn c4_burst_structure() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xB0B);
    let mut windows = 0usize;
    for case in 0..100 {
        // burst periods of 2m us put the 2x boundary on the clock grid
        let m = rng.random_range(25_000..=500_000u64);
        let fb = 1e6 / (2 * m) as f64;
        let at_boundary = StimParams::new(StimMode::Ces, 1.0, 10.0)
            .with_freq(2.0 * fb, 2.0 * fb)
            .with_burst(BurstConfig::new(fb, 2));
        ensure!(
            validate_params(&at_boundary).is_ok(),
            "case {case}: burst period exactly 2 x basic period rejected"
        );
        let too_slow = at_boundary.clone().with_freq(2.0 * fb * 0.999, 2.0 * fb);
        match validate_params(&too_slow) {
            Err(v) if v.mentions("burst_freq_Hz") => {}
            other => return Err(format!("case {case}: 2x rule not enforced: {other:?}")),
        }

        let p = random_burst(&mut rng);
        let vp = validated(&p)?;
        let b = p.burst.unwrap();
        let n = b.chain_count as usize;
        let s = gen_ces(&vp).map_err(|e| e.to_string())?;
        let fs = exact_rate_at_least(20.0 * p.freq_hi_hz);
        let trace = render(&vp, &CircuitParams::default(), fs).map_err(|e| e.to_string())?;
        let detected: Vec<u64> = detect_pulses(&trace, &DetectOptions::default())
            .iter()
            .map(|d| (d.t_start_s * 1e6).round() as u64)
            .collect();
        let t = vp.timing();
        let burst_us = oracle_period_us(b.burst_freq_hz);
        let mut w0 = t.dose_start_us();
        while w0 + burst_us <= t.dose_end_us() {
            let w1 = w0 + burst_us;
            let in_schedule = s
                .events
                .iter()
                .filter(|e| e.t_start_us >= w0 && e.t_start_us < w1)
                .count();
            let in_trace = detected.iter().filter(|&&t| t >= w0 && t < w1).count();
            ensure!(
                in_schedule == n && in_trace == n,
                "case {case} {p:?}: window at {w0} us holds {in_schedule} events / {in_trace} detected, N = {n}"
            );
            windows += 1;
            w0 = w1;
        }
    }
    Ok(format!("100 configs, {windows} complete windows hold exactly N pulses; 2x rule enforced"))
}

fn c5_fm_structure() -> Outcome {
    let cases = [
        (10.0, 40.0, 16u32),
        (0.5, 1000.0, 16),
        (1.0, 2.0, 2),
        (3.0, 7.0, 5),
        (100.0, 400.0, 30),
        (0.7, 13.0, 9),
    ];
    for (lo, hi, n) in cases {
        let seq = fm_schedule(lo, hi, n).map_err(|e| e.to_string())?;
        let n = n as usize;
        ensure!(seq.len() == 2 * n - 2, "{lo}-{hi}/{n}: length {}", seq.len());
        ensure!(seq[0] == lo, "{lo}-{hi}/{n}: first {}", seq[0]);
        ensure!(seq[n - 1] == hi, "{lo}-{hi}/{n}: peak {}", seq[n - 1]);
        let min = seq.iter().copied().fold(f64::INFINITY, f64::min);
        let max = seq.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        ensure!(min == lo && max == hi, "{lo}-{hi}/{n}: extrema {min}, {max}");
        for k in 0..n {
            let oracle = lo + (hi - lo) * k as f64 / (n - 1) as f64;
            ensure!(
                (seq[k] - oracle).abs() <= 1e-12 * hi,
                "{lo}-{hi}/{n}: step {k} = {} vs {oracle}",
                seq[k]
            );
            if k > 0 {
                ensure!(seq[k] > seq[k - 1], "{lo}-{hi}/{n}: not rising at {k}");
            }
        }
        for j in 1..n - 1 {
            ensure!(seq[n - 1 + j] == seq[n - 1 - j], "{lo}-{hi}/{n}: not mirrored at {j}");
        }

        // realised pulse periods in a generated schedule
        let cycles = 3.0;
        let cycle_s: f64 = seq.iter().map(|f| 1.0 / f).sum();
        let p = StimParams::new(StimMode::Ces, 1.0, cycles * cycle_s)
            .with_ramp_rate(600.0)
            .with_freq(lo, hi)
            .with_pattern(PulsePattern::Fm)
            .with_duty(50.0);
        let p = StimParams { fm_steps: n as u32, ..p };
        let s = generate(&validated(&p)?).map_err(|e| e.to_string())?;
        let periods: Vec<u64> = s
            .events
            .windows(2)
            .map(|w| w[1].t_start_us - w[0].t_start_us)
            .collect();
        let l = seq.len();
        ensure!(periods.len() >= 2 * l, "{lo}-{hi}/{n}: only {} periods", periods.len());
        let (p_min, p_max) = oracle_period_range(lo, hi);
        for (i, &got) in periods.iter().enumerate() {
            let want = oracle_period_us(seq[i % l]).clamp(p_min, p_max);
            ensure!(got == want, "{lo}-{hi}/{n}: period {i} = {got} us, want {want}");
        }
        let cycle = &periods[..l];
        ensure!(
            cycle[0] == p_max.min(oracle_period_us(lo)) && cycle[n - 1] == p_min.max(oracle_period_us(hi)),
            "{lo}-{hi}/{n}: realised extrema {} / {}",
            cycle[0],
            cycle[n - 1]
        );
    }
    Ok(format!("{} FM configs triangular with exact extrema", cases.len()))
}

fn signed_charge_runs(s: &EventSchedule) -> Vec<Vec<&OutputEvent>> {
    let mut runs: Vec<Vec<&OutputEvent>> = Vec::new();
    for e in &s.events {
        match runs.last_mut() {
            Some(run) if run[0].amplitude_ma == e.amplitude_ma => run.push(e),
            _ => runs.push(vec![e]),
        }
    }
    runs
}

fn c6_charge_balance() -> Outcome {
    let configs = [
        StimParams::new(StimMode::Ces, 2.0, 30.0)
            .with_ramp_rate(12.0)
            .with_freq(100.0, 100.0)
            .with_duty(37.0),
        StimParams::new(StimMode::Ces, 0.7, 20.0)
            .with_ramp_rate(4.0)
            .with_freq(333.0, 333.0)
            .with_duty(90.0),
        StimParams::new(StimMode::Ces, 1.3, 20.0)
            .with_ramp_rate(6.0)
            .with_freq(40.0, 250.0)
            .with_burst(BurstConfig::new(7.0, 5)),
        StimParams::new(StimMode::Ces, 4.0, 10.0)
            .with_ramp_rate(60.0)
            .with_freq(1000.0, 1000.0)
            .with_duty(10.0)
            .with_burst(BurstConfig::new(20.0, 15)),
        StimParams::new(StimMode::Met, 2.0, 120.0).with_ramp_rate(30.0),
    ];
    let mut windows = 0u64;
    for p in &configs {
        let s = generate(&validated(p)?).map_err(|e| e.to_string())?;
        for run in signed_charge_runs(&s) {
            // f64 prefix and an exact integer prefix (0.1 mA x us units)
            let mut pf = vec![0.0f64];
            let mut pi = vec![0i128];
            for e in &run {
                let q = e.polarity.sign() * e.amplitude_ma * e.duration_us as f64;
                pf.push(pf.last().unwrap() + q);
                let steps = (e.amplitude_ma * 10.0).round() as i128;
                let sign = e.polarity.sign() as i128;
                pi.push(pi.last().unwrap() + sign * steps * e.duration_us as i128);
            }
            for i in 0..run.len() {
                for j in (i + 2..=run.len()).step_by(2) {
                    ensure!(
                        pf[j] - pf[i] == 0.0 && pi[j] - pi[i] == 0,
                        "{} {}: pulses {i}..{j} carry {} mA*us",
                        p.mode,
                        p.pattern,
                        pf[j] - pf[i]
                    );
                    windows += 1;
                }
            }
        }
    }
    Ok(format!("{windows} even-length constant-amplitude windows net to zero"))
}

fn c7_circuit_model() -> Outcome {
    let c = CircuitParams::default();
    let exact = |got: f64, want: f64, what: &str| -> Result<(), String> {
        if (got - want).abs() <= 2.0 * f64::EPSILON * want.abs() {
            Ok(())
        } else {
            Err(format!("{what}: {got} != {want}"))
        }
    };
    exact(v2i_ideal(2.6, &c), (2.6 - 0.6) / 1000.0 * 1000.0, "ideal V-to-I at 2.6 V")?;
    exact(v2i_ideal(2.6, &c), 2.0, "ideal V-to-I at 2.6 V")?;
    exact(available_voltage(&c), 30.0 - (5.0 - 0.6 - 0.2), "available voltage")?;
    exact(available_voltage(&c), 25.8, "available voltage")?;
    exact(i_out_with_error(2.0, &c), 2.0 - 0.2 / 1000.0 * 1000.0, "base-current error")?;
    exact(i_out_with_error(2.0, &c), 1.8, "base-current error")?;
    let early = (2.0 - 0.2) * (1.0 + ((5.0 - 0.6) - (2.6 - 0.6)) / 100.0);
    exact(i_out_early(2.0, 2.6, &c), early, "Early-effect output")?;
    exact(i_out_early(2.0, 2.6, &c), 1.8432, "Early-effect output")?;
    let ideal = CircuitParams {
        v_early_v: 1e12,
        ..c
    };
    for i in [0.3, 1.0, 2.0, 3.7] {
        let v = 0.6 + i;
        let a = i_out_early(i, v, &ideal);
        let b = i_out_with_error(i, &ideal);
        ensure!((a - b).abs() <= 1e-9 * b.abs(), "V_A=1e12 at {i} mA: {a} vs {b}");
    }
    Ok("ideal 2.0 mA, available 25.8 V, with base error 1.8 mA, with Early effect 1.8432 mA".into())
}

fn c8_compliance() -> Outcome {
    let c = CircuitParams::default();
    let at_10k = resolve_output(2.0, &c);
    ensure!(at_10k.compliant, "2 mA into 10 kOhm not compliant: {at_10k:?}");
    ensure!((at_10k.v_body_v - 20.0).abs() <= 1e-9, "v_body {} V", at_10k.v_body_v);
    ensure!((at_10k.i_actual_ma - 2.0).abs() <= 1e-12, "i {} mA", at_10k.i_actual_ma);

    let at_20k = resolve_output(2.0, &c.with_load(20_000.0));
    let limit_ma = 25.8 / 20_000.0 * 1000.0;
    ensure!(!at_20k.compliant, "2 mA into 20 kOhm reported compliant");
    ensure!(
        (at_20k.i_actual_ma - limit_ma).abs() <= 1e-12,
        "saturated at {} mA, want {limit_ma}",
        at_20k.i_actual_ma
    );

    let mut rng = ChaCha8Rng::seed_from_u64(0xC0);
    let mut worst = 0.0f64;
    for _ in 0..100_000 {
        let circuit = CircuitParams {
            v_be_on_v: rng.random_range(0.4..0.8),
            v_ce_sat_v: rng.random_range(0.05..0.4),
            v_early_v: rng.random_range(10.0..1000.0),
            r_e_ohm: rng.random_range(200.0..5000.0),
            r_body_ohm: log_uniform(&mut rng, 10.0, 1e7),
            drive: if rng.random() { DriveMode::Calibrated } else { DriveMode::OpenLoop },
            ..c
        };
        let i = rng.random_range(0.0..=4.0);
        let out = resolve_output(i, &circuit);
        ensure!(
            out.v_body_v < 30.0 && out.v_body_v >= 0.0 && out.v_body_v.is_finite(),
            "{i} mA into {circuit:?}: v_body {} V",
            out.v_body_v
        );
        worst = worst.max(out.v_body_v);
    }
    Ok(format!(
        "10 kOhm: 20 V compliant; 20 kOhm: {limit_ma:.2} mA saturated; max v_body {worst:.3} V over 1e5 inputs"
    ))
}

fn c9_trns_spectrum() -> Outcome {
    let fs = 10_000.0;
    let mut lowest = 1.0f64;
    for seed in 0..20u64 {
        let p = StimParams::new(StimMode::Trns, 1.0, 10.0)
            .with_ramp_rate(60.0)
            .with_seed(seed);
        let vp = validated(&p)?;
        let t = vp.timing();
        let trace = gen_trns(&vp, fs).map_err(|e| e.to_string())?;
        let first = (t.dose_start_us() as f64 * fs / 1e6) as usize;
        let dose = &trace.commanded_ma[first..first + (10.0 * fs) as usize];
        let s = spectrum_of(dose, fs).map_err(|e| e.to_string())?;
        let ratio = band_energy_ratio(&s, 300.0).map_err(|e| e.to_string())?;
        ensure!(ratio >= 0.95, "seed {seed}: ratio {ratio:.4}");
        lowest = lowest.min(ratio);
    }
    Ok(format!("20 seeds, lowest energy fraction below 300 Hz {lowest:.4}"))
}

fn c10_sham() -> Outcome {
    let configs = [
        StimParams::new(StimMode::Tdcs, 2.0, 30.0).with_ramp_rate(30.0),
        StimParams::new(StimMode::Tpcs, 1.5, 5.0)
            .with_ramp_rate(30.0)
            .with_freq(5.0, 80.0),
        StimParams::new(StimMode::Ces, 1.0, 5.0)
            .with_ramp_rate(30.0)
            .with_freq(10.0, 200.0)
            .with_pattern(PulsePattern::Random),
        StimParams::new(StimMode::Ces, 3.0, 5.0)
            .with_ramp_rate(60.0)
            .with_freq(30.0, 100.0)
            .with_burst(BurstConfig::new(3.0, 4)),
        StimParams::new(StimMode::Met, 2.0, 10.0).with_ramp_rate(60.0),
    ];
    let c = CircuitParams::default();
    for p in &configs {
        let seed = 42;
        let real = validated(&p.clone().with_seed(seed))?;
        let sham = validated(&p.clone().with_seed(seed).with_sham(true))?;
        let t = real.timing();
        let in_dose = |e: &&OutputEvent| t.in_dose(e.t_start_us);
        let a = generate(&real).map_err(|e| e.to_string())?;
        let b = generate(&sham).map_err(|e| e.to_string())?;
        let outside = |s: &EventSchedule| -> Vec<OutputEvent> {
            s.events.iter().filter(|e| !in_dose(e)).copied().collect()
        };
        ensure!(outside(&a) == outside(&b), "{}: events outside the dose differ", p.mode);
        let dose_a: Vec<_> = a.events.iter().filter(in_dose).collect();
        let dose_b: Vec<_> = b.events.iter().filter(in_dose).collect();
        ensure!(dose_a.len() == dose_b.len(), "{}: in-dose timing differs", p.mode);
        ensure!(
            dose_b.iter().all(|e| e.amplitude_ma == 0.0),
            "{}: sham run delivers current in dose",
            p.mode
        );
        ensure!(
            dose_a.iter().all(|e| e.amplitude_ma == real.quantized_intensity_ma()),
            "{}: real run plateau off target",
            p.mode
        );
        let fs = exact_rate_at_least(20.0 * p.freq_hi_hz).max(100.0);
        let tr = render(&sham, &c, fs).map_err(|e| e.to_string())?;
        // a pulse latches its amplitude at its start, so one begun in the
        // warm-up may run on briefly into the dose (identically in both runs)
        for k in 0..tr.len() {
            let t_us = (k as f64 * 1e6 / fs) as u64;
            let carried = b
                .event_at(t_us)
                .is_some_and(|i| b.events[i].t_start_us < t.dose_start_us());
            if t.in_dose(t_us) && !carried {
                ensure!(
                    tr.actual_ma[k] == 0.0,
                    "{}: sham actual {} at sample {k}",
                    p.mode,
                    tr.actual_ma[k]
                );
            }
        }
    }

    // noise: same seed, samples outside the dose identical, inside zero
    let trns = StimParams::new(StimMode::Trns, 1.0, 3.0).with_ramp_rate(60.0);
    let real = validated(&trns)?;
    let sham = validated(&trns.clone().with_sham(true))?;
    let (ta, tb) = (
        gen_trns(&real, 2000.0).map_err(|e| e.to_string())?,
        gen_trns(&sham, 2000.0).map_err(|e| e.to_string())?,
    );
    let t = real.timing();
    for k in 0..ta.len() {
        let in_dose = t.in_dose((k as f64 * 500.0) as u64);
        let (x, y) = (ta.commanded_ma[k], tb.commanded_ma[k]);
        ensure!(
            if in_dose { y == 0.0 } else { x == y },
            "tRNS sample {k}: real {x}, sham {y}"
        );
    }

    // blinded telemetry
    let mut frames = 0;
    for p in [&configs[0], &configs[3]] {
        let mut real = Session::create(p.clone(), c).map_err(|e| e.to_string())?;
        let mut sham = Session::create(p.clone().with_sham(true), c).map_err(|e| e.to_string())?;
        let truth = generate(&validated(p)?).map_err(|e| e.to_string())?;
        real.start().map_err(|e| e.to_string())?;
        sham.start().map_err(|e| e.to_string())?;
        loop {
            let fa = real.tick(10).map_err(|e| e.to_string())?;
            let fb = sham.tick(10).map_err(|e| e.to_string())?;
            let (ja, jb) = (
                serde_json::to_string(&fa.blinded()).unwrap(),
                serde_json::to_string(&fb.blinded()).unwrap(),
            );
            ensure!(ja == jb, "blinded frames differ: {ja} vs {jb}");
            ensure!(
                !jb.contains("sham") && !jb.contains("actual"),
                "blinded frame leaks: {jb}"
            );
            if fb.state == SessionState::Dose {
                let programmed = truth.commanded_at(fb.t_ms * 1000).abs();
                ensure!(
                    fb.displayed_ma == programmed,
                    "{} ms: blinded shows {} mA, programmed {programmed}",
                    fb.t_ms,
                    fb.displayed_ma
                );
                ensure!(fb.actual_ma == 0.0, "{} ms: sham actual {}", fb.t_ms, fb.actual_ma);
                frames += 1;
            }
            if fa.state.is_terminal() {
                break;
            }
        }
    }
    ensure!(frames > 0, "no dose frames observed");
    Ok(format!(
        "{} schedules + tRNS matched outside dose, silent inside; {frames} blinded dose frames show the programmed value",
        configs.len()
    ))
}

fn csv_bytes(t: &Trace) -> Result<Vec<u8>, String> {
    let mut out = Vec::new();
    write_trace_csv(t, &mut out).map_err(|e| e.to_string())?;
    Ok(out)
}

fn c11_determinism() -> Outcome {
    let configs = [
        (StimParams::new(StimMode::Tdcs, 1.0, 5.0).with_ramp_rate(60.0), 100.0),
        (
            StimParams::new(StimMode::Tpcs, 1.0, 3.0)
                .with_ramp_rate(60.0)
                .with_freq(20.0, 300.0),
            10_000.0,
        ),
        (
            StimParams::new(StimMode::Ces, 1.0, 3.0)
                .with_ramp_rate(60.0)
                .with_freq(20.0, 300.0)
                .with_pattern(PulsePattern::Random),
            10_000.0,
        ),
        (StimParams::new(StimMode::Trns, 1.0, 3.0).with_ramp_rate(60.0), 10_000.0),
    ];
    let c = CircuitParams::default();
    let mut bytes = 0;
    for (p, fs) in &configs {
        let vp = validated(&p.clone().with_seed(7))?;
        let a = csv_bytes(&render(&vp, &c, *fs).map_err(|e| e.to_string())?)?;
        let b = csv_bytes(&render(&vp, &c, *fs).map_err(|e| e.to_string())?)?;
        ensure!(a == b, "{}: renders differ", p.mode);
        bytes += a.len();
        if matches!(p.mode, StimMode::Tpcs | StimMode::Ces | StimMode::Trns) {
            let other = validated(&p.clone().with_seed(8))?;
            let c2 = csv_bytes(&render(&other, &c, *fs).map_err(|e| e.to_string())?)?;
            ensure!(a != c2, "{}: seed has no effect", p.mode);
        }
    }
    Ok(format!("{} modes byte-identical across runs ({bytes} bytes)", configs.len()))
}

fn golden_configs() -> Vec<(&'static str, StimParams)> {
    vec![
        (
            "ces_continuous",
            StimParams::new(StimMode::Ces, 1.0, 2.0)
                .with_ramp_rate(60.0)
                .with_freq(10.0, 10.0)
                .with_duty(40.0),
        ),
        (
            "ces_fm",
            StimParams::new(StimMode::Ces, 1.0, 2.0)
                .with_ramp_rate(60.0)
                .with_freq(10.0, 40.0)
                .with_pattern(PulsePattern::Fm),
        ),
        (
            "ces_burst",
            StimParams::new(StimMode::Ces, 1.0, 2.0)
                .with_ramp_rate(60.0)
                .with_freq(50.0, 50.0)
                .with_burst(BurstConfig::new(4.0, 3)),
        ),
    ]
}

fn c12_golden() -> Outcome {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    let c = CircuitParams::default();
    let mut names = Vec::new();
    for (name, p) in golden_configs() {
        let vp = validated(&p)?;
        let fs = exact_rate_at_least(20.0 * p.freq_hi_hz);
        let bytes = csv_bytes(&render(&vp, &c, fs).map_err(|e| e.to_string())?)?;
        let path = dir.join(format!("{name}.csv"));
        if update {
            fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
            fs::write(&path, &bytes).map_err(|e| e.to_string())?;
        }
        let stored = fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        ensure!(
            stored == bytes,
            "{name}: render no longer matches {}",
            path.display()
        );
        // the snapshot must show the pattern it stands for
        let trace = tesim_core::trace::read_trace_csv(stored.as_slice()).map_err(|e| e.to_string())?;
        let pulses = detect_pulses(&trace, &DetectOptions::default().on(Channel::Actual));
        ensure!(pulses.len() > 4, "{name}: only {} pulses", pulses.len());
        names.push(name);
    }
    Ok(format!(
        "{} snapshots match{}",
        names.join(", "),
        if update { " (rewritten)" } else { "" }
    ))
}

// ---------------------------------------------------------------- runner

fn main() {
    let criteria: Vec<(u32, &str, Duration, fn() -> Outcome)> = vec![
        (1, "parameter-range conformance", Duration::from_secs(1), c1_parameter_ranges),
        (2, "tDCS schedule", Duration::from_secs(1), c2_tdcs_schedule),
        (3, "duty/frequency closed loop", Duration::from_secs(120), c3_closed_loop),
        (4, "burst structure", Duration::from_secs(30), c4_burst_structure),
        (5, "FM structure", Duration::from_secs(5), c5_fm_structure),
        (6, "CES charge balance", Duration::from_secs(5), c6_charge_balance),
        (7, "circuit model", Duration::from_secs(1), c7_circuit_model),
        (8, "compliance", Duration::from_secs(10), c8_compliance),
        (9, "tRNS spectrum", Duration::from_secs(30), c9_trns_spectrum),
        (10, "SHAM", Duration::from_secs(10), c10_sham),
        (11, "determinism", Duration::from_secs(10), c11_determinism),
        (12, "golden snapshots", Duration::from_secs(10), c12_golden),
    ];
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        let start = Instant::now();
        let result = std::panic::catch_unwind(run)
            .unwrap_or_else(|_| Err("panicked".to_string()));
        let took = start.elapsed();
        let result = match result {
            Ok(detail) if took > budget => Err(format!("{detail}; over budget")),
            other => other,
        };
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!(
            "{tag} criterion {id:>2} {name}: {detail} ({} ms, budget {} ms)",
            took.as_millis(),
            budget.as_millis()
        );
        failed += usize::from(result.is_err());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all 12 criteria passed");
}

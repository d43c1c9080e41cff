use std::fmt::Write;

use tesim_core::analysis::{
    band_energy_ratio, detect_pulses, fft_spectrum, measure_duty_and_freq, summarize,
    DetectOptions,
};
use tesim_core::trace::{Channel, Trace};

pub const DEFAULT_BAND_HZ: f64 = 300.0;
const MAX_LISTED_INTERVALS: usize = 50;

pub struct Options {
    pub fft: bool,
    pub report: bool,
    pub band_hz: f64,
    pub channel: Channel,
}

/// A run of non-compliant samples, `end` exclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub start: usize,
    pub end: usize,
    pub peak_v_body_v: f64,
}

pub fn saturated_intervals(trace: &Trace) -> Vec<Interval> {
    let mut out = Vec::new();
    let mut open: Option<Interval> = None;
    for (i, ok) in trace.compliant.iter().enumerate() {
        let v = trace.v_body_v[i].abs();
        match (&mut open, *ok) {
            (None, false) => {
                open = Some(Interval {
                    start: i,
                    end: i + 1,
                    peak_v_body_v: v,
                })
            }
            (Some(iv), false) => {
                iv.end = i + 1;
                iv.peak_v_body_v = iv.peak_v_body_v.max(v);
            }
            (Some(_), true) => out.extend(open.take()),
            (None, true) => {}
        }
    }
    out.extend(open);
    out
}

pub fn analyze(trace: &Trace, opts: &Options) -> Result<String, String> {
    let mut s = String::new();
    let fs = trace.sample_rate_hz;
    let _ = writeln!(
        s,
        "trace: {} samples at {} Hz ({:.6} s)",
        trace.len(),
        fs,
        trace.len() as f64 / fs
    );
    for (k, v) in &trace.meta {
        let _ = writeln!(s, "meta {k}: {v}");
    }

    let noise = trace.meta.get("mode").is_some_and(|m| m == "trns");
    if !noise {
        let detect = DetectOptions::default().on(opts.channel);
        let pulses = detect_pulses(trace, &detect);
        let _ = writeln!(
            s,
            "pulses: {} (threshold {} mA)",
            pulses.len(),
            detect.threshold_ma
        );
        match measure_duty_and_freq(&pulses) {
            Ok(m) => {
                let sum = summarize(pulses.len(), &m);
                let duty = m.iter().map(|x| x.duty_pct);
                let (lo, hi) = duty.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), d| {
                    (a.min(d), b.max(d))
                });
                let _ = writeln!(s, "median duty_pct: {:.3}", sum.median_duty_pct);
                let _ = writeln!(s, "median freq_Hz: {:.4}", sum.median_freq_hz);
                if opts.report {
                    let _ = writeln!(s, "duty_pct range: {lo:.3} to {hi:.3}");
                    let _ = writeln!(
                        s,
                        "freq_Hz range: {:.4} to {:.4}",
                        sum.min_freq_hz, sum.max_freq_hz
                    );
                    let amp: Vec<f64> = pulses.iter().map(|p| p.amplitude_ma).collect();
                    let peak = amp.iter().fold(0.0f64, |m, a| m.max(*a));
                    let _ = writeln!(s, "peak pulse amplitude_mA: {peak:.4}");
                }
            }
            Err(e) => {
                let _ = writeln!(s, "duty/frequency: not measured ({e})");
            }
        }
    }

    let intervals = saturated_intervals(trace);
    let bad: usize = intervals.iter().map(|i| i.end - i.start).sum();
    let _ = writeln!(
        s,
        "compliance: {} non-compliant samples in {} interval(s)",
        bad,
        intervals.len()
    );
    if opts.report {
        for iv in intervals.iter().take(MAX_LISTED_INTERVALS) {
            let _ = writeln!(
                s,
                "  saturated {:.6} s to {:.6} s, peak v_body {:.3} V",
                trace.time_s(iv.start),
                iv.end as f64 / fs,
                iv.peak_v_body_v
            );
        }
        if intervals.len() > MAX_LISTED_INTERVALS {
            let _ = writeln!(
                s,
                "  ... {} more",
                intervals.len() - MAX_LISTED_INTERVALS
            );
        }
    }

    if opts.fft || noise {
        let spec = fft_spectrum(trace, opts.channel).map_err(|e| e.to_string())?;
        let peak = spec.peak_bin();
        let _ = writeln!(
            s,
            "spectrum: {} bins of {:.4} Hz, peak at {:.3} Hz",
            spec.power.len(),
            spec.bin_width_hz,
            spec.frequency_hz(peak)
        );
        let band = opts.band_hz.min(spec.nyquist_hz());
        let ratio = band_energy_ratio(&spec, band).map_err(|e| e.to_string())?;
        let _ = writeln!(s, "band_energy(<= {} Hz): {:.4}", band, ratio);
        if band < opts.band_hz {
            let _ = writeln!(s, "note: band limited to the {band} Hz Nyquist frequency");
        }
    }
    Ok(s)
}

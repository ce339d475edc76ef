//! Frequency, spectrum, THD and quadrature measurements on simulated
//! waveforms.
//!
//! Fundamental-referenced quantities are taken by single-frequency DFT
//! projection over a span bounded by two upward zero crossings of the
//! reference channel. The span holds an integer number of measured periods,
//! so harmonics of the measured frequency fall exactly on the analysis grid
//! and a continuous-time Hann taper suppresses end effects of the sampling
//! grid.

use std::f64::consts::PI;
use std::io::Write;
use std::ops::Range;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;
use thiserror::Error;

use crate::transient::Waveform;

/// Cycles in the steady-state analysis window.
pub const WINDOW_CYCLES: usize = 20;
/// Upward crossings required before a window is searched for.
pub const MIN_CROSSINGS: usize = 40;
/// Allowed relative spread of cycle peaks in a settled window.
pub const SETTLE_TOLERANCE: f64 = 0.005;
/// Default highest harmonic in THD.
pub const DEFAULT_MAX_HARMONIC: usize = 9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasureError {
    #[error("no channel `{0}`")]
    NoChannel(String),
    #[error("too short: {found} upward zero crossings, need {needed}")]
    TooShort { found: usize, needed: usize },
    #[error("not settled: cycle peaks vary by {spread:.3e} (relative), limit {SETTLE_TOLERANCE}")]
    NotSettled { spread: f64 },
    #[error("fewer than 2 zero crossings in window")]
    FewCrossings,
    #[error("window of {0} samples is shorter than 64")]
    WindowTooShort(usize),
    #[error("n_fft = {0} must be a power of two at least the window length and 64")]
    BadFftSize(usize),
    #[error("degenerate amplitude in channel `{0}`")]
    DegenerateAmplitude(String),
    #[error("quadrature report needs exactly two channels, got {0}")]
    ChannelCount(usize),
}

/// Half-open sample index range.
pub type SampleWindow = Range<usize>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowFn {
    Rect,
    #[default]
    Hann,
}

fn channel<'a>(w: &'a Waveform, label: &str) -> Result<&'a [f64], MeasureError> {
    w.channel(label)
        .ok_or_else(|| MeasureError::NoChannel(label.to_string()))
}

/// Sample index of each upward crossing (the sample before it) and its
/// linearly interpolated time.
fn upward_crossings(w: &Waveform, x: &[f64], window: &SampleWindow) -> Vec<(usize, f64)> {
    let end = window.end.min(x.len());
    let start = window.start.min(end);
    (start..end.saturating_sub(1))
        .filter(|&i| x[i] < 0.0 && x[i + 1] >= 0.0)
        .map(|i| {
            let frac = -x[i] / (x[i + 1] - x[i]);
            (i, w.time(i) + frac * w.dt)
        })
        .collect()
}

/// Span of the last 20 full cycles, accepted when their positive peaks agree
/// to within 0.5 %.
pub fn steady_state_window(w: &Waveform, label: &str) -> Result<SampleWindow, MeasureError> {
    let x = channel(w, label)?;
    let crossings = upward_crossings(w, x, &(0..x.len()));
    if crossings.len() < MIN_CROSSINGS {
        return Err(MeasureError::TooShort {
            found: crossings.len(),
            needed: MIN_CROSSINGS,
        });
    }
    let last = &crossings[crossings.len() - WINDOW_CYCLES - 1..];
    let peaks: Vec<f64> = last
        .windows(2)
        .map(|pair| {
            x[pair[0].0 + 1..=pair[1].0]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let hi = peaks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = peaks.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = (hi - lo) / hi.abs();
    if !(spread < SETTLE_TOLERANCE) {
        return Err(MeasureError::NotSettled { spread });
    }
    // keep the bracketing samples of both end crossings
    Ok(last[0].0..last[WINDOW_CYCLES].0 + 2)
}

/// Reference span `(t_start, t_end, cycles)` from a channel's crossings.
fn reference_span(w: &Waveform, x: &[f64], window: &SampleWindow) -> Result<(f64, f64, usize), MeasureError> {
    let c = upward_crossings(w, x, window);
    if c.len() < 2 {
        return Err(MeasureError::FewCrossings);
    }
    Ok((c[0].1, c[c.len() - 1].1, c.len() - 1))
}

/// Mean period from interpolated upward zero crossings inside `window`.
pub fn estimate_frequency(w: &Waveform, label: &str, window: &SampleWindow) -> Result<f64, MeasureError> {
    let x = channel(w, label)?;
    let (ta, tb, cycles) = reference_span(w, x, window)?;
    Ok(cycles as f64 / (tb - ta))
}

/// Complex amplitude of `x` at `freq` over `[ta, tb]` with a Hann taper in
/// continuous time. For `x = A·cos(2πft + φ)` over whole cycles this returns
/// `A·e^{jφ}` with the time origin at `t = 0`.
fn project(w: &Waveform, x: &[f64], window: &SampleWindow, ta: f64, tb: f64, freq: f64) -> Complex64 {
    let span = tb - ta;
    let mut acc = Complex64::new(0.0, 0.0);
    let mut weight = 0.0;
    let end = window.end.min(x.len());
    for (i, &xi) in x.iter().enumerate().take(end).skip(window.start) {
        let t = w.time(i);
        if t < ta || t > tb {
            continue;
        }
        let taper = 0.5 * (1.0 - (2.0 * PI * (t - ta) / span).cos());
        let phase = -2.0 * PI * freq * t;
        acc += Complex64::from_polar(xi * taper, phase);
        weight += taper;
    }
    acc * (2.0 / weight)
}

/// One-sided amplitude spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub df: f64,
    /// Complex amplitudes, compensated for the window's coherent gain.
    pub bins: Vec<Complex64>,
    pub window: WindowFn,
    pub n_fft: usize,
}

impl Spectrum {
    pub fn frequency(&self, k: usize) -> f64 {
        k as f64 * self.df
    }

    /// Frequency of the largest non-DC bin.
    pub fn peak_frequency(&self) -> f64 {
        let k = (1..self.bins.len())
            .max_by(|&a, &b| self.bins[a].norm().total_cmp(&self.bins[b].norm()))
            .unwrap_or(0);
        self.frequency(k)
    }

    /// `f_hz,magnitude,phase_deg` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "f_hz,magnitude,phase_deg")?;
        for (k, b) in self.bins.iter().enumerate() {
            writeln!(
                out,
                "{:.12e},{:.12e},{:.9e}",
                self.frequency(k),
                b.norm(),
                b.arg().to_degrees()
            )?;
        }
        Ok(())
    }
}

/// Windowed, zero-padded one-sided FFT of `window`.
///
/// `n_fft` defaults to the next power of two at or above the window length
/// (minimum 64).
pub fn spectrum(
    w: &Waveform,
    label: &str,
    window: &SampleWindow,
    n_fft: Option<usize>,
    window_fn: WindowFn,
) -> Result<Spectrum, MeasureError> {
    let x = channel(w, label)?;
    let end = window.end.min(x.len());
    let samples = &x[window.start.min(end)..end];
    let len = samples.len();
    if len < 64 {
        return Err(MeasureError::WindowTooShort(len));
    }
    let n_fft = match n_fft {
        None => len.next_power_of_two(),
        Some(n) if n.is_power_of_two() && n >= len => n,
        Some(n) => return Err(MeasureError::BadFftSize(n)),
    };

    let taper: Vec<f64> = match window_fn {
        WindowFn::Rect => vec![1.0; len],
        WindowFn::Hann => (0..len)
            .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / len as f64).cos()))
            .collect(),
    };
    let gain: f64 = taper.iter().sum();
    let mut buf: Vec<Complex64> = samples
        .iter()
        .zip(&taper)
        .map(|(v, t)| Complex64::new(v * t, 0.0))
        .collect();
    buf.resize(n_fft, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n_fft).process(&mut buf);

    let half = n_fft / 2;
    let bins = buf[..=half]
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let scale = if k == 0 || k == half { 1.0 } else { 2.0 };
            b * (scale / gain)
        })
        .collect();
    Ok(Spectrum {
        df: 1.0 / (n_fft as f64 * w.dt),
        bins,
        window: window_fn,
        n_fft,
    })
}

/// Total harmonic distortion `√(Σ|H_k|²)/|H_1|` over harmonics
/// `2..=max_harmonic` below Nyquist, each taken at exactly `k·f1`.
pub fn thd(w: &Waveform, label: &str, window: &SampleWindow, max_harmonic: usize) -> Result<f64, MeasureError> {
    let x = channel(w, label)?;
    let (ta, tb, cycles) = reference_span(w, x, window)?;
    let f1 = cycles as f64 / (tb - ta);
    thd_at(w, x, label, window, (ta, tb), f1, max_harmonic)
}

fn thd_at(
    w: &Waveform,
    x: &[f64],
    label: &str,
    window: &SampleWindow,
    (ta, tb): (f64, f64),
    f1: f64,
    max_harmonic: usize,
) -> Result<f64, MeasureError> {
    let peak = x[window.start..window.end.min(x.len())]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let fundamental = project(w, x, window, ta, tb, f1).norm();
    if !(fundamental > 1e-12 * peak) || peak == 0.0 {
        return Err(MeasureError::DegenerateAmplitude(label.to_string()));
    }
    let nyquist = 0.5 / w.dt;
    let power: f64 = (2..=max_harmonic)
        .map(|k| k as f64 * f1)
        .take_while(|f| *f < nyquist)
        .map(|f| project(w, x, window, ta, tb, f).norm_sqr())
        .sum();
    Ok(power.sqrt() / fundamental)
}

/// Phase of `a` relative to `b` in degrees, wrapped to (−180, 180].
fn wrap_degrees(mut d: f64) -> f64 {
    d %= 360.0;
    if d > 180.0 {
        d -= 360.0;
    } else if d <= -180.0 {
        d += 360.0;
    }
    d
}

/// Phase difference `arg(A) − arg(B)` and ratio `|A|/|B|` at the shared
/// fundamental.
///
/// The fundamental pools the zero crossings of both channels and each channel
/// is projected over its own whole-cycle span, so swapping `a` and `b` negates
/// the phase and inverts the ratio exactly.
pub fn phase_and_ratio(
    w: &Waveform,
    label_a: &str,
    label_b: &str,
    window: &SampleWindow,
) -> Result<(f64, f64), MeasureError> {
    let xa = channel(w, label_a)?;
    let xb = channel(w, label_b)?;
    // a channel without crossings borrows the other's span and is then
    // rejected by the amplitude check below
    let (span_a, span_b) = match (reference_span(w, xa, window), reference_span(w, xb, window)) {
        (Ok(sa), Ok(sb)) => (sa, sb),
        (Ok(sa), Err(_)) => (sa, sa),
        (Err(_), Ok(sb)) => (sb, sb),
        (Err(e), Err(_)) => return Err(e),
    };
    let f1 = (span_a.2 + span_b.2) as f64 / ((span_a.1 - span_a.0) + (span_b.1 - span_b.0));
    let a = project(w, xa, window, span_a.0, span_a.1, f1);
    let b = project(w, xb, window, span_b.0, span_b.1, f1);
    let floor = |x: &[f64]| 1e-12 * x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(a.norm() > floor(xa)) {
        return Err(MeasureError::DegenerateAmplitude(label_a.to_string()));
    }
    if !(b.norm() > floor(xb)) {
        return Err(MeasureError::DegenerateAmplitude(label_b.to_string()));
    }
    let phase = wrap_degrees((a.arg() - b.arg()).to_degrees());
    Ok((phase, a.norm() / b.norm()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadratureReport {
    pub f_measured: f64,
    /// Channel A minus channel B at the fundamental.
    pub phase_diff_deg: f64,
    pub amp_ratio: f64,
    pub thd_a: f64,
    pub thd_b: f64,
    pub window_used: SampleWindow,
}

/// Full measurement of a two-channel record: window and frequency from the
/// second channel, phase and amplitude of the first relative to it.
pub fn quadrature_report(w: &Waveform) -> Result<QuadratureReport, MeasureError> {
    let [(label_a, xa), (label_b, xb)] = w.channels.as_slice() else {
        return Err(MeasureError::ChannelCount(w.channels.len()));
    };
    let window = steady_state_window(w, label_b)?;
    let f_measured = estimate_frequency(w, label_b, &window)?;
    let (phase_diff_deg, amp_ratio) = phase_and_ratio(w, label_a, label_b, &window)?;
    let thd_of = |label: &str, x: &[f64]| -> Result<f64, MeasureError> {
        let (ta, tb, _) = reference_span(w, x, &window)?;
        thd_at(w, x, label, &window, (ta, tb), f_measured, DEFAULT_MAX_HARMONIC)
    };
    Ok(QuadratureReport {
        f_measured,
        phase_diff_deg,
        amp_ratio,
        thd_a: thd_of(label_a, xa)?,
        thd_b: thd_of(label_b, xb)?,
        window_used: window,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth(dt: f64, n: usize, channels: &[(&str, &dyn Fn(f64) -> f64)]) -> Waveform {
        Waveform {
            t0: 0.0,
            dt,
            channels: channels
                .iter()
                .map(|(l, f)| (l.to_string(), (0..n).map(|i| f(i as f64 * dt)).collect()))
                .collect(),
        }
    }

    fn sine(f: f64) -> impl Fn(f64) -> f64 {
        move |t| (2.0 * PI * f * t).sin()
    }

    #[test]
    fn window_on_pure_sine() {
        let w = synth(1e-6, 100_000, &[("v", &sine(1e3))]);
        let win = steady_state_window(&w, "v").unwrap();
        let x = w.channel("v").unwrap();
        let c = upward_crossings(&w, x, &win);
        assert_eq!(c.len(), WINDOW_CYCLES + 1);
        assert!(win.end <= x.len());
        // the last 20 cycles of a 100-cycle record
        assert!(w.time(win.start) > 0.078);
    }

    #[test]
    fn growing_sine_is_not_settled() {
        let f = 1e3;
        let g = (1.1f64).ln() * f;
        let w = synth(
            1e-6,
            60_000,
            &[("v", &move |t: f64| (g * t).exp() * (2.0 * PI * f * t).sin())],
        );
        assert!(matches!(
            steady_state_window(&w, "v"),
            Err(MeasureError::NotSettled { .. })
        ));
    }

    #[test]
    fn short_record() {
        let w = synth(1e-6, 10_000, &[("v", &sine(1e3))]);
        assert!(matches!(
            steady_state_window(&w, "v"),
            Err(MeasureError::TooShort { found: 9, .. })
        ));
        let flat = synth(1e-6, 1000, &[("v", &|_| 0.0)]);
        assert_eq!(
            estimate_frequency(&flat, "v", &(0..1000)),
            Err(MeasureError::FewCrossings)
        );
        assert!(matches!(steady_state_window(&w, "w"), Err(MeasureError::NoChannel(_))));
    }

    #[test]
    fn frequency_of_synthetic_sines() {
        let w = synth(1e-6, 100_000, &[("v", &sine(1e3))]);
        let win = steady_state_window(&w, "v").unwrap();
        let f = estimate_frequency(&w, "v", &win).unwrap();
        assert!((f / 1e3 - 1.0).abs() < 1e-4, "{f}");

        let f0 = 7.9577e6;
        let dt = 1.0 / (1000.0 * f0);
        let w = synth(dt, 60_000, &[("v", &move |t| (2.0 * PI * f0 * t + 0.3).sin())]);
        let win = steady_state_window(&w, "v").unwrap();
        let f = estimate_frequency(&w, "v", &win).unwrap();
        assert!((f / f0 - 1.0).abs() < 5e-4, "{f}");
    }

    #[test]
    fn exact_bin_rect_spectrum() {
        let n = 1024;
        let dt = 1e-3;
        let k0 = 37.0;
        let w = synth(dt, n, &[("v", &move |t| (2.0 * PI * k0 / (n as f64 * dt) * t).sin())]);
        let s = spectrum(&w, "v", &(0..n), None, WindowFn::Rect).unwrap();
        assert_eq!(s.n_fft, 1024);
        assert_eq!(s.bins.len(), 513);
        assert!((s.bins[37].norm() - 1.0).abs() < 1e-9);
        for (k, b) in s.bins.iter().enumerate() {
            if k != 37 {
                assert!(b.norm() < 1e-9, "bin {k}: {}", b.norm());
            }
        }
        assert!((s.peak_frequency() - 37.0 / (n as f64 * dt)).abs() < 1e-9);
    }

    #[test]
    fn parseval_rect() {
        let n = 700;
        let w = synth(
            1e-3,
            n,
            &[("v", &|t: f64| (13.1 * t).sin() + 0.3 * (40.0 * t).cos() + 0.1)],
        );
        let s = spectrum(&w, "v", &(0..n), None, WindowFn::Rect).unwrap();
        assert_eq!(s.n_fft, 1024);
        let energy: f64 = w.channel("v").unwrap().iter().map(|v| v * v).sum();
        // undo one-sided amplitude scaling: |X_k| = a_k·L/2 inside, a_k·L at the ends
        let l = n as f64;
        let half = s.n_fft / 2;
        let full: f64 = s
            .bins
            .iter()
            .enumerate()
            .map(|(k, b)| {
                if k == 0 || k == half {
                    (b.norm() * l).powi(2)
                } else {
                    2.0 * (b.norm() * l / 2.0).powi(2)
                }
            })
            .sum();
        let parseval = full / s.n_fft as f64;
        assert!((parseval / energy - 1.0).abs() < 1e-9, "{parseval} vs {energy}");
    }

    #[test]
    fn spectrum_preconditions() {
        let w = synth(1e-3, 100, &[("v", &sine(10.0))]);
        assert_eq!(
            spectrum(&w, "v", &(0..50), None, WindowFn::Hann),
            Err(MeasureError::WindowTooShort(50))
        );
        assert_eq!(
            spectrum(&w, "v", &(0..100), Some(100), WindowFn::Hann),
            Err(MeasureError::BadFftSize(100))
        );
        assert_eq!(
            spectrum(&w, "v", &(0..100), Some(64), WindowFn::Hann),
            Err(MeasureError::BadFftSize(64))
        );
        assert_eq!(
            spectrum(&w, "v", &(0..100), Some(256), WindowFn::Hann).unwrap().n_fft,
            256
        );
    }

    #[test]
    fn thd_of_pure_sine() {
        let w = synth(
            1e-6,
            100_000,
            &[("v", &move |t| 0.7 * (2.0 * PI * 1e3 * t + 1.0).sin())],
        );
        let win = steady_state_window(&w, "v").unwrap();
        let d = thd(&w, "v", &win, 9).unwrap();
        assert!(d < 1e-6, "{d}");
    }

    #[test]
    fn thd_of_truncated_square() {
        let f = 1e3;
        let square = move |t: f64| {
            [1.0, 3.0, 5.0, 7.0, 9.0]
                .iter()
                .map(|k| (2.0 * PI * k * f * t).sin() / k)
                .sum::<f64>()
        };
        let w = synth(1e-6, 100_000, &[("v", &square)]);
        let win = steady_state_window(&w, "v").unwrap();
        let d = thd(&w, "v", &win, 9).unwrap();
        let want = (1.0f64 / 9.0 + 1.0 / 25.0 + 1.0 / 49.0 + 1.0 / 81.0).sqrt();
        assert!((d - want).abs() < 1e-3, "{d} vs {want}");
    }

    #[test]
    fn thd_ignores_harmonics_above_nyquist() {
        // 10 samples per period: harmonics 5 and up are at or above Nyquist
        let f = 1e3;
        let w = synth(
            1e-4,
            10_000,
            &[("v", &move |t| {
                (2.0 * PI * f * t).sin() + 0.1 * (2.0 * PI * 3.0 * f * t).sin()
            })],
        );
        let win = 0..10_000;
        let d = thd(&w, "v", &win, 9).unwrap();
        assert!((d - 0.1).abs() < 1e-3, "{d}");
    }

    #[test]
    fn cos_leads_sin() {
        let f = 1e3;
        let w = synth(
            1e-6,
            100_000,
            &[
                ("a", &move |t| (2.0 * PI * f * t).cos()),
                ("b", &move |t| (2.0 * PI * f * t).sin()),
            ],
        );
        let win = steady_state_window(&w, "b").unwrap();
        let (phase, ratio) = phase_and_ratio(&w, "a", "b", &win).unwrap();
        assert!((phase - 90.0).abs() < 1e-6, "{phase}");
        assert!((ratio - 1.0).abs() < 1e-6);
        let (phase, ratio) = phase_and_ratio(&w, "b", "b", &win).unwrap();
        assert_eq!((phase, ratio), (0.0, 1.0));
    }

    #[test]
    fn degenerate_channel() {
        let w = synth(1e-6, 20_000, &[("a", &|_| 0.0), ("b", &sine(1e3))]);
        assert_eq!(
            phase_and_ratio(&w, "a", "b", &(0..20_000)),
            Err(MeasureError::DegenerateAmplitude("a".into()))
        );
        assert!(matches!(thd(&w, "a", &(0..20_000), 9), Err(MeasureError::FewCrossings)));
    }

    #[test]
    fn report_on_synthetic_pair() {
        let f = 1e3;
        let w = synth(
            1e-6,
            100_000,
            &[
                ("a", &move |t| 0.5 * (2.0 * PI * f * t + PI / 2.0).sin()),
                ("b", &move |t| (2.0 * PI * f * t).sin()),
            ],
        );
        let r = quadrature_report(&w).unwrap();
        assert!((r.f_measured / f - 1.0).abs() < 1e-6);
        assert!((r.phase_diff_deg - 90.0).abs() < 1e-6);
        assert!((r.amp_ratio - 0.5).abs() < 1e-6);
        assert!(r.thd_a < 1e-6 && r.thd_b < 1e-6);

        let one = synth(1e-6, 100, &[("a", &sine(f))]);
        assert_eq!(quadrature_report(&one), Err(MeasureError::ChannelCount(1)));
    }

    #[test]
    fn wrapping() {
        assert_eq!(wrap_degrees(180.0), 180.0);
        assert_eq!(wrap_degrees(-180.0), 180.0);
        assert_eq!(wrap_degrees(270.0), -90.0);
        assert_eq!(wrap_degrees(-270.0), 90.0);
    }
}

//! Transient integration and waveform measurement on simulated records.

use std::sync::OnceLock;

use dvccosc::measure::{
    estimate_frequency, phase_and_ratio, quadrature_report, spectrum, steady_state_window, thd, DEFAULT_MAX_HARMONIC,
};
use dvccosc::mna::char_poly;
use dvccosc::netlist::Probe;
use dvccosc::theory::fo_ideal;
use dvccosc::transient::{default_sim_config, derive_state_space, simulate};
use dvccosc::{DvccParams, OscParams, SatModel, SimConfig, Waveform, WindowFn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn reference_design(epsilon: f64, dvcc: DvccParams) -> OscParams {
    OscParams::new(2e3 * (1.0 + epsilon), 1e3, 10e-12, 20e-12, dvcc)
}

fn run_default(p: &OscParams) -> Waveform {
    let ss = derive_state_space(&p.to_netlist()).unwrap();
    simulate(&ss, &default_sim_config(&ss, fo_ideal(p))).unwrap()
}

/// ε = 0.02, tanh at 2.5 V, T/1000, 200 periods.
fn startup_run() -> &'static Waveform {
    static W: OnceLock<Waveform> = OnceLock::new();
    W.get_or_init(|| run_default(&reference_design(0.02, DvccParams::ideal())))
}

#[test]
fn jacobian_polynomial_matches_mna() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..100 {
        let p = OscParams::new(
            rng.gen_range(1e2..1e5),
            rng.gen_range(1e2..1e5),
            rng.gen_range(1e-12..1e-9),
            rng.gen_range(1e-12..1e-9),
            DvccParams::with_gains(
                rng.gen_range(0.9..1.0),
                rng.gen_range(0.9..1.0),
                rng.gen_range(0.9..1.0),
                rng.gen_range(0.9..1.0),
            ),
        );
        let nl = p.to_netlist();
        let j = derive_state_space(&nl).unwrap().jacobian();
        let trace = j[0] + j[3];
        let det = j[0] * j[3] - j[1] * j[2];
        let poly = char_poly(&nl).unwrap();
        let scale = j[0].abs() + j[3].abs();
        assert!((poly.coeffs[0] - det).abs() < 1e-9 * det.abs());
        assert!((poly.coeffs[1] + trace).abs() < 1e-9 * scale);
    }
}

#[test]
fn saturation_bounds_the_x_output() {
    for model in [SatModel::Tanh, SatModel::Hard] {
        let p = reference_design(0.08, DvccParams::ideal().with_saturation(model, 1.0));
        let w = run_default(&p);
        let v01 = w.channel("V01").unwrap();
        assert!(v01.iter().all(|v| v.abs() <= 1.0 + 1e-12), "{model}");
        // and the bound is actually reached
        assert!(v01.iter().fold(0.0f64, |m, v| m.max(v.abs())) > 0.5);
    }
}

#[test]
fn simulation_is_deterministic() {
    let p = reference_design(0.02, DvccParams::ideal());
    let ss = derive_state_space(&p.to_netlist()).unwrap();
    let mut cfg = default_sim_config(&ss, fo_ideal(&p));
    cfg.t_end /= 10.0;
    let a = simulate(&ss, &cfg).unwrap();
    let b = simulate(&ss, &cfg).unwrap();
    let bits = |w: &Waveform| -> Vec<u64> {
        w.channels
            .iter()
            .flat_map(|(_, v)| v.iter().map(|x| x.to_bits()))
            .collect()
    };
    assert_eq!(bits(&a), bits(&b));
    let (mut ca, mut cb) = (Vec::new(), Vec::new());
    a.write_csv(&mut ca).unwrap();
    b.write_csv(&mut cb).unwrap();
    assert_eq!(ca, cb);
}

#[test]
fn window_falls_in_final_quarter() {
    let w = startup_run();
    let win = steady_state_window(w, "V02").unwrap();
    assert!(win.start >= 3 * w.len() / 4, "{win:?} of {}", w.len());
    assert!(win.end <= w.len());
}

#[test]
fn startup_design_reports_quadrature() {
    let p = reference_design(0.02, DvccParams::ideal());
    let r = quadrature_report(startup_run()).unwrap();
    let f_expected = fo_ideal(&p);
    assert!(
        (r.f_measured / f_expected - 1.0).abs() < 0.01,
        "{} vs {f_expected}",
        r.f_measured
    );
    assert!((r.phase_diff_deg - 90.0).abs() < 1.0, "{}", r.phase_diff_deg);
    assert!((r.amp_ratio - 1.0).abs() < 0.02, "{}", r.amp_ratio);
    assert!(r.thd_a < 0.05 && r.thd_b < 0.05, "{} {}", r.thd_a, r.thd_b);
}

#[test]
fn frequency_stable_when_step_halves() {
    let p = reference_design(0.02, DvccParams::ideal());
    let ss = derive_state_space(&p.to_netlist()).unwrap();
    let cfg = default_sim_config(&ss, fo_ideal(&p));
    let fine = SimConfig {
        dt: cfg.dt / 2.0,
        ..cfg.clone()
    };
    let f = |w: &Waveform| {
        let win = steady_state_window(w, "V02").unwrap();
        estimate_frequency(w, "V02", &win).unwrap()
    };
    let coarse_f = f(startup_run());
    let fine_f = f(&simulate(&ss, &fine).unwrap());
    assert!((coarse_f / fine_f - 1.0).abs() < 5e-4, "{coarse_f} vs {fine_f}");
}

#[test]
fn decaying_design_envelope_shrinks() {
    let mut p = reference_design(0.0, DvccParams::ideal());
    p.r1 *= 0.9;
    let ss = derive_state_space(&p.to_netlist()).unwrap();
    let mut cfg = default_sim_config(&ss, fo_ideal(&p));
    cfg.t_end = 50.0 / fo_ideal(&p);
    let w = simulate(&ss, &cfg).unwrap();
    let per_cycle = (1.0 / (fo_ideal(&p) * cfg.dt)).round() as usize;
    let peaks: Vec<f64> = w
        .channel("V02")
        .unwrap()
        .chunks_exact(per_cycle)
        .map(|c| c.iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .collect();
    assert!(peaks.len() >= 40);
    // skip the first cycle where the kick is still redistributing
    for pair in peaks[1..].windows(2) {
        assert!(pair[1] < pair[0], "{pair:?}");
    }
}

#[test]
fn linear_marginal_run_with_tracking_gains() {
    let fwd = 0.97505;
    let dvcc = DvccParams::with_gains((1.0 + fwd) / 2.0, fwd, 1.0, 1.0).with_saturation(SatModel::None, 2.5);
    let p = reference_design(0.0, dvcc);
    let w = run_default(&p);
    let r = quadrature_report(&w).unwrap();
    assert!((r.f_measured / 7.86e6 - 1.0).abs() < 0.01, "{}", r.f_measured);
}

/// Quadratic form conserved by a trace-free linear system `ẋ = Ax`:
/// with `J = [[0, −1], [1, 0]]`, `JA` is symmetric and `Aᵀ(JA) + (JA)A = 0`.
fn invariant(a: &[f64], x: [f64; 2]) -> f64 {
    let m = [-a[2], a[0], a[0], a[1]];
    m[0] * x[0] * x[0] + 2.0 * m[1] * x[0] * x[1] + m[3] * x[1] * x[1]
}

/// Relative amplitude change over ten cycles of the marginal linear design.
fn ten_cycle_drift(steps_per_period: f64) -> f64 {
    let p = reference_design(0.0, DvccParams::ideal().with_saturation(SatModel::None, 2.5));
    let mut nl = p.to_netlist();
    nl.probes.push(Probe {
        label: "VN1".into(),
        node: "n1".into(),
    });
    let ss = derive_state_space(&nl).unwrap();
    let a = ss.jacobian();
    assert!((a[0] + a[3]).abs() < 1e-9 * a[0].abs());
    let f0 = fo_ideal(&p);
    let cfg = SimConfig {
        t_end: 10.0 / f0,
        dt: 1.0 / (steps_per_period * f0),
        initial_state: vec![0.0, 1e-3],
        record_stride: 1,
    };
    let w = simulate(&ss, &cfg).unwrap();
    let (v1, v2) = (w.channel("VN1").unwrap(), w.channel("V02").unwrap());
    let n = w.len() - 1;
    let q0 = invariant(&a, [v1[0], v2[0]]);
    let q1 = invariant(&a, [v1[n], v2[n]]);
    (q1 / q0).sqrt() - 1.0
}

#[test]
fn rk4_drift_small_and_fourth_order() {
    let d1000 = ten_cycle_drift(1000.0);
    assert!(d1000.abs() < 1e-3, "{d1000}");
    for base in [100.0, 200.0, 1000.0] {
        let ratio = ten_cycle_drift(base) / ten_cycle_drift(2.0 * base);
        assert!(ratio >= 12.0, "T/{base}: ratio {ratio}");
    }
}

#[test]
fn spectrum_peak_agrees_with_zero_crossings() {
    let w = startup_run();
    let win = steady_state_window(w, "V02").unwrap();
    let f = estimate_frequency(w, "V02", &win).unwrap();
    for label in ["V01", "V02"] {
        let s = spectrum(w, label, &win, None, WindowFn::Hann).unwrap();
        assert!(
            (s.peak_frequency() - f).abs() <= s.df,
            "{label}: {} vs {f}",
            s.peak_frequency()
        );
    }
}

#[test]
fn phase_antisymmetric_and_ratio_reciprocal() {
    let w = startup_run();
    let win = steady_state_window(w, "V02").unwrap();
    let (p_ab, r_ab) = phase_and_ratio(w, "V01", "V02", &win).unwrap();
    let (p_ba, r_ba) = phase_and_ratio(w, "V02", "V01", &win).unwrap();
    assert!((p_ab + p_ba).abs() <= 1e-9 * p_ab.abs());
    assert!((r_ab * r_ba - 1.0).abs() <= 1e-9);
}

#[test]
fn thd_invariant_under_amplitude_scaling() {
    let w = startup_run();
    let win = steady_state_window(w, "V02").unwrap();
    for k in [1e-3, 0.37, 12.5] {
        let scaled = Waveform {
            channels: w
                .channels
                .iter()
                .map(|(l, v)| (l.clone(), v.iter().map(|x| x * k).collect()))
                .collect(),
            ..w.clone()
        };
        for label in ["V01", "V02"] {
            let a = thd(w, label, &win, DEFAULT_MAX_HARMONIC).unwrap();
            let b = thd(&scaled, label, &win, DEFAULT_MAX_HARMONIC).unwrap();
            assert!((a / b - 1.0).abs() < 1e-9, "{label} ×{k}: {a} vs {b}");
        }
    }
}

#[test]
fn phase_invariant_under_whole_period_shift() {
    let w = startup_run();
    let win = steady_state_window(w, "V02").unwrap();
    let f = estimate_frequency(w, "V02", &win).unwrap();
    let (p0, _) = phase_and_ratio(w, "V01", "V02", &win).unwrap();
    for periods in [1.0, 3.0, 10.0] {
        let shift = (periods / (f * w.dt)).round() as usize;
        let moved = win.start - shift..win.end - shift;
        let (p, _) = phase_and_ratio(w, "V01", "V02", &moved).unwrap();
        assert!((p - p0).abs() < 0.1, "{periods} periods: {p} vs {p0}");
    }
}

#[test]
fn thd_falls_as_startup_margin_shrinks() {
    let thd_at = |eps: f64| {
        let w = if eps == 0.02 {
            startup_run().clone()
        } else {
            run_default(&reference_design(eps, DvccParams::ideal()))
        };
        let r = quadrature_report(&w).unwrap();
        (r.thd_a, r.thd_b)
    };
    let values: Vec<(f64, f64)> = [0.08, 0.04, 0.02].into_iter().map(thd_at).collect();
    for pair in values.windows(2) {
        assert!(pair[1].0 < pair[0].0 && pair[1].1 < pair[0].1, "{values:?}");
    }
}

use std::fs;
use std::path::{Path, PathBuf};

use dvccosc::measure::{quadrature_report, spectrum};
use dvccosc::mna::{analyze as classify, char_poly};
use dvccosc::netlist::{parse, render_with_title};
use dvccosc::theory::{design_equal_amplitude, fo_nonideal, monte_carlo_f0, sensitivities_analytic, sensitivity_fd};
use dvccosc::theory::{Param, TheoryError};
use dvccosc::transient::{default_sim_config, derive_state_space, simulate as integrate};
use dvccosc::{Netlist, OscParams, WindowFn};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::report::{
    Analysis, Circuit, CommandEcho, Design, Inputs, MonteCarlo, OutputFile, Quadrature, RunReport, Sensitivity,
    SensitivityRow, Simulation, Theory,
};
use crate::{Failure, OUT_DIR_ENV};

fn analysis_err(e: impl std::fmt::Display) -> Failure {
    Failure::Analysis(e.to_string())
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from("."), PathBuf::from)
}

fn default_path(file: String) -> PathBuf {
    out_dir().join(file)
}

fn write_file(path: &Path, write: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<(), Failure> {
    let mut buf = Vec::new();
    write(&mut buf).expect("writing to memory");
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::Input(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, buf).map_err(|e| Failure::Input(format!("cannot write {}: {e}", path.display())))
}

struct Loaded {
    netlist: Netlist,
    report: RunReport,
}

/// Reads and parses a netlist and starts a report restating it.
fn load(name: &'static str, argv: Vec<String>, path: &Path) -> Result<Loaded, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))?;
    let text =
        String::from_utf8(bytes.clone()).map_err(|_| Failure::Input(format!("{}: not valid UTF-8", path.display())))?;
    let netlist = parse(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    let inputs = Inputs {
        netlist_path: Some(path.display().to_string()),
        netlist_text: Some(text),
        ..Inputs::default()
    };
    let report = RunReport::new(CommandEcho { name, argv }, sha256_hex(&bytes), inputs);
    Ok(Loaded { netlist, report })
}

/// Fills the circuit and theory sections when the netlist is the canonical
/// oscillator.
fn add_theory(report: &mut RunReport, netlist: &Netlist) -> Option<OscParams> {
    let p = OscParams::from_netlist(netlist).ok()?;
    report.circuit = Some(Circuit::from(&p));
    report.theory = Some(Theory::from(&p));
    Some(p)
}

fn add_analysis(report: &mut RunReport, netlist: &Netlist) -> Result<(), Failure> {
    let poly = char_poly(netlist).map_err(analysis_err)?;
    let a = classify(&poly).map_err(analysis_err)?;
    report.analysis = Some(Analysis::new(&poly, &a));
    Ok(())
}

fn canonical(netlist: &Netlist) -> Result<OscParams, Failure> {
    OscParams::from_netlist(netlist).map_err(analysis_err)
}

pub fn analyze(argv: Vec<String>, path: &Path) -> Result<RunReport, Failure> {
    let Loaded { netlist, mut report } = load("analyze", argv, path)?;
    add_theory(&mut report, &netlist);
    add_analysis(&mut report, &netlist)?;
    Ok(report)
}

pub fn design(argv: Vec<String>, f0: f64, r2: f64, epsilon: f64, out: Option<PathBuf>) -> Result<RunReport, Failure> {
    let d = design_equal_amplitude(f0, r2, epsilon).map_err(|e| Failure::Input(e.to_string()))?;
    let out = out.unwrap_or_else(|| default_path("design.cir".into()));
    let mut inputs = Inputs::default();
    inputs.flags.insert("f0_hz", json!(f0));
    inputs.flags.insert("r2_ohm", json!(r2));
    inputs.flags.insert("epsilon", json!(epsilon));
    inputs.flags.insert("out_path", json!(out.display().to_string()));
    let digest = sha256_hex(
        serde_json::to_string(&inputs.flags)
            .expect("flags serialize")
            .as_bytes(),
    );
    let mut report = RunReport::new(CommandEcho { name: "design", argv }, digest, inputs);

    let netlist = d.params.to_netlist();
    let title = format!("equal-amplitude quadrature oscillator, f0 = {f0} Hz, epsilon = {epsilon}");
    let text = render_with_title(&netlist, &title);
    write_file(&out, |b| {
        b.extend_from_slice(text.as_bytes());
        Ok(())
    })?;
    add_theory(&mut report, &netlist);
    report.design = Some(Design::from(&d));
    add_analysis(&mut report, &netlist)?;
    report.outputs.push(OutputFile {
        kind: "netlist",
        path: out.display().to_string(),
    });
    Ok(report)
}

pub struct SimulateOptions {
    pub netlist: PathBuf,
    pub t_end: Option<f64>,
    pub dt: Option<f64>,
    pub stride: usize,
    pub csv: Option<PathBuf>,
    pub spectrum_csv: Option<PathBuf>,
    pub spectrum_channel: Option<String>,
}

pub fn simulate(argv: Vec<String>, o: SimulateOptions) -> Result<RunReport, Failure> {
    let Loaded { netlist, mut report } = load("simulate", argv, &o.netlist)?;
    add_theory(&mut report, &netlist);
    let ss = derive_state_space(&netlist).map_err(analysis_err)?;

    // the small-signal frequency sets the default step and length
    let f_est = match add_analysis(&mut report, &netlist) {
        Ok(()) => Some(report.analysis.as_ref().map_or(0.0, |a| a.f0_hz)),
        Err(e) if o.t_end.is_none() || o.dt.is_none() => {
            let Failure::Analysis(m) = e else { return Err(e) };
            return Err(Failure::Analysis(format!(
                "{m}; pass --t-end and --dt to simulate anyway"
            )));
        }
        Err(_) => None,
    };
    let mut cfg = default_sim_config(&ss, f_est.unwrap_or(1.0));
    if let Some(t) = o.t_end {
        cfg.t_end = t;
    }
    if let Some(dt) = o.dt {
        cfg.dt = dt;
    }
    cfg.record_stride = o.stride;
    cfg.validate(&ss).map_err(|e| Failure::Input(e.to_string()))?;

    let stem = o
        .netlist
        .file_stem()
        .map_or_else(|| "netlist".to_string(), |s| s.to_string_lossy().into_owned());
    let csv = o.csv.unwrap_or_else(|| default_path(format!("{stem}.waveform.csv")));
    let flags = &mut report.inputs.flags;
    flags.insert("t_end_s", json!(cfg.t_end));
    flags.insert("dt_s", json!(cfg.dt));
    flags.insert("record_stride", json!(cfg.record_stride));
    flags.insert("csv_path", json!(csv.display().to_string()));
    if let Some(p) = &o.spectrum_csv {
        flags.insert("spectrum_csv_path", json!(p.display().to_string()));
    }
    if let Some(c) = &o.spectrum_channel {
        flags.insert("spectrum_channel", json!(c));
    }

    let w = integrate(&ss, &cfg).map_err(analysis_err)?;
    write_file(&csv, |b| w.write_csv(b))?;
    report.outputs.push(OutputFile {
        kind: "waveform_csv",
        path: csv.display().to_string(),
    });
    report.simulation = Some(Simulation::new(&cfg, ss.state_names.clone(), &w));

    let q = quadrature_report(&w).map_err(|e| Failure::Analysis(format!("measurement failed: {e}")))?;
    report.quadrature = Some(Quadrature::new(&w, &q));

    if let Some(path) = o.spectrum_csv {
        let label = o.spectrum_channel.unwrap_or_else(|| w.channels[0].0.clone());
        let s = spectrum(&w, &label, &q.window_used, None, WindowFn::Hann)
            .map_err(|e| Failure::Input(format!("spectrum: {e}")))?;
        write_file(&path, |b| s.write_csv(b))?;
        report.outputs.push(OutputFile {
            kind: "spectrum_csv",
            path: path.display().to_string(),
        });
    }
    Ok(report)
}

pub fn sensitivity(argv: Vec<String>, path: &Path, step: f64) -> Result<RunReport, Failure> {
    let Loaded { netlist, mut report } = load("sensitivity", argv, path)?;
    report.inputs.flags.insert("relative_step", json!(step));
    let p = canonical(&netlist)?;
    add_theory(&mut report, &netlist);
    add_analysis(&mut report, &netlist)?;

    let analytic = sensitivities_analytic();
    let mut rows = Vec::new();
    for param in Param::ALL {
        let fd = sensitivity_fd(&p, param, step).map_err(|e| match e {
            TheoryError::StepOutOfRange(_) => Failure::Input(e.to_string()),
            _ => analysis_err(e),
        })?;
        let a = analytic.get(param).unwrap_or(0.0);
        rows.push(SensitivityRow {
            param: param.as_str(),
            analytic: a,
            finite_difference: fd,
            abs_error: (fd - a).abs(),
        });
    }
    eprintln!("{:<8} {:>10} {:>14}", "param", "analytic", "finite diff");
    for r in &rows {
        eprintln!("{:<8} {:>10.4} {:>14.9}", r.param, r.analytic, r.finite_difference);
    }
    report.sensitivity = Some(Sensitivity {
        relative_step: step,
        rows,
    });
    Ok(report)
}

pub fn montecarlo(
    argv: Vec<String>,
    path: &Path,
    tol: f64,
    n: usize,
    seed: u64,
    csv: Option<PathBuf>,
) -> Result<RunReport, Failure> {
    let Loaded { netlist, mut report } = load("montecarlo", argv, path)?;
    let flags = &mut report.inputs.flags;
    flags.insert("tol_fraction", json!(tol));
    flags.insert("n_draws", json!(n));
    flags.insert("seed", json!(seed));
    if let Some(c) = &csv {
        flags.insert("csv_path", Value::String(c.display().to_string()));
    }
    let p = canonical(&netlist)?;
    let mc = monte_carlo_f0(&p, tol, n, seed).map_err(|e| match e {
        TheoryError::ToleranceOutOfRange(_) | TheoryError::NoDraws => Failure::Input(e.to_string()),
        _ => analysis_err(e),
    })?;
    add_theory(&mut report, &netlist);
    add_analysis(&mut report, &netlist)?;
    report.monte_carlo = Some(MonteCarlo::new(tol, seed, fo_nonideal(&p), &mc.summary));
    if let Some(path) = csv {
        write_file(&path, |b| mc.write_csv(b))?;
        report.outputs.push(OutputFile {
            kind: "monte_carlo_csv",
            path: path.display().to_string(),
        });
    }
    Ok(report)
}

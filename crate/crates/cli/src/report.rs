//! JSON run report. Every numeric key names its unit; dimensionless
//! quantities (gains, ratios, fractions, sensitivities) carry none.

use std::collections::BTreeMap;

use dvccosc::mna::{CharPoly, OscAnalysis};
use dvccosc::theory::{
    co_coeffs_ideal, co_coeffs_nonideal, fo_ideal, fo_nonideal, quadrature_relation, sensitivities_analytic,
    DesignResult, McSummary, Param,
};
use dvccosc::{Growth, OscParams, QuadratureReport, SimConfig, Waveform};
use serde::Serialize;
use serde_json::Value;

pub const SCHEMA_VERSION: &str = "1.0.0";

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub schema_version: &'static str,
    pub tool: Tool,
    pub command: CommandEcho,
    pub input_digest_sha256: String,
    pub inputs: Inputs,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub circuit: Option<Circuit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analysis: Option<Analysis>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theory: Option<Theory>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub design: Option<Design>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulation: Option<Simulation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quadrature: Option<Quadrature>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sensitivity: Option<Sensitivity>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monte_carlo: Option<MonteCarlo>,
    pub outputs: Vec<OutputFile>,
}

impl RunReport {
    pub fn new(command: CommandEcho, input_digest_sha256: String, inputs: Inputs) -> Self {
        RunReport {
            schema_version: SCHEMA_VERSION,
            tool: Tool {
                name: "dvccosc",
                version: env!("CARGO_PKG_VERSION"),
            },
            command,
            input_digest_sha256,
            inputs,
            circuit: None,
            analysis: None,
            theory: None,
            design: None,
            simulation: None,
            quadrature: None,
            sensitivity: None,
            monte_carlo: None,
            outputs: Vec::new(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Tool {
    pub name: &'static str,
    pub version: &'static str,
}

#[derive(Debug, Serialize)]
pub struct CommandEcho {
    pub name: &'static str,
    pub argv: Vec<String>,
}

/// Everything the run depended on: the netlist as read and the flag values
/// after defaults were applied.
#[derive(Debug, Default, Serialize)]
pub struct Inputs {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub netlist_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub netlist_text: Option<String>,
    pub flags: BTreeMap<&'static str, Value>,
}

#[derive(Debug, Serialize)]
pub struct Circuit {
    pub r1_ohm: f64,
    pub r2_ohm: f64,
    pub c1_f: f64,
    pub c2_f: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub v_sat_v: f64,
    pub sat_model: &'static str,
}

impl From<&OscParams> for Circuit {
    fn from(p: &OscParams) -> Self {
        Circuit {
            r1_ohm: p.r1,
            r2_ohm: p.r2,
            c1_f: p.c1,
            c2_f: p.c2,
            beta1: p.dvcc.beta1,
            beta2: p.dvcc.beta2,
            alpha1: p.dvcc.alpha1,
            alpha2: p.dvcc.alpha2,
            v_sat_v: p.dvcc.v_sat,
            sat_model: p.dvcc.sat_model.as_str(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Analysis {
    /// Monic, ascending powers of s; coefficient k has unit (rad/s)^(n−k).
    pub char_poly_coeffs: Vec<f64>,
    pub omega0_rad_per_s: f64,
    pub f0_hz: f64,
    pub a1_rad_per_s: f64,
    pub oscillates: bool,
    pub growth: Growth,
}

impl Analysis {
    pub fn new(poly: &CharPoly, a: &OscAnalysis) -> Self {
        Analysis {
            char_poly_coeffs: poly.coeffs.clone(),
            omega0_rad_per_s: a.omega0,
            f0_hz: a.f0,
            a1_rad_per_s: a.a1,
            oscillates: a.oscillates,
            growth: a.growth,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Coefficients {
    pub a1_rad_per_s: f64,
    pub a0_rad2_per_s2: f64,
}

#[derive(Debug, Serialize)]
pub struct Theory {
    pub fo_ideal_hz: f64,
    pub fo_nonideal_hz: f64,
    pub co_ideal: Coefficients,
    pub co_nonideal: Coefficients,
    pub quadrature_phase_deg: f64,
    pub quadrature_amp_ratio: f64,
    pub sensitivities: BTreeMap<&'static str, f64>,
}

impl From<&OscParams> for Theory {
    fn from(p: &OscParams) -> Self {
        let coeffs = |(a1, a0): (f64, f64)| Coefficients {
            a1_rad_per_s: a1,
            a0_rad2_per_s2: a0,
        };
        let (phase, ratio) = quadrature_relation(p);
        let analytic = sensitivities_analytic();
        Theory {
            fo_ideal_hz: fo_ideal(p),
            fo_nonideal_hz: fo_nonideal(p),
            co_ideal: coeffs(co_coeffs_ideal(p)),
            co_nonideal: coeffs(co_coeffs_nonideal(p)),
            quadrature_phase_deg: phase,
            quadrature_amp_ratio: ratio,
            sensitivities: Param::ALL
                .iter()
                .map(|&q| (q.as_str(), analytic.get(q).unwrap_or(0.0)))
                .collect(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Design {
    pub f0_target_hz: f64,
    pub f0_exact_hz: f64,
    pub epsilon: f64,
}

impl From<&DesignResult> for Design {
    fn from(d: &DesignResult) -> Self {
        Design {
            f0_target_hz: d.f0_target,
            f0_exact_hz: d.f0_exact,
            epsilon: d.epsilon,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Simulation {
    pub method: &'static str,
    pub t_end_s: f64,
    pub dt_s: f64,
    pub steps: usize,
    pub record_stride: usize,
    pub samples: usize,
    pub state_names: Vec<String>,
    pub initial_state_v: Vec<f64>,
    pub channels: Vec<String>,
}

impl Simulation {
    pub fn new(cfg: &SimConfig, state_names: Vec<String>, w: &Waveform) -> Self {
        Simulation {
            method: "rk4",
            t_end_s: cfg.t_end,
            dt_s: cfg.dt,
            steps: cfg.steps(),
            record_stride: cfg.record_stride,
            samples: w.len(),
            state_names,
            initial_state_v: cfg.initial_state.clone(),
            channels: w.channels.iter().map(|(l, _)| l.clone()).collect(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Quadrature {
    pub channel_a: String,
    pub channel_b: String,
    pub f_measured_hz: f64,
    pub phase_diff_deg: f64,
    pub amp_ratio: f64,
    pub thd_a_fraction: f64,
    pub thd_b_fraction: f64,
    pub window_start_index: usize,
    pub window_end_index: usize,
    pub window_start_s: f64,
    pub window_end_s: f64,
}

impl Quadrature {
    pub fn new(w: &Waveform, r: &QuadratureReport) -> Self {
        Quadrature {
            channel_a: w.channels[0].0.clone(),
            channel_b: w.channels[1].0.clone(),
            f_measured_hz: r.f_measured,
            phase_diff_deg: r.phase_diff_deg,
            amp_ratio: r.amp_ratio,
            thd_a_fraction: r.thd_a,
            thd_b_fraction: r.thd_b,
            window_start_index: r.window_used.start,
            window_end_index: r.window_used.end,
            window_start_s: w.time(r.window_used.start),
            window_end_s: w.time(r.window_used.end - 1),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct SensitivityRow {
    pub param: &'static str,
    pub analytic: f64,
    pub finite_difference: f64,
    pub abs_error: f64,
}

#[derive(Debug, Serialize)]
pub struct Sensitivity {
    pub relative_step: f64,
    pub rows: Vec<SensitivityRow>,
}

#[derive(Debug, Serialize)]
pub struct MonteCarlo {
    pub tol_fraction: f64,
    pub n_draws: usize,
    pub seed: u64,
    pub f0_nominal_hz: f64,
    pub f0_mean_hz: f64,
    pub f0_std_hz: f64,
    pub f0_min_hz: f64,
    pub f0_max_hz: f64,
}

impl MonteCarlo {
    pub fn new(tol: f64, seed: u64, nominal: f64, s: &McSummary) -> Self {
        MonteCarlo {
            tol_fraction: tol,
            n_draws: s.n,
            seed,
            f0_nominal_hz: nominal,
            f0_mean_hz: s.mean,
            f0_std_hz: s.std,
            f0_min_hz: s.min,
            f0_max_hz: s.max,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct OutputFile {
    pub kind: &'static str,
    pub path: String,
}

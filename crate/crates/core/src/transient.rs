//! Explicit state-space derivation and fixed-step RK4 transient simulation.
//!
//! States are grounded-capacitor node voltages. Every other node must be the
//! X terminal of a conveyor loaded only by grounded resistors, so its voltage
//! `V_X = sat(β1·V_Y1 − β2·V_Y2)` is an explicit function of the state and
//! the X current is `I_X = −G_X·V_X`. For a capacitor node `k`:
//!
//! ```text
//! C_k·dV_k/dt = −G_k·V_k + Σ α·G_X·V_X     (over Z outputs landing on k)
//! ```

use std::collections::HashMap;
use std::io::Write;

use thiserror::Error;

use crate::dvcc::DvccParams;
use crate::netlist::{Netlist, GROUND};

/// Amplitude of the default startup kick.
pub const DEFAULT_KICK: f64 = 1e-3;
/// Samples per period of the default step.
pub const DEFAULT_STEPS_PER_PERIOD: f64 = 1000.0;
/// Default horizon in periods.
pub const DEFAULT_PERIODS: f64 = 200.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransientError {
    #[error("implicit node `{0}`: its voltage is not an explicit function of the capacitor voltages")]
    ImplicitNode(String),
    #[error("unsupported topology: {0}")]
    UnsupportedTopology(String),
    #[error("invalid simulation config: {0}")]
    BadConfig(String),
    #[error("non-finite state at t = {time:e} s: {state:?}")]
    NonFinite { time: f64, state: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Source {
    Ground,
    State(usize),
}

impl Source {
    fn value(self, state: &[f64]) -> f64 {
        match self {
            Source::Ground => 0.0,
            Source::State(i) => state[i],
        }
    }
}

/// A conveyor whose X voltage is driven by state voltages.
#[derive(Debug, Clone, PartialEq)]
struct XDriver {
    node: String,
    y1: Source,
    y2: Source,
    params: DvccParams,
    /// Total grounded conductance on the X node.
    g_x: f64,
    /// `(state index, current gain)` for each Z output on a capacitor node.
    injections: Vec<(usize, f64)>,
}

impl XDriver {
    fn v_x(&self, state: &[f64], saturate: bool) -> f64 {
        crate::dvcc::x_voltage(&self.params, self.y1.value(state), self.y2.value(state), saturate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Tap {
    Ground,
    State(usize),
    Driver(usize),
}

/// Explicit ODE `dv/dt = f(v)` of a grounded-capacitor conveyor network.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub state_names: Vec<String>,
    capacitance: Vec<f64>,
    conductance: Vec<f64>,
    drivers: Vec<XDriver>,
    outputs: Vec<(String, Tap)>,
    /// State receiving the default initial kick: node of the last capacitor.
    kick_index: usize,
}

/// Builds the explicit state-space model.
pub fn derive_state_space(netlist: &Netlist) -> Result<StateSpace, TransientError> {
    let unsupported = |m: String| TransientError::UnsupportedTopology(m);

    let mut state_index: HashMap<&str, usize> = HashMap::new();
    let mut state_names = Vec::new();
    let mut capacitance = Vec::new();
    let mut kick_index = None;
    for c in netlist.capacitors() {
        let i = *state_index.entry(&c.node).or_insert_with(|| {
            state_names.push(c.node.clone());
            capacitance.push(0.0);
            state_names.len() - 1
        });
        capacitance[i] += c.farads;
        kick_index = Some(i);
    }
    let kick_index = kick_index.ok_or_else(|| unsupported("no capacitor: state space is empty".into()))?;
    // keep states in node declaration order
    let order: Vec<usize> = {
        let mut idx: Vec<usize> = (0..state_names.len()).collect();
        let pos: HashMap<&str, usize> = netlist.nodes().into_iter().enumerate().map(|(i, n)| (n, i)).collect();
        idx.sort_by_key(|&i| pos[state_names[i].as_str()]);
        idx
    };
    let state_names: Vec<String> = order.iter().map(|&i| state_names[i].clone()).collect();
    let capacitance: Vec<f64> = order.iter().map(|&i| capacitance[i]).collect();
    let kick_index = order.iter().position(|&i| i == kick_index).unwrap();
    let state_index: HashMap<&str, usize> = state_names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();

    let mut node_conductance: HashMap<&str, f64> = HashMap::new();
    for r in netlist.resistors() {
        *node_conductance.entry(&r.node).or_insert(0.0) += 1.0 / r.ohms;
    }
    let conductance: Vec<f64> = state_names
        .iter()
        .map(|n| node_conductance.get(n.as_str()).copied().unwrap_or(0.0))
        .collect();

    let mut driver_index: HashMap<&str, usize> = HashMap::new();
    for d in netlist.dvccs() {
        let x = d.terminals.x.as_str();
        if x == GROUND {
            return Err(unsupported(format!("`{}` has its X terminal grounded", d.name)));
        }
        if state_index.contains_key(x) {
            return Err(unsupported(format!("capacitor on X node `{x}` of `{}`", d.name)));
        }
        if driver_index.insert(x, driver_index.len()).is_some() {
            return Err(unsupported(format!("X node `{x}` driven by more than one conveyor")));
        }
    }

    let resolve = |node: &str| -> Result<Source, TransientError> {
        if node == GROUND {
            Ok(Source::Ground)
        } else if let Some(&i) = state_index.get(node) {
            Ok(Source::State(i))
        } else {
            Err(TransientError::ImplicitNode(node.to_string()))
        }
    };

    let mut drivers = Vec::new();
    for d in netlist.dvccs() {
        let t = &d.terminals;
        let g_x = node_conductance.get(t.x.as_str()).copied().unwrap_or(0.0);
        if g_x <= 0.0 {
            return Err(unsupported(format!("X node `{}` has no grounded resistor", t.x)));
        }
        let mut injections = Vec::new();
        for (z, alpha) in [(&t.z1, d.params.alpha1), (&t.z2, d.params.alpha2)] {
            match resolve(z) {
                Ok(Source::Ground) => {}
                Ok(Source::State(i)) => injections.push((i, alpha)),
                Err(_) if driver_index.contains_key(z.as_str()) => {
                    return Err(unsupported(format!("Z output of `{}` drives X node `{z}`", d.name)))
                }
                Err(e) => return Err(e),
            }
        }
        drivers.push(XDriver {
            node: t.x.clone(),
            y1: resolve(&t.y1)?,
            y2: resolve(&t.y2)?,
            params: d.params,
            g_x,
            injections,
        });
    }

    for node in netlist.nodes() {
        if !state_index.contains_key(node) && !driver_index.contains_key(node) {
            return Err(TransientError::ImplicitNode(node.to_string()));
        }
    }

    let mut outputs = Vec::new();
    for p in &netlist.probes {
        let tap = if p.node == GROUND {
            Tap::Ground
        } else if let Some(&i) = state_index.get(p.node.as_str()) {
            Tap::State(i)
        } else if let Some(&j) = driver_index.get(p.node.as_str()) {
            Tap::Driver(j)
        } else {
            return Err(TransientError::ImplicitNode(p.node.clone()));
        };
        outputs.push((p.label.clone(), tap));
    }

    Ok(StateSpace {
        state_names,
        capacitance,
        conductance,
        drivers,
        outputs,
        kick_index,
    })
}

impl StateSpace {
    pub fn dim(&self) -> usize {
        self.state_names.len()
    }

    pub fn output_labels(&self) -> Vec<&str> {
        self.outputs.iter().map(|(l, _)| l.as_str()).collect()
    }

    /// Index of the state that receives the default startup kick.
    pub fn kick_index(&self) -> usize {
        self.kick_index
    }

    /// Evaluates `dv/dt` into `out`.
    pub fn derivative(&self, state: &[f64], out: &mut [f64]) {
        self.derivative_with(state, out, true)
    }

    fn derivative_with(&self, state: &[f64], out: &mut [f64], saturate: bool) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = -self.conductance[k] * state[k];
        }
        for d in &self.drivers {
            let i_out = d.g_x * d.v_x(state, saturate);
            for &(k, alpha) in &d.injections {
                out[k] += alpha * i_out;
            }
        }
        for (o, c) in out.iter_mut().zip(&self.capacitance) {
            *o /= c;
        }
    }

    /// Jacobian of the unsaturated dynamics (row-major). Both limiters have
    /// unit slope at the origin, so this is also the Jacobian there.
    pub fn jacobian(&self) -> Vec<f64> {
        let n = self.dim();
        let mut jac = vec![0.0; n * n];
        let mut unit = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            unit.iter_mut().for_each(|v| *v = 0.0);
            unit[j] = 1.0;
            self.derivative_with(&unit, &mut col, false);
            for i in 0..n {
                jac[i * n + j] = col[i];
            }
        }
        jac
    }

    /// Probe values for a state.
    pub fn outputs(&self, state: &[f64]) -> Vec<f64> {
        self.outputs
            .iter()
            .map(|(_, tap)| match *tap {
                Tap::Ground => 0.0,
                Tap::State(i) => state[i],
                Tap::Driver(j) => self.drivers[j].v_x(state, true),
            })
            .collect()
    }

    /// Names of the X nodes computed from state.
    pub fn driven_nodes(&self) -> Vec<&str> {
        self.drivers.iter().map(|d| d.node.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub t_end: f64,
    pub dt: f64,
    pub initial_state: Vec<f64>,
    /// Record every `record_stride`-th step.
    pub record_stride: usize,
}

impl SimConfig {
    pub fn validate(&self, ss: &StateSpace) -> Result<(), TransientError> {
        let bad = |m: String| Err(TransientError::BadConfig(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt = {} must be positive", self.dt));
        }
        if !(self.t_end >= 100.0 * self.dt) {
            return bad(format!("t_end = {} shorter than 100·dt", self.t_end));
        }
        if self.initial_state.len() != ss.dim() {
            return bad(format!(
                "initial state has {} entries, expected {}",
                self.initial_state.len(),
                ss.dim()
            ));
        }
        if self.record_stride == 0 {
            return bad("record_stride must be at least 1".into());
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

/// `dt = T/1000`, 200 periods, 1 mV on the last-declared capacitor node.
pub fn default_sim_config(ss: &StateSpace, f0_estimate: f64) -> SimConfig {
    let mut initial_state = vec![0.0; ss.dim()];
    initial_state[ss.kick_index] = DEFAULT_KICK;
    SimConfig {
        t_end: DEFAULT_PERIODS / f0_estimate,
        dt: 1.0 / (DEFAULT_STEPS_PER_PERIOD * f0_estimate),
        initial_state,
        record_stride: 1,
    }
}

/// Uniformly sampled multi-channel record.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub t0: f64,
    pub dt: f64,
    pub channels: Vec<(String, Vec<f64>)>,
}

impl Waveform {
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, |(_, v)| v.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn channel(&self, label: &str) -> Option<&[f64]> {
        self.channels
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, v)| v.as_slice())
    }

    /// `t,<label1>,<label2>,...` header, one row per sample.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "t")?;
        for (label, _) in &self.channels {
            write!(out, ",{label}")?;
        }
        writeln!(out)?;
        for i in 0..self.len() {
            write!(out, "{:.12e}", self.time(i))?;
            for (_, v) in &self.channels {
                write!(out, ",{:.12e}", v[i])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Integrates with classical fixed-step RK4 and records the probe outputs.
pub fn simulate(ss: &StateSpace, cfg: &SimConfig) -> Result<Waveform, TransientError> {
    cfg.validate(ss)?;
    let n = ss.dim();
    let steps = cfg.steps();
    let h = cfg.dt;

    let n_records = steps / cfg.record_stride + 1;
    let mut channels: Vec<(String, Vec<f64>)> = ss
        .output_labels()
        .into_iter()
        .map(|l| (l.to_string(), Vec::with_capacity(n_records)))
        .collect();
    let record = |state: &[f64], channels: &mut [(String, Vec<f64>)]| {
        for ((_, ch), v) in channels.iter_mut().zip(ss.outputs(state)) {
            ch.push(v);
        }
    };

    let mut y = cfg.initial_state.clone();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    record(&y, &mut channels);
    for step in 1..=steps {
        ss.derivative(&y, &mut k1);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        ss.derivative(&tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        ss.derivative(&tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + h * k3[i];
        }
        ss.derivative(&tmp, &mut k4);
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(TransientError::NonFinite {
                time: step as f64 * h,
                state: y,
            });
        }
        if step % cfg.record_stride == 0 {
            record(&y, &mut channels);
        }
    }

    Ok(Waveform {
        t0: 0.0,
        dt: h * cfg.record_stride as f64,
        channels,
    })
}

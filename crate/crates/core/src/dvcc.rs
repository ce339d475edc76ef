//! Behavioral model of the modified differential voltage current conveyor.
//!
//! Port relations with tracking gains:
//!
//! ```text
//! V_X  = β1·V_Y1 − β2·V_Y2
//! I_Y1 = I_Y2 = 0
//! I_Z1 = α1·I_X,  I_Z2 = α2·I_X
//! ```
//!
//! `I_X` and `I_Zi` are taken as flowing *into* the conveyor. Unit gains give
//! the ideal element. The only nonlinearity is an optional saturation of the
//! X-terminal voltage.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mna::MnaBuilder;
use crate::netlist::Dvcc;

/// Upper bound accepted for any tracking gain.
pub const MAX_GAIN: f64 = 1.2;

/// Default saturation level, the ±2.5 V supply rail.
pub const DEFAULT_V_SAT: f64 = 2.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("{name} = {value} outside (0, {MAX_GAIN}]")]
    GainOutOfRange { name: &'static str, value: f64 },
    #[error("vsat = {0} must be positive when saturation is enabled")]
    NonPositiveVsat(f64),
}

/// Shape of the X-output limiter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SatModel {
    None,
    Hard,
    #[default]
    Tanh,
}

impl SatModel {
    pub fn as_str(self) -> &'static str {
        match self {
            SatModel::None => "none",
            SatModel::Hard => "hard",
            SatModel::Tanh => "tanh",
        }
    }
}

impl fmt::Display for SatModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SatModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(SatModel::None),
            "hard" => Ok(SatModel::Hard),
            "tanh" => Ok(SatModel::Tanh),
            other => Err(format!("unknown saturation model `{other}`")),
        }
    }
}

/// Tracking gains and output limiter of one conveyor instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DvccParams {
    /// Voltage gain Y1 → X.
    pub beta1: f64,
    /// Voltage gain Y2 → X.
    pub beta2: f64,
    /// Current gain X → Z1.
    pub alpha1: f64,
    /// Current gain X → Z2.
    pub alpha2: f64,
    pub v_sat: f64,
    pub sat_model: SatModel,
}

impl Default for DvccParams {
    fn default() -> Self {
        Self::ideal()
    }
}

impl DvccParams {
    /// Unit gains with the default tanh limiter at 2.5 V.
    pub fn ideal() -> Self {
        Self {
            beta1: 1.0,
            beta2: 1.0,
            alpha1: 1.0,
            alpha2: 1.0,
            v_sat: DEFAULT_V_SAT,
            sat_model: SatModel::Tanh,
        }
    }

    pub fn with_gains(beta1: f64, beta2: f64, alpha1: f64, alpha2: f64) -> Self {
        Self {
            beta1,
            beta2,
            alpha1,
            alpha2,
            ..Self::ideal()
        }
    }

    pub fn with_saturation(mut self, sat_model: SatModel, v_sat: f64) -> Self {
        self.sat_model = sat_model;
        self.v_sat = v_sat;
        self
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        for (name, value) in [
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
        ] {
            if !(value > 0.0 && value <= MAX_GAIN) {
                return Err(ParamError::GainOutOfRange { name, value });
            }
        }
        if self.sat_model != SatModel::None && !(self.v_sat > 0.0 && self.v_sat.is_finite()) {
            return Err(ParamError::NonPositiveVsat(self.v_sat));
        }
        Ok(())
    }

    /// Voltage tracking error Y1 → X.
    pub fn eps_v1(&self) -> f64 {
        1.0 - self.beta1
    }

    /// Voltage tracking error Y2 → X.
    pub fn eps_v2(&self) -> f64 {
        1.0 - self.beta2
    }

    /// Current tracking error X → Z1.
    pub fn eps_i1(&self) -> f64 {
        1.0 - self.alpha1
    }

    /// Current tracking error X → Z2.
    pub fn eps_i2(&self) -> f64 {
        1.0 - self.alpha2
    }

    /// Applies the configured limiter to an unsaturated X voltage.
    pub fn saturate(&self, u: f64) -> f64 {
        match self.sat_model {
            SatModel::None => u,
            SatModel::Hard => u.clamp(-self.v_sat, self.v_sat),
            SatModel::Tanh => self.v_sat * (u / self.v_sat).tanh(),
        }
    }
}

/// X-terminal voltage for the given Y-terminal voltages.
pub fn x_voltage(params: &DvccParams, v_y1: f64, v_y2: f64, saturate: bool) -> f64 {
    let u = params.beta1 * v_y1 - params.beta2 * v_y2;
    if saturate {
        params.saturate(u)
    } else {
        u
    }
}

/// Currents flowing into the conveyor at Z1 and Z2 for a current `i_x`
/// flowing into X.
pub fn z_currents(params: &DvccParams, i_x: f64) -> (f64, f64) {
    (params.alpha1 * i_x, params.alpha2 * i_x)
}

/// Adds the conveyor's contribution to an MNA system.
///
/// Allocates one branch unknown `I_X`. The branch row enforces
/// `V(x) − β1·V(y1) + β2·V(y2) = 0`; the KCL rows of x, z1 and z2 receive
/// `I_X`, `α1·I_X` and `α2·I_X`. Y nodes get nothing.
pub fn stamp(dvcc: &Dvcc, builder: &mut MnaBuilder) {
    let p = &dvcc.params;
    let t = &dvcc.terminals;
    let branch = builder.alloc_branch(&dvcc.name);
    let x = builder.node_index(&t.x);
    let y1 = builder.node_index(&t.y1);
    let y2 = builder.node_index(&t.y2);
    let z1 = builder.node_index(&t.z1);
    let z2 = builder.node_index(&t.z2);

    if let Some(x) = x {
        builder.add(branch, x, 1.0, 0.0);
        builder.add(x, branch, 1.0, 0.0);
    }
    if let Some(y1) = y1 {
        builder.add(branch, y1, -p.beta1, 0.0);
    }
    if let Some(y2) = y2 {
        builder.add(branch, y2, p.beta2, 0.0);
    }
    if let Some(z1) = z1 {
        builder.add(z1, branch, p.alpha1, 0.0);
    }
    if let Some(z2) = z2 {
        builder.add(z2, branch, p.alpha2, 0.0);
    }
}

//! Behavioral toolkit for the single-DVCC grounded-component voltage-mode
//! quadrature oscillator.
//!
//! - [`netlist`]: circuit description, text format, canonical topology.
//! - [`dvcc`]: conveyor port relations, saturation and MNA stamp.
//! - [`mna`]: polynomial MNA matrix, characteristic polynomial, FO/CO.
//! - [`theory`]: closed-form relations, design, sensitivities, Monte Carlo.
//! - [`transient`]: explicit state space and RK4 integration.
//! - [`measure`]: frequency, spectrum, THD and quadrature measurement.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dvcc;
pub mod measure;
pub mod mna;
pub mod netlist;
pub mod theory;
pub mod transient;

pub use dvcc::{DvccParams, SatModel};
pub use measure::{QuadratureReport, Spectrum, WindowFn};
pub use mna::{CharPoly, Growth, OscAnalysis, PolyMatrix};
pub use netlist::{Element, Netlist};
pub use theory::{DesignResult, OscParams, SensitivityReport};
pub use transient::{SimConfig, StateSpace, Waveform};

/// Any error produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Netlist(#[from] netlist::NetlistError),
    #[error(transparent)]
    Mna(#[from] mna::MnaError),
    #[error(transparent)]
    Theory(#[from] theory::TheoryError),
    #[error(transparent)]
    Transient(#[from] transient::TransientError),
    #[error(transparent)]
    Measure(#[from] measure::MeasureError),
}

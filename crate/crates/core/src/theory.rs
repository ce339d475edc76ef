//! Closed-form oscillator relations, equal-amplitude design, normalized
//! sensitivities and component-tolerance Monte Carlo.
//!
//! With tracking gains the characteristic equation is
//!
//! ```text
//! s² + s·(1/(R1C1) + β2α1/(R2C2) − β1α2/(C1R2)) + β2α1/(R1R2C1C2) = 0
//! ```
//!
//! which reduces to the ideal form for unit gains.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dvcc::DvccParams;
use crate::netlist::{canonical_quadrature_netlist, Netlist, GROUND};

/// Default startup margin for the equal-amplitude design.
pub const DEFAULT_EPSILON: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TheoryError {
    #[error("startup margin {0} outside [0, 0.2]")]
    EpsilonOutOfRange(f64),
    #[error("{name} = {value} must be positive")]
    NonPositive { name: &'static str, value: f64 },
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("relative step {0} outside [1e-8, 1e-2]")]
    StepOutOfRange(f64),
    #[error("tolerance {0} outside [0, 0.5)")]
    ToleranceOutOfRange(f64),
    #[error("at least one Monte Carlo draw is required")]
    NoDraws,
    #[error("netlist is not the single-conveyor quadrature topology: {0}")]
    NotCanonical(String),
}

/// Component values of the quadrature oscillator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OscParams {
    pub r1: f64,
    pub r2: f64,
    pub c1: f64,
    pub c2: f64,
    pub dvcc: DvccParams,
}

impl OscParams {
    pub fn new(r1: f64, r2: f64, c1: f64, c2: f64, dvcc: DvccParams) -> Self {
        Self { r1, r2, c1, c2, dvcc }
    }

    pub fn validate(&self) -> Result<(), TheoryError> {
        for (name, value) in [("r1", self.r1), ("r2", self.r2), ("c1", self.c1), ("c2", self.c2)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(TheoryError::NonPositive { name, value });
            }
        }
        Ok(())
    }

    pub fn to_netlist(&self) -> Netlist {
        canonical_quadrature_netlist(self.r1, self.r2, self.c1, self.c2, self.dvcc)
    }

    /// Recognizes the canonical topology and extracts its values.
    ///
    /// The conveyor's Y1 node must carry exactly one resistor and one
    /// capacitor and receive Z2; its Y2 node exactly one capacitor and
    /// receive Z1; its X node exactly one resistor.
    pub fn from_netlist(netlist: &Netlist) -> Result<Self, TheoryError> {
        let not = |m: &str| TheoryError::NotCanonical(m.to_string());
        let mut dvccs = netlist.dvccs();
        let d = dvccs.next().ok_or_else(|| not("no conveyor"))?;
        if dvccs.next().is_some() {
            return Err(not("more than one conveyor"));
        }
        let t = &d.terminals;
        if t.z2 != t.y1 || t.z1 != t.y2 {
            return Err(not("Z outputs must feed back to Y1 (Z2) and Y2 (Z1)"));
        }
        let distinct = [&t.y1, &t.y2, &t.x];
        if distinct.iter().any(|n| n.as_str() == GROUND) || t.y1 == t.y2 || t.y1 == t.x || t.y2 == t.x {
            return Err(not("Y1, Y2 and X must be distinct non-ground nodes"));
        }
        let rs = |node: &str| netlist.resistors().filter(|r| r.node == node).collect::<Vec<_>>();
        let cs = |node: &str| netlist.capacitors().filter(|c| c.node == node).collect::<Vec<_>>();
        let (r_y1, c_y1, r_y2, c_y2, r_x, c_x) = (rs(&t.y1), cs(&t.y1), rs(&t.y2), cs(&t.y2), rs(&t.x), cs(&t.x));
        match (
            r_y1.as_slice(),
            c_y1.as_slice(),
            r_y2.len(),
            c_y2.as_slice(),
            r_x.as_slice(),
            c_x.len(),
        ) {
            ([r1], [c1], 0, [c2], [r2], 0) => {
                if netlist.nodes().len() != 3 || netlist.elements.len() != 5 {
                    return Err(not("unexpected extra elements"));
                }
                Ok(Self::new(r1.ohms, r2.ohms, c1.farads, c2.farads, d.params))
            }
            _ => Err(not("passive elements do not match R1∥C1, C2, R2")),
        }
    }
}

/// Ideal damping and constant coefficients `(a1, a0)`.
pub fn co_coeffs_ideal(p: &OscParams) -> (f64, f64) {
    let a1 = 1.0 / (p.r1 * p.c1) + 1.0 / (p.r2 * p.c2) - 1.0 / (p.c1 * p.r2);
    let a0 = 1.0 / (p.r1 * p.r2 * p.c1 * p.c2);
    (a1, a0)
}

/// Damping and constant coefficients `(a1, a0)` with tracking gains.
pub fn co_coeffs_nonideal(p: &OscParams) -> (f64, f64) {
    let g = &p.dvcc;
    let fwd = g.beta2 * g.alpha1;
    let fb = g.beta1 * g.alpha2;
    let a1 = 1.0 / (p.r1 * p.c1) + fwd / (p.r2 * p.c2) - fb / (p.c1 * p.r2);
    let a0 = fwd / (p.r1 * p.r2 * p.c1 * p.c2);
    (a1, a0)
}

/// Oscillation frequency in Hz for unit gains.
pub fn fo_ideal(p: &OscParams) -> f64 {
    1.0 / (2.0 * PI * (p.r1 * p.r2 * p.c1 * p.c2).sqrt())
}

/// Oscillation frequency in Hz including `β2·α1`.
pub fn fo_nonideal(p: &OscParams) -> f64 {
    (p.dvcc.beta2 * p.dvcc.alpha1 / (p.r1 * p.r2 * p.c1 * p.c2)).sqrt() / (2.0 * PI)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DesignResult {
    pub params: OscParams,
    pub epsilon: f64,
    pub f0_target: f64,
    /// Frequency of the chosen values, `f0_target/√(1+ε)`.
    pub f0_exact: f64,
}

/// Equal-amplitude design `C2 = 2C1`, `R1 = 2R2(1+ε)`.
///
/// Capacitors are sized for `ε = 0`, so a positive margin lowers the
/// frequency by `√(1+ε)` and makes the damping coefficient negative.
pub fn design_equal_amplitude(f0: f64, r2: f64, epsilon: f64) -> Result<DesignResult, TheoryError> {
    if !(f0 > 0.0 && f0.is_finite()) {
        return Err(TheoryError::NonPositive { name: "f0", value: f0 });
    }
    if !(r2 > 0.0 && r2.is_finite()) {
        return Err(TheoryError::NonPositive { name: "r2", value: r2 });
    }
    if !(0.0..=0.2).contains(&epsilon) {
        return Err(TheoryError::EpsilonOutOfRange(epsilon));
    }
    let r1_nominal = 2.0 * r2;
    let c1 = 1.0 / (2.0 * PI * f0 * r1_nominal);
    let c2 = 2.0 * c1;
    let r1 = r1_nominal * (1.0 + epsilon);
    let params = OscParams::new(r1, r2, c1, c2, DvccParams::ideal());
    Ok(DesignResult {
        params,
        epsilon,
        f0_target: f0,
        f0_exact: fo_ideal(&params),
    })
}

/// Phase of V01 relative to V02 (degrees) and `|V01|/|V02|` at the
/// oscillation frequency.
///
/// `V01/V02 = s·C2R2` on the conveyor's Z1 path, so on the jω axis the phase
/// is +90° and the ratio is `ω0·C2R2 = √(R2C2/(R1C1))`.
pub fn quadrature_relation(p: &OscParams) -> (f64, f64) {
    (90.0, ((p.r2 * p.c2) / (p.r1 * p.c1)).sqrt())
}

/// Parameters that enter the frequency expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Param {
    Beta1,
    Beta2,
    Alpha1,
    Alpha2,
    R1,
    R2,
    C1,
    C2,
}

impl Param {
    pub const ALL: [Param; 8] = [
        Param::Beta1,
        Param::Beta2,
        Param::Alpha1,
        Param::Alpha2,
        Param::R1,
        Param::R2,
        Param::C1,
        Param::C2,
    ];

    /// The six parameters with nonzero sensitivity.
    pub const SENSITIVE: [Param; 6] = [Param::Beta2, Param::Alpha1, Param::R1, Param::R2, Param::C1, Param::C2];

    pub fn as_str(self) -> &'static str {
        match self {
            Param::Beta1 => "beta1",
            Param::Beta2 => "beta2",
            Param::Alpha1 => "alpha1",
            Param::Alpha2 => "alpha2",
            Param::R1 => "r1",
            Param::R2 => "r2",
            Param::C1 => "c1",
            Param::C2 => "c2",
        }
    }

    fn get(self, p: &OscParams) -> f64 {
        match self {
            Param::Beta1 => p.dvcc.beta1,
            Param::Beta2 => p.dvcc.beta2,
            Param::Alpha1 => p.dvcc.alpha1,
            Param::Alpha2 => p.dvcc.alpha2,
            Param::R1 => p.r1,
            Param::R2 => p.r2,
            Param::C1 => p.c1,
            Param::C2 => p.c2,
        }
    }

    fn slot(self, p: &mut OscParams) -> &mut f64 {
        match self {
            Param::Beta1 => &mut p.dvcc.beta1,
            Param::Beta2 => &mut p.dvcc.beta2,
            Param::Alpha1 => &mut p.dvcc.alpha1,
            Param::Alpha2 => &mut p.dvcc.alpha2,
            Param::R1 => &mut p.r1,
            Param::R2 => &mut p.r2,
            Param::C1 => &mut p.c1,
            Param::C2 => &mut p.c2,
        }
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Param {
    type Err = TheoryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Param::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| TheoryError::UnknownParameter(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityReport {
    pub entries: Vec<(Param, f64)>,
}

impl SensitivityReport {
    pub fn get(&self, param: Param) -> Option<f64> {
        self.entries.iter().find(|(p, _)| *p == param).map(|(_, v)| *v)
    }
}

/// Normalized sensitivities of ω0: +½ for β2 and α1, −½ for the passives.
pub fn sensitivities_analytic() -> SensitivityReport {
    SensitivityReport {
        entries: Param::SENSITIVE
            .into_iter()
            .map(|p| {
                let s = match p {
                    Param::Beta2 | Param::Alpha1 => 0.5,
                    _ => -0.5,
                };
                (p, s)
            })
            .collect(),
    }
}

/// Central-difference estimate of `∂ln ω0 / ∂ln x` with relative step `h`.
pub fn sensitivity_fd(p: &OscParams, param: Param, h: f64) -> Result<f64, TheoryError> {
    if !(1e-8..=1e-2).contains(&h) {
        return Err(TheoryError::StepOutOfRange(h));
    }
    let x = param.get(p);
    let mut up = *p;
    *param.slot(&mut up) = x * (1.0 + h);
    let mut down = *p;
    *param.slot(&mut down) = x * (1.0 - h);
    let d_ln_w = fo_nonideal(&up).ln() - fo_nonideal(&down).ln();
    let d_ln_x = ((1.0 + h) / (1.0 - h)).ln();
    Ok(d_ln_w / d_ln_x)
}

/// Same as [`sensitivity_fd`] with the parameter given by name.
pub fn sensitivity_fd_named(p: &OscParams, name: &str, h: f64) -> Result<f64, TheoryError> {
    sensitivity_fd(p, name.parse()?, h)
}

/// One Monte Carlo sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McDraw {
    pub r1: f64,
    pub r2: f64,
    pub c1: f64,
    pub c2: f64,
    pub f0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McSummary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1); zero for a single draw.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McResult {
    pub summary: McSummary,
    pub draws: Vec<McDraw>,
}

impl McResult {
    /// `r1_ohm,r2_ohm,c1_f,c2_f,f0_hz` rows.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "draw,r1_ohm,r2_ohm,c1_f,c2_f,f0_hz")?;
        for (i, d) in self.draws.iter().enumerate() {
            writeln!(
                out,
                "{i},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                d.r1, d.r2, d.c1, d.c2, d.f0
            )?;
        }
        Ok(())
    }
}

/// Samples R1, R2, C1, C2 uniformly within `±tol` and evaluates the
/// frequency with the nominal tracking gains.
///
/// Draw `i` uses its own ChaCha stream `i` under `seed`, so results do not
/// depend on thread scheduling.
pub fn monte_carlo_f0(p: &OscParams, tol: f64, n: usize, seed: u64) -> Result<McResult, TheoryError> {
    p.validate()?;
    if !(0.0..0.5).contains(&tol) {
        return Err(TheoryError::ToleranceOutOfRange(tol));
    }
    if n == 0 {
        return Err(TheoryError::NoDraws);
    }
    let draws: Vec<McDraw> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i);
            let mut vary = |x: f64| {
                if tol == 0.0 {
                    x
                } else {
                    rng.gen_range(x * (1.0 - tol)..=x * (1.0 + tol))
                }
            };
            let q = OscParams::new(vary(p.r1), vary(p.r2), vary(p.c1), vary(p.c2), p.dvcc);
            McDraw {
                r1: q.r1,
                r2: q.r2,
                c1: q.c1,
                c2: q.c2,
                f0: fo_nonideal(&q),
            }
        })
        .collect();

    // Welford, so identical samples give exactly zero spread
    let (mut mean, mut m2) = (0.0, 0.0);
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for (k, d) in draws.iter().enumerate() {
        let delta = d.f0 - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (d.f0 - mean);
        min = min.min(d.f0);
        max = max.max(d.f0);
    }
    let std = if n > 1 { (m2 / (n - 1) as f64).sqrt() } else { 0.0 };
    Ok(McResult {
        summary: McSummary { n, mean, std, min, max },
        draws,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_design() -> OscParams {
        OscParams::new(2e3, 1e3, 10e-12, 20e-12, DvccParams::ideal())
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn ideal_coefficients() {
        let (a1, a0) = co_coeffs_ideal(&reference_design());
        assert!(a1.abs() < 1e-6, "{a1}");
        assert!(rel(a0, 2.5e15) < 1e-12);
        let unit = OscParams::new(1.0, 1.0, 1.0, 1.0, DvccParams::ideal());
        assert_eq!(co_coeffs_ideal(&unit), (1.0, 1.0));
        let eps = 0.05;
        let p = OscParams::new(2.0 * 1e3 * (1.0 + eps), 1e3, 10e-12, 20e-12, DvccParams::ideal());
        assert!(co_coeffs_ideal(&p).0 < 0.0);
    }

    #[test]
    fn ideal_frequency() {
        // 1/(2π·2e-8)
        assert!(rel(fo_ideal(&reference_design()), 7.957_747_154_594_767e6) < 1e-12);
        let unit = OscParams::new(1.0, 1.0, 1.0, 1.0, DvccParams::ideal());
        assert!(rel(fo_ideal(&unit), 1.0 / (2.0 * PI)) < 1e-15);
        let d = design_equal_amplitude(1e5, 3.3e3, 0.0).unwrap().params;
        assert!(rel(fo_ideal(&d), 1.0 / (2.0 * PI * d.r1 * d.c1)) < 1e-12);
    }

    #[test]
    fn nonideal_coefficients() {
        let mut p = reference_design();
        assert_eq!(co_coeffs_nonideal(&p), co_coeffs_ideal(&p));
        p.dvcc = DvccParams::with_gains(1.0, 0.975, 1.0, 1.0);
        let (a1, a0) = co_coeffs_nonideal(&p);
        assert!(a1 < 0.0);
        assert!(rel(a0, 0.975 * 2.5e15) < 1e-12);
        p.dvcc = DvccParams::with_gains(1.0, 1e-12, 1.0, 1.0);
        assert!(co_coeffs_nonideal(&p).1 < 1e4);
    }

    #[test]
    fn nonideal_frequency() {
        let mut p = reference_design();
        assert!(rel(fo_nonideal(&p), fo_ideal(&p)) < 1e-15);
        let k = (7.86f64 / 7.96).powi(2);
        p.dvcc = DvccParams::with_gains(1.0, k, 1.0, 1.0);
        assert!(rel(fo_nonideal(&p), 7.86e6) < 0.005);
        p.dvcc = DvccParams::with_gains(1.0, 0.5, 0.5, 1.0);
        assert!(rel(fo_nonideal(&p), 3.978_873_577_297_384e6) < 1e-12);
    }

    #[test]
    fn design_examples() {
        let d = design_equal_amplitude(7.957_747_154_594_767e6, 1e3, 0.0).unwrap();
        assert!(rel(d.params.r1, 2e3) < 1e-15);
        assert!(rel(d.params.c1, 10e-12) < 1e-12);
        assert!(rel(d.params.c2, 20e-12) < 1e-12);

        let d = design_equal_amplitude(1.0 / (2.0 * PI), 0.5, 0.0).unwrap();
        assert!(rel(d.params.r1, 1.0) < 1e-15);
        assert!(rel(d.params.c1, 1.0) < 1e-12);
        assert!(rel(d.params.c2, 2.0) < 1e-12);

        let d = design_equal_amplitude(7.9577e6, 1e3, 0.05).unwrap();
        assert!(co_coeffs_ideal(&d.params).0 < 0.0);
        assert!(rel(d.f0_exact, 7.9577e6 / 1.05f64.sqrt()) < 1e-12);
        assert!((d.f0_exact - 7.766e6).abs() < 1e3);

        assert!(matches!(
            design_equal_amplitude(1e6, 1e3, 0.5),
            Err(TheoryError::EpsilonOutOfRange(_))
        ));
        assert!(design_equal_amplitude(1e6, 1e3, -0.01).is_err());
        assert!(design_equal_amplitude(0.0, 1e3, 0.0).is_err());
    }

    #[test]
    fn quadrature_examples() {
        let (phase, ratio) = quadrature_relation(&reference_design());
        assert_eq!(phase, 90.0);
        assert!((ratio - 1.0).abs() < 1e-12);
        // R2C2 = 4·R1C1
        let p = OscParams::new(1e3, 2e3, 10e-12, 20e-12, DvccParams::ideal());
        assert!((quadrature_relation(&p).1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn analytic_sensitivities() {
        let s = sensitivities_analytic();
        assert_eq!(s.get(Param::Beta2), Some(0.5));
        assert_eq!(s.get(Param::Alpha1), Some(0.5));
        assert_eq!(s.get(Param::R1), Some(-0.5));
        assert_eq!(s.entries.len(), 6);
        assert!(s.entries.iter().all(|(_, v)| v.abs() == 0.5));
        assert_eq!(s.get(Param::Beta1), None);
    }

    #[test]
    fn fd_sensitivities() {
        let p = OscParams::new(
            3.3e3,
            1.2e3,
            47e-12,
            22e-12,
            DvccParams::with_gains(0.97, 0.96, 0.98, 0.99),
        );
        assert!((sensitivity_fd(&p, Param::R1, 1e-5).unwrap() + 0.5).abs() < 1e-3);
        assert!((sensitivity_fd(&p, Param::Beta2, 1e-5).unwrap() - 0.5).abs() < 1e-3);
        assert!(sensitivity_fd(&p, Param::Beta1, 1e-5).unwrap().abs() < 1e-6);
        assert!(matches!(
            sensitivity_fd_named(&p, "gamma", 1e-5),
            Err(TheoryError::UnknownParameter(_))
        ));
        assert!(sensitivity_fd(&p, Param::R1, 0.1).is_err());
        assert!((sensitivity_fd_named(&p, "C2", 1e-4).unwrap() + 0.5).abs() < 1e-3);
    }

    #[test]
    fn monte_carlo_basics() {
        let p = reference_design();
        let r = monte_carlo_f0(&p, 0.0, 100, 7).unwrap();
        assert_eq!(r.summary.std, 0.0);
        assert_eq!(r.summary.mean, fo_nonideal(&p));
        let a = monte_carlo_f0(&p, 0.05, 500, 42).unwrap();
        let b = monte_carlo_f0(&p, 0.05, 500, 42).unwrap();
        assert_eq!(a, b);
        let c = monte_carlo_f0(&p, 0.05, 500, 43).unwrap();
        assert_ne!(a.summary.mean, c.summary.mean);
        for d in &a.draws {
            assert!(d.r1 >= 2e3 * 0.95 && d.r1 <= 2e3 * 1.05);
        }
        assert!(monte_carlo_f0(&p, 0.5, 10, 1).is_err());
        assert!(monte_carlo_f0(&p, 0.1, 0, 1).is_err());
        let single = monte_carlo_f0(&p, 0.1, 1, 1).unwrap();
        assert_eq!(single.summary.std, 0.0);
    }

    #[test]
    fn monte_carlo_mean_is_near_nominal() {
        let r = monte_carlo_f0(&reference_design(), 0.01, 10_000, 2024).unwrap();
        assert!(rel(r.summary.mean, 7.957_747e6) < 1e-3);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 10_001);
    }

    #[test]
    fn recognizes_canonical_netlist() {
        let p = OscParams::new(
            2.04e3,
            1e3,
            10e-12,
            20e-12,
            DvccParams::with_gains(0.99, 0.98, 0.97, 0.96),
        );
        assert_eq!(OscParams::from_netlist(&p.to_netlist()).unwrap(), p);
        let mut n = p.to_netlist();
        if let crate::netlist::Element::Resistor(r) = &mut n.elements[0] {
            r.node = "n2".into();
        }
        assert!(OscParams::from_netlist(&n).is_err());
    }
}

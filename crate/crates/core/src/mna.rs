//! Modified nodal analysis with first-order polynomial entries and
//! characteristic-polynomial extraction.
//!
//! The MNA matrix `M(s) = G + s·C` has node rows (declaration order) followed
//! by one branch row per conveyor. Its determinant is the characteristic
//! polynomial of the network; it is recovered by evaluating `det M(s)` at
//! `d + 1` real points and interpolating, with `d` the capacitor count.

use std::collections::HashMap;
use std::f64::consts::PI;

use serde::Serialize;
use thiserror::Error;

use crate::dvcc;
use crate::netlist::{Element, Netlist, GROUND};

/// Coefficients below this fraction of the largest (scaled) coefficient are
/// interpolation noise.
pub const TRIM_RELATIVE: f64 = 1e-12;

/// Marginal band for the damping coefficient, relative to ω0.
pub const MARGINAL_RELATIVE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MnaError {
    #[error("degenerate network: determinant is identically zero")]
    Degenerate,
    #[error("unsupported order {0}: only second-order characteristic polynomials are analyzed")]
    UnsupportedOrder(usize),
    #[error("no oscillatory pair: constant coefficient {0} is not positive")]
    NoOscillatoryPair(f64),
}

/// Square matrix whose entries are `g + s·c`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyMatrix {
    n: usize,
    /// Row-major `[g, c]` pairs.
    entries: Vec<[f64; 2]>,
    /// Row/column labels: node names, then conveyor branch currents.
    pub labels: Vec<String>,
}

impl PolyMatrix {
    fn zeros(labels: Vec<String>) -> Self {
        let n = labels.len();
        Self {
            n,
            entries: vec![[0.0; 2]; n * n],
            labels,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Entry `(row, col)` as `[constant, s-coefficient]`.
    pub fn entry(&self, row: usize, col: usize) -> [f64; 2] {
        self.entries[row * self.n + col]
    }

    /// Numeric matrix at real frequency `s`, row-major.
    pub fn eval(&self, s: f64) -> Vec<f64> {
        self.entries.iter().map(|[g, c]| g + s * c).collect()
    }
}

/// Incremental assembler used by element stamps.
#[derive(Debug)]
pub struct MnaBuilder {
    node_index: HashMap<String, usize>,
    labels: Vec<String>,
    n_nodes: usize,
    stamps: Vec<(usize, usize, f64, f64)>,
}

impl MnaBuilder {
    pub fn new<'a>(nodes: impl IntoIterator<Item = &'a str>) -> Self {
        let labels: Vec<String> = nodes.into_iter().map(str::to_string).collect();
        let node_index = labels.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self {
            node_index,
            n_nodes: labels.len(),
            labels,
            stamps: Vec::new(),
        }
    }

    /// Row/column of a node; `None` for ground.
    pub fn node_index(&self, node: &str) -> Option<usize> {
        if node == GROUND {
            None
        } else {
            self.node_index.get(node).copied()
        }
    }

    pub fn node_count(&self) -> usize {
        self.n_nodes
    }

    /// Allocates a branch-current unknown and returns its index.
    pub fn alloc_branch(&mut self, owner: &str) -> usize {
        self.labels.push(format!("I({owner})"));
        self.labels.len() - 1
    }

    /// Accumulates `g + s·c` into `(row, col)`.
    pub fn add(&mut self, row: usize, col: usize, g: f64, c: f64) {
        self.stamps.push((row, col, g, c));
    }

    pub fn finish(self) -> PolyMatrix {
        let mut m = PolyMatrix::zeros(self.labels);
        for (row, col, g, c) in self.stamps {
            let e = &mut m.entries[row * m.n + col];
            e[0] += g;
            e[1] += c;
        }
        m
    }
}

/// Assembles the MNA system of a netlist.
pub fn build_mna(netlist: &Netlist) -> PolyMatrix {
    let mut b = MnaBuilder::new(netlist.nodes());
    for e in &netlist.elements {
        match e {
            Element::Resistor(r) => {
                if let Some(k) = b.node_index(&r.node) {
                    b.add(k, k, 1.0 / r.ohms, 0.0);
                }
            }
            Element::Capacitor(c) => {
                if let Some(k) = b.node_index(&c.node) {
                    b.add(k, k, 0.0, c.farads);
                }
            }
            Element::Dvcc(d) => dvcc::stamp(d, &mut b),
        }
    }
    b.finish()
}

/// LU factorization with partial pivoting; returns the determinant and
/// leaves the factors in `a`.
fn lu_in_place(a: &mut [f64], n: usize, perm: &mut [usize]) -> f64 {
    let mut det = 1.0;
    for (i, p) in perm.iter_mut().enumerate() {
        *p = i;
    }
    for k in 0..n {
        let (pivot_row, pivot_abs) =
            (k..n)
                .map(|r| (r, a[r * n + k].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pivot_abs == 0.0 {
            return 0.0;
        }
        if pivot_row != k {
            for c in 0..n {
                a.swap(k * n + c, pivot_row * n + c);
            }
            perm.swap(k, pivot_row);
            det = -det;
        }
        let pivot = a[k * n + k];
        det *= pivot;
        for r in k + 1..n {
            let f = a[r * n + k] / pivot;
            a[r * n + k] = f;
            for c in k + 1..n {
                a[r * n + c] -= f * a[k * n + c];
            }
        }
    }
    det
}

/// Determinant of a row-major `n × n` matrix.
pub fn determinant(mut a: Vec<f64>, n: usize) -> f64 {
    let mut perm = vec![0; n];
    lu_in_place(&mut a, n, &mut perm)
}

/// Solves `a·x = b`; `None` when `a` is singular.
pub fn solve(mut a: Vec<f64>, n: usize, b: &[f64]) -> Option<Vec<f64>> {
    let mut perm = vec![0; n];
    if lu_in_place(&mut a, n, &mut perm) == 0.0 {
        return None;
    }
    let mut x: Vec<f64> = perm.iter().map(|&p| b[p]).collect();
    for r in 0..n {
        for c in 0..r {
            x[r] -= a[r * n + c] * x[c];
        }
    }
    for r in (0..n).rev() {
        for c in r + 1..n {
            x[r] -= a[r * n + c] * x[c];
        }
        x[r] /= a[r * n + r];
    }
    Some(x)
}

/// Monic characteristic polynomial, ascending coefficients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CharPoly {
    pub coeffs: Vec<f64>,
}

impl CharPoly {
    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * s + c)
    }
}

/// Interpolates `det M(σ·u)` in the scaled variable `u` at `u = 1..=d+1`.
///
/// Returns the scaled coefficients `b_i = a_i·σ^i`.
fn interpolate_scaled(m: &PolyMatrix, degree: usize, sigma: f64) -> Result<Vec<f64>, MnaError> {
    let n = m.dim();
    let points = degree + 1;
    let mut values = Vec::with_capacity(points);
    let mut any_nonzero = false;
    for k in 0..points {
        let s = sigma * (k as f64 + 1.0);
        let a = m.eval(s);
        // Hadamard bound, to decide whether a zero determinant is structural
        let bound: f64 = (0..n)
            .map(|r| a[r * n..(r + 1) * n].iter().map(|v| v * v).sum::<f64>().sqrt())
            .product();
        let det = determinant(a, n);
        if det.abs() > 64.0 * f64::EPSILON * bound {
            any_nonzero = true;
        }
        values.push(det);
    }
    if !any_nonzero {
        return Err(MnaError::Degenerate);
    }
    let mut vandermonde = Vec::with_capacity(points * points);
    for k in 0..points {
        let u = k as f64 + 1.0;
        let mut p = 1.0;
        for _ in 0..points {
            vandermonde.push(p);
            p *= u;
        }
    }
    solve(vandermonde, points, &values).ok_or(MnaError::Degenerate)
}

fn trim(scaled: &mut [f64]) {
    let max = scaled.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for v in scaled.iter_mut() {
        if v.abs() < TRIM_RELATIVE * max {
            *v = 0.0;
        }
    }
}

fn unscale(scaled: &[f64], sigma: f64) -> Vec<f64> {
    let mut p = 1.0;
    scaled
        .iter()
        .map(|b| {
            let a = b / p;
            p *= sigma;
            a
        })
        .collect()
}

/// Default evaluation scale `1/√(max R · max C)`.
fn natural_scale(netlist: &Netlist) -> f64 {
    let r = netlist.resistors().map(|r| r.ohms).fold(0.0, f64::max);
    let c = netlist.capacitors().map(|c| c.farads).fold(0.0, f64::max);
    match (r > 0.0, c > 0.0) {
        (true, true) => 1.0 / (r * c).sqrt(),
        (false, true) => 1.0 / c,
        _ => 1.0,
    }
}

/// Characteristic polynomial with an explicit evaluation scale `sigma`.
///
/// Interpolation points are `s_k = σ·(k+1)`. After a first pass the scale is
/// rebalanced to `(|a0/a_d|)^(1/d)` so that end coefficients carry equal
/// weight in the scaled variable, and the interpolation is repeated.
pub fn char_poly_with_scale(netlist: &Netlist, sigma: f64) -> Result<CharPoly, MnaError> {
    let m = build_mna(netlist);
    let degree = netlist.capacitors().count();
    let mut scaled = interpolate_scaled(&m, degree, sigma)?;
    trim(&mut scaled);
    let mut coeffs = unscale(&scaled, sigma);

    let top = coeffs.iter().rposition(|c| *c != 0.0).ok_or(MnaError::Degenerate)?;
    if top > 0 && coeffs[0] != 0.0 {
        let balanced = (coeffs[0] / coeffs[top]).abs().powf(1.0 / top as f64);
        if balanced.is_finite() && balanced > 0.0 {
            if let Ok(mut again) = interpolate_scaled(&m, degree, balanced) {
                trim(&mut again);
                coeffs = unscale(&again, balanced);
            }
        }
    }

    let top = coeffs.iter().rposition(|c| *c != 0.0).ok_or(MnaError::Degenerate)?;
    coeffs.truncate(top + 1);
    let lead = coeffs[top];
    for c in &mut coeffs {
        *c /= lead;
    }
    Ok(CharPoly { coeffs })
}

/// Characteristic polynomial (monic) of the linearized network.
pub fn char_poly(netlist: &Netlist) -> Result<CharPoly, MnaError> {
    char_poly_with_scale(netlist, natural_scale(netlist))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Growth {
    Decaying,
    Marginal,
    Growing,
}

/// Oscillation frequency and condition read off a second-order polynomial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OscAnalysis {
    pub omega0: f64,
    pub f0: f64,
    /// Damping coefficient `a1` of the monic polynomial (rad/s); ≤ 0 is the
    /// oscillation condition.
    pub a1: f64,
    pub oscillates: bool,
    pub growth: Growth,
}

/// Classifies `s² + a1·s + a0`.
pub fn analyze(poly: &CharPoly) -> Result<OscAnalysis, MnaError> {
    if poly.degree() != 2 {
        return Err(MnaError::UnsupportedOrder(poly.degree()));
    }
    let (a0, a1) = (poly.coeffs[0], poly.coeffs[1]);
    if !(a0 > 0.0) {
        return Err(MnaError::NoOscillatoryPair(a0));
    }
    let omega0 = a0.sqrt();
    let tol = MARGINAL_RELATIVE * omega0;
    let growth = if a1.abs() <= tol {
        Growth::Marginal
    } else if a1 < 0.0 {
        Growth::Growing
    } else {
        Growth::Decaying
    };
    Ok(OscAnalysis {
        omega0,
        f0: omega0 / (2.0 * PI),
        a1,
        oscillates: growth != Growth::Decaying,
        growth,
    })
}

//! Netlist data model and line-oriented parser for grounded-element conveyor
//! circuits.
//!
//! ```text
//! * comment
//! R1 n1 0 2k
//! C1 n1 0 10p
//! X1 DVCC Y1=n1 Y2=n2 X=n3 Z1=n2 Z2=n1 [alpha1=..] [alpha2=..] [beta1=..] [beta2=..] [vsat=..] [sat=hard|tanh|none]
//! .out V01 n3
//! ```
//!
//! Every resistor and capacitor has exactly one terminal on ground ("0").

use std::collections::HashSet;
use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::dvcc::{DvccParams, ParamError, SatModel};

pub const GROUND: &str = "0";

/// Value suffixes, longest first so `meg` is tried before `m`.
const SUFFIXES: [(&str, f64); 8] = [
    ("meg", 1e6),
    ("f", 1e-15),
    ("p", 1e-12),
    ("n", 1e-9),
    ("u", 1e-6),
    ("m", 1e-3),
    ("k", 1e3),
    ("g", 1e9),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Resistor {
    pub name: String,
    pub node: String,
    pub ohms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Capacitor {
    pub name: String,
    pub node: String,
    pub farads: f64,
}

/// Node assignment of the five conveyor terminals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TerminalMap {
    pub y1: String,
    pub y2: String,
    pub x: String,
    pub z1: String,
    pub z2: String,
}

impl TerminalMap {
    fn nodes(&self) -> [&str; 5] {
        [&self.y1, &self.y2, &self.x, &self.z1, &self.z2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dvcc {
    pub name: String,
    pub terminals: TerminalMap,
    pub params: DvccParams,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Element {
    Resistor(Resistor),
    Capacitor(Capacitor),
    Dvcc(Dvcc),
}

impl Element {
    pub fn name(&self) -> &str {
        match self {
            Element::Resistor(r) => &r.name,
            Element::Capacitor(c) => &c.name,
            Element::Dvcc(d) => &d.name,
        }
    }

    /// Terminal nodes in a fixed order (ground included).
    pub fn nodes(&self) -> Vec<&str> {
        match self {
            Element::Resistor(r) => vec![&r.node, GROUND],
            Element::Capacitor(c) => vec![&c.node, GROUND],
            Element::Dvcc(d) => d.terminals.nodes().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Probe {
    pub label: String,
    pub node: String,
}

/// A circuit: elements plus labelled output taps. Nodes are the non-ground
/// names referenced by elements, in order of first appearance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Netlist {
    pub elements: Vec<Element>,
    pub probes: Vec<Probe>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("duplicate element name `{0}`")]
    DuplicateElement(String),
    #[error("duplicate probe label `{0}`")]
    DuplicateProbe(String),
    #[error("non-grounded passive `{0}`: both terminals on ground")]
    NonGroundedPassive(String),
    #[error("`{name}` has nonpositive value {value}")]
    NonPositiveValue { name: String, value: f64 },
    #[error("`{0}`: X terminal grounded")]
    XGrounded(String),
    #[error("`{dvcc}`: X node `{node}` has no grounded resistor")]
    XWithoutResistor { dvcc: String, node: String },
    #[error("`{name}`: {source}")]
    BadParams { name: String, source: ParamError },
    #[error("probe `{label}` references undeclared node `{node}`")]
    UndeclaredProbeNode { label: String, node: String },
    #[error("no dynamic elements")]
    NoDynamicElements,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetlistError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: duplicate name `{name}`")]
    DuplicateName { line: usize, name: String },
    #[error("line {line}: `{name}` is missing terminal role {role}")]
    UndeclaredRole {
        line: usize,
        name: String,
        role: &'static str,
    },
    #[error("line {line}: non-grounded passive `{name}`")]
    NonGroundedPassive { line: usize, name: String },
    #[error("line {line}: `{name}` has nonpositive value {value}")]
    NonPositiveValue { line: usize, name: String, value: f64 },
    #[error("invalid netlist: {}", join_errors(.0))]
    Invalid(Vec<ValidationError>),
}

fn join_errors(errors: &[ValidationError]) -> String {
    errors.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl NetlistError {
    pub fn line(&self) -> Option<usize> {
        match self {
            NetlistError::Syntax { line, .. }
            | NetlistError::DuplicateName { line, .. }
            | NetlistError::UndeclaredRole { line, .. }
            | NetlistError::NonGroundedPassive { line, .. }
            | NetlistError::NonPositiveValue { line, .. } => Some(*line),
            NetlistError::Invalid(_) => None,
        }
    }
}

impl Netlist {
    /// Non-ground nodes in order of first appearance among element terminals.
    pub fn nodes(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for node in self.elements.iter().flat_map(Element::nodes) {
            if node != GROUND && seen.insert(node) {
                out.push(node);
            }
        }
        out
    }

    pub fn resistors(&self) -> impl Iterator<Item = &Resistor> {
        self.elements.iter().filter_map(|e| match e {
            Element::Resistor(r) => Some(r),
            _ => None,
        })
    }

    pub fn capacitors(&self) -> impl Iterator<Item = &Capacitor> {
        self.elements.iter().filter_map(|e| match e {
            Element::Capacitor(c) => Some(c),
            _ => None,
        })
    }

    pub fn dvccs(&self) -> impl Iterator<Item = &Dvcc> {
        self.elements.iter().filter_map(|e| match e {
            Element::Dvcc(d) => Some(d),
            _ => None,
        })
    }

    /// Checks every structural invariant and reports all violations.
    pub fn validate(&self) -> Result<(), Vec<ValidationError>> {
        let mut errors = Vec::new();

        let mut names = HashSet::new();
        for e in &self.elements {
            if !names.insert(e.name()) {
                errors.push(ValidationError::DuplicateElement(e.name().to_string()));
            }
        }
        let mut labels = HashSet::new();
        for p in &self.probes {
            if !labels.insert(p.label.as_str()) {
                errors.push(ValidationError::DuplicateProbe(p.label.clone()));
            }
        }

        for e in &self.elements {
            match e {
                Element::Resistor(Resistor {
                    name,
                    node,
                    ohms: value,
                })
                | Element::Capacitor(Capacitor {
                    name,
                    node,
                    farads: value,
                }) => {
                    if node == GROUND {
                        errors.push(ValidationError::NonGroundedPassive(name.clone()));
                    }
                    if !(*value > 0.0 && value.is_finite()) {
                        errors.push(ValidationError::NonPositiveValue {
                            name: name.clone(),
                            value: *value,
                        });
                    }
                }
                Element::Dvcc(d) => {
                    if let Err(source) = d.params.validate() {
                        errors.push(ValidationError::BadParams {
                            name: d.name.clone(),
                            source,
                        });
                    }
                    if d.terminals.x == GROUND {
                        errors.push(ValidationError::XGrounded(d.name.clone()));
                    } else if !self.resistors().any(|r| r.node == d.terminals.x) {
                        errors.push(ValidationError::XWithoutResistor {
                            dvcc: d.name.clone(),
                            node: d.terminals.x.clone(),
                        });
                    }
                }
            }
        }

        let nodes: HashSet<&str> = self.nodes().into_iter().collect();
        for p in &self.probes {
            if p.node != GROUND && !nodes.contains(p.node.as_str()) {
                errors.push(ValidationError::UndeclaredProbeNode {
                    label: p.label.clone(),
                    node: p.node.clone(),
                });
            }
        }

        if self.capacitors().next().is_none() {
            errors.push(ValidationError::NoDynamicElements);
        }

        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }

    /// Serializes to the text grammar accepted by [`parse`].
    pub fn render(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Netlist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.elements {
            match e {
                Element::Resistor(r) => writeln!(f, "{} {} 0 {}", r.name, r.node, format_value(r.ohms))?,
                Element::Capacitor(c) => writeln!(f, "{} {} 0 {}", c.name, c.node, format_value(c.farads))?,
                Element::Dvcc(d) => {
                    let t = &d.terminals;
                    let p = &d.params;
                    writeln!(
                        f,
                        "{} DVCC Y1={} Y2={} X={} Z1={} Z2={} alpha1={} alpha2={} beta1={} beta2={} vsat={} sat={}",
                        d.name,
                        t.y1,
                        t.y2,
                        t.x,
                        t.z1,
                        t.z2,
                        format_value(p.alpha1),
                        format_value(p.alpha2),
                        format_value(p.beta1),
                        format_value(p.beta2),
                        format_value(p.v_sat),
                        p.sat_model
                    )?
                }
            }
        }
        for p in &self.probes {
            writeln!(f, ".out {} {}", p.label, p.node)?;
        }
        Ok(())
    }
}

/// Formats a value with an engineering suffix when that reads back exactly,
/// otherwise in shortest round-trip exponent form.
pub fn format_value(v: f64) -> String {
    let plain = format!("{v}");
    if (1e-3..1e3).contains(&v.abs()) && plain.len() <= 8 {
        return plain;
    }
    if v != 0.0 && v.is_finite() {
        for (suffix, scale) in SUFFIXES {
            let mantissa = v / scale;
            if (1.0..1000.0).contains(&mantissa.abs()) {
                let s = format!("{mantissa}{suffix}");
                if s.len() <= 12 && parse_value(&s) == Ok(v) {
                    return s;
                }
            }
        }
    }
    if plain.len() <= 12 && parse_value(&plain) == Ok(v) {
        plain
    } else {
        format!("{v:e}")
    }
}

/// Parses a number with an optional SPICE suffix (`2k`, `10p`, `1meg`, `1.5e-3`).
pub fn parse_value(token: &str) -> Result<f64, String> {
    let bytes = token.as_bytes();
    let mut end = 0;
    if end < bytes.len() && (bytes[end] == b'+' || bytes[end] == b'-') {
        end += 1;
    }
    let digits_start = end;
    while end < bytes.len() && (bytes[end].is_ascii_digit() || bytes[end] == b'.') {
        end += 1;
    }
    if end == digits_start {
        return Err(format!("invalid number `{token}`"));
    }
    // exponent only if followed by digits, so `1e` stays an error and `1meg` is not eaten
    if end < bytes.len() && (bytes[end] == b'e' || bytes[end] == b'E') {
        let mut k = end + 1;
        if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
            k += 1;
        }
        if k < bytes.len() && bytes[k].is_ascii_digit() {
            while k < bytes.len() && bytes[k].is_ascii_digit() {
                k += 1;
            }
            end = k;
        }
    }
    let number: f64 = token[..end].parse().map_err(|_| format!("invalid number `{token}`"))?;
    let suffix = token[end..].to_ascii_lowercase();
    if suffix.is_empty() {
        return Ok(number);
    }
    SUFFIXES
        .iter()
        .find(|(s, _)| *s == suffix)
        .map(|(_, scale)| number * scale)
        .ok_or_else(|| format!("unknown unit suffix `{}` in `{token}`", &token[end..]))
}

fn is_identifier(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '-')
}

/// Parses and validates netlist text.
pub fn parse(text: &str) -> Result<Netlist, NetlistError> {
    let mut netlist = Netlist::default();
    let mut names: HashSet<String> = HashSet::new();
    let mut labels: HashSet<String> = HashSet::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('*') {
            continue;
        }
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        let syntax = |message: String| NetlistError::Syntax { line, message };

        let head = tokens[0];
        if head.eq_ignore_ascii_case(".out") {
            if tokens.len() != 3 {
                return Err(syntax("expected `.out <label> <node>`".into()));
            }
            let (label, node) = (tokens[1], tokens[2]);
            if !is_identifier(label) || !is_identifier(node) {
                return Err(syntax(format!("invalid probe `{label} {node}`")));
            }
            if !labels.insert(label.to_string()) {
                return Err(NetlistError::DuplicateName {
                    line,
                    name: label.to_string(),
                });
            }
            netlist.probes.push(Probe {
                label: label.into(),
                node: node.into(),
            });
            continue;
        }
        if head.starts_with('.') {
            return Err(syntax(format!("unknown directive `{head}`")));
        }
        if !is_identifier(head) || head.len() < 2 {
            return Err(syntax(format!("invalid element name `{head}`")));
        }
        if names.contains(head) {
            return Err(NetlistError::DuplicateName {
                line,
                name: head.to_string(),
            });
        }

        let element = match head.as_bytes()[0].to_ascii_uppercase() {
            kind @ (b'R' | b'C') => {
                if tokens.len() != 4 {
                    return Err(syntax(format!("expected `{head} <node> 0 <value>`")));
                }
                let (a, b) = (tokens[1], tokens[2]);
                if !is_identifier(a) || !is_identifier(b) {
                    return Err(syntax(format!("invalid node in `{trimmed}`")));
                }
                let node = match (a == GROUND, b == GROUND) {
                    (false, true) => a,
                    (true, false) => b,
                    _ => {
                        return Err(NetlistError::NonGroundedPassive {
                            line,
                            name: head.to_string(),
                        })
                    }
                };
                let value = parse_value(tokens[3]).map_err(syntax)?;
                if !(value > 0.0 && value.is_finite()) {
                    return Err(NetlistError::NonPositiveValue {
                        line,
                        name: head.to_string(),
                        value,
                    });
                }
                if kind == b'R' {
                    Element::Resistor(Resistor {
                        name: head.into(),
                        node: node.into(),
                        ohms: value,
                    })
                } else {
                    Element::Capacitor(Capacitor {
                        name: head.into(),
                        node: node.into(),
                        farads: value,
                    })
                }
            }
            b'X' => Element::Dvcc(parse_dvcc(line, head, &tokens[1..])?),
            _ => return Err(syntax(format!("unknown element type `{head}`"))),
        };
        names.insert(head.to_string());
        netlist.elements.push(element);
    }

    netlist.validate().map_err(NetlistError::Invalid)?;
    Ok(netlist)
}

fn parse_dvcc(line: usize, name: &str, args: &[&str]) -> Result<Dvcc, NetlistError> {
    let syntax = |message: String| NetlistError::Syntax { line, message };
    match args.first() {
        Some(model) if model.eq_ignore_ascii_case("DVCC") => {}
        _ => return Err(syntax(format!("`{name}`: expected model DVCC"))),
    }

    let mut roles: [Option<String>; 5] = Default::default();
    let mut params = DvccParams::ideal();
    let mut seen = HashSet::new();
    for arg in &args[1..] {
        let (key, value) = arg
            .split_once('=')
            .ok_or_else(|| syntax(format!("`{name}`: expected key=value, got `{arg}`")))?;
        let key = key.to_ascii_lowercase();
        if !seen.insert(key.clone()) {
            return Err(syntax(format!("`{name}`: repeated attribute `{key}`")));
        }
        let role = ["y1", "y2", "x", "z1", "z2"].iter().position(|r| *r == key);
        if let Some(i) = role {
            if !is_identifier(value) {
                return Err(syntax(format!("`{name}`: invalid node `{value}`")));
            }
            roles[i] = Some(value.to_string());
            continue;
        }
        let num = || parse_value(value).map_err(syntax);
        match key.as_str() {
            "alpha1" => params.alpha1 = num()?,
            "alpha2" => params.alpha2 = num()?,
            "beta1" => params.beta1 = num()?,
            "beta2" => params.beta2 = num()?,
            "vsat" => params.v_sat = num()?,
            "sat" => params.sat_model = value.parse::<SatModel>().map_err(syntax)?,
            _ => return Err(syntax(format!("`{name}`: unknown attribute `{key}`"))),
        }
    }

    let [y1, y2, x, z1, z2] = roles;
    let take = |v: Option<String>, role: &'static str| {
        v.ok_or(NetlistError::UndeclaredRole {
            line,
            name: name.to_string(),
            role,
        })
    };
    Ok(Dvcc {
        name: name.to_string(),
        terminals: TerminalMap {
            y1: take(y1, "Y1")?,
            y2: take(y2, "Y2")?,
            x: take(x, "X")?,
            z1: take(z1, "Z1")?,
            z2: take(z2, "Z2")?,
        },
        params,
    })
}

/// Builds the single-conveyor quadrature oscillator.
///
/// `n1` carries R1 ∥ C1 and drives Y1 while receiving Z2; `n2` carries C2,
/// drives Y2 and receives Z1; `n3` is the X terminal loaded by R2. Probes:
/// `V01` at `n3`, `V02` at `n2`.
pub fn canonical_quadrature_netlist(r1: f64, r2: f64, c1: f64, c2: f64, params: DvccParams) -> Netlist {
    let res = |name: &str, node: &str, ohms| {
        Element::Resistor(Resistor {
            name: name.into(),
            node: node.into(),
            ohms,
        })
    };
    let cap = |name: &str, node: &str, farads| {
        Element::Capacitor(Capacitor {
            name: name.into(),
            node: node.into(),
            farads,
        })
    };
    Netlist {
        elements: vec![
            res("R1", "n1", r1),
            cap("C1", "n1", c1),
            cap("C2", "n2", c2),
            res("R2", "n3", r2),
            Element::Dvcc(Dvcc {
                name: "X1".into(),
                terminals: TerminalMap {
                    y1: "n1".into(),
                    y2: "n2".into(),
                    x: "n3".into(),
                    z1: "n2".into(),
                    z2: "n1".into(),
                },
                params,
            }),
        ],
        probes: vec![
            Probe {
                label: "V01".into(),
                node: "n3".into(),
            },
            Probe {
                label: "V02".into(),
                node: "n2".into(),
            },
        ],
    }
}

/// Writes a short header comment followed by the rendered netlist.
pub fn render_with_title(netlist: &Netlist, title: &str) -> String {
    let mut s = String::new();
    for line in title.lines() {
        let _ = writeln!(s, "* {line}");
    }
    s.push_str(&netlist.render());
    s
}

//! RC netlist parsing and MNA assembly.
//!
//! Format, one element per line:
//!
//! ```text
//! * comment            ; also a comment
//! R1 n1 n2 1k
//! C1 n2 0  10f
//! ```
//!
//! Node `0` is ground. Values accept the SPICE suffixes
//! `f p n u m k meg g` (case-insensitive); bare numbers are SI.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt::Write as _;

use sprs::CsMat;
use thiserror::Error;

use crate::sparse::{self, SpdFactor};

pub const GROUND: &str = "0";

/// Series resistance used to repair nodes with no resistive path to the port.
pub const EPSILON_OHMS: f64 = 1e-3;

/// Suffix appended to the port name for the synthetic driving node.
pub const DRIVE_NODE_SUFFIX: &str = "#drv";

#[derive(Debug, Clone, Error, PartialEq)]
pub enum NetlistError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown unit suffix `{suffix}`")]
    UnknownSuffix { line: usize, suffix: String },
    #[error("line {line}: {name} needs a positive finite value, got {value}")]
    NonPositive { line: usize, name: String, value: f64 },
    #[error("line {line}: duplicate element name {name}")]
    Duplicate { line: usize, name: String },
    #[error("netlist contains no elements")]
    Empty,
    #[error("port node `{0}` does not appear in the netlist")]
    MissingPort(String),
    #[error("port node may not be ground")]
    GroundPort,
    #[error("conductance matrix is singular after repair; isolated nodes: {0:?}")]
    Singular(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementKind {
    Resistor,
    Capacitor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub name: String,
    pub kind: ElementKind,
    pub a: String,
    pub b: String,
    /// Ohms for resistors, farads for capacitors.
    pub value: f64,
}

/// Resistor/capacitor topology with a designated driver port.
#[derive(Debug, Clone, PartialEq)]
pub struct RcNetwork {
    /// Non-ground node names in order of first appearance.
    pub nodes: Vec<String>,
    pub elements: Vec<Element>,
    pub port: String,
}

impl RcNetwork {
    /// Build a network from already-validated elements (used by generators).
    pub fn from_elements(elements: Vec<Element>, port: &str) -> Result<Self, NetlistError> {
        if elements.is_empty() {
            return Err(NetlistError::Empty);
        }
        if port == GROUND {
            return Err(NetlistError::GroundPort);
        }
        let mut nodes = Vec::new();
        let mut seen = HashSet::new();
        for (k, e) in elements.iter().enumerate() {
            if !(e.value.is_finite() && e.value > 0.0) {
                return Err(NetlistError::NonPositive {
                    line: k + 1,
                    name: e.name.clone(),
                    value: e.value,
                });
            }
            for n in [&e.a, &e.b] {
                if n != GROUND && seen.insert(n.clone()) {
                    nodes.push(n.clone());
                }
            }
        }
        if !seen.contains(port) {
            return Err(NetlistError::MissingPort(port.to_string()));
        }
        Ok(Self {
            nodes,
            elements,
            port: port.to_string(),
        })
    }

    pub fn resistors(&self) -> impl Iterator<Item = &Element> {
        self.elements
            .iter()
            .filter(|e| e.kind == ElementKind::Resistor)
    }

    pub fn capacitors(&self) -> impl Iterator<Item = &Element> {
        self.elements
            .iter()
            .filter(|e| e.kind == ElementKind::Capacitor)
    }

    /// Sum of every capacitor value, coupling capacitors included.
    pub fn total_capacitance(&self) -> f64 {
        self.capacitors().map(|e| e.value).sum()
    }

    pub fn total_resistance(&self) -> f64 {
        self.resistors().map(|e| e.value).sum()
    }

    pub fn to_netlist_string(&self) -> String {
        let mut out = String::new();
        for e in &self.elements {
            let _ = writeln!(out, "{} {} {} {:e}", e.name, e.a, e.b, e.value);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ValueError {
    Malformed,
    UnknownSuffix(String),
}

/// Parse a numeric value with an optional SPICE magnitude suffix.
pub fn parse_value(token: &str) -> Result<f64, ValueError> {
    let bytes = token.as_bytes();
    let mut end = 0;
    if end < bytes.len() && (bytes[end] == b'+' || bytes[end] == b'-') {
        end += 1;
    }
    while end < bytes.len() && (bytes[end].is_ascii_digit() || bytes[end] == b'.') {
        end += 1;
    }
    // exponent only when followed by a digit (or sign + digit)
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
    let (num, suffix) = token.split_at(end);
    let shift: i32 = match suffix.to_ascii_lowercase().as_str() {
        "" => 0,
        "f" => -15,
        "p" => -12,
        "n" => -9,
        "u" => -6,
        "m" => -3,
        "k" => 3,
        "meg" => 6,
        "g" => 9,
        _ => return Err(ValueError::UnknownSuffix(suffix.to_string())),
    };
    // fold the suffix into the decimal exponent so "10f" parses as exactly 1e-14
    let (mantissa, exp) = match num.find(['e', 'E']) {
        Some(k) => (&num[..k], num[k + 1..].parse::<i32>().map_err(|_| ValueError::Malformed)?),
        None => (num, 0),
    };
    if mantissa.is_empty() || mantissa == "+" || mantissa == "-" {
        return Err(ValueError::Malformed);
    }
    format!("{mantissa}e{}", exp + shift)
        .parse()
        .map_err(|_| ValueError::Malformed)
}

pub fn parse_netlist(text: &str, port: &str) -> Result<RcNetwork, NetlistError> {
    let mut elements = Vec::new();
    let mut names = HashSet::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let body = raw.split(';').next().unwrap_or("").trim();
        if body.is_empty() || body.starts_with('*') {
            continue;
        }
        let fields: Vec<&str> = body.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(NetlistError::Syntax {
                line,
                msg: format!("expected `name nodeA nodeB value`, got {} fields", fields.len()),
            });
        }
        let name = fields[0];
        let kind = match name.chars().next().map(|c| c.to_ascii_uppercase()) {
            Some('R') => ElementKind::Resistor,
            Some('C') => ElementKind::Capacitor,
            _ => {
                return Err(NetlistError::Syntax {
                    line,
                    msg: format!("unsupported element `{name}` (only R and C)"),
                })
            }
        };
        let value = parse_value(fields[3]).map_err(|e| match e {
            ValueError::Malformed => NetlistError::Syntax {
                line,
                msg: format!("cannot parse value `{}`", fields[3]),
            },
            ValueError::UnknownSuffix(suffix) => NetlistError::UnknownSuffix { line, suffix },
        })?;
        if !(value.is_finite() && value > 0.0) {
            return Err(NetlistError::NonPositive {
                line,
                name: name.to_string(),
                value,
            });
        }
        let (a, b) = (fields[1], fields[2]);
        if a == b {
            return Err(NetlistError::Syntax {
                line,
                msg: format!("{name} connects node `{a}` to itself"),
            });
        }
        if !names.insert(name.to_ascii_uppercase()) {
            return Err(NetlistError::Duplicate {
                line,
                name: name.to_string(),
            });
        }
        elements.push(Element {
            name: name.to_string(),
            kind,
            a: a.to_string(),
            b: b.to_string(),
            value,
        });
    }
    RcNetwork::from_elements(elements, port)
}

/// MNA matrices of `C x' = -G x + B u`, `i = L^T x`, over every non-ground
/// node (repair nodes included).
#[derive(Debug, Clone)]
pub struct MnaSystem {
    pub g: CsMat<f64>,
    pub c: CsMat<f64>,
    /// Port incidence; the output incidence L is identical.
    pub b: Vec<f64>,
    pub node_names: Vec<String>,
    pub node_index: HashMap<String, usize>,
    /// Row of the driving node (the repaired port when one was inserted).
    pub port: usize,
    /// Row of the user-named port node.
    pub physical_port: usize,
    /// Epsilon resistors added by the repair pass.
    pub repairs: Vec<Element>,
    pub total_capacitance: f64,
    pub total_resistance: f64,
}

/// Port-eliminated view: the port voltage is the input, internal node
/// voltages are the state.
#[derive(Debug, Clone)]
pub struct PortPartition {
    pub g_ii: CsMat<f64>,
    pub c_ii: CsMat<f64>,
    /// Coupling column `G[internal, port]`.
    pub g_ip: Vec<f64>,
    pub g_pp: f64,
    /// Internal index -> MNA row.
    pub rows: Vec<usize>,
}

impl MnaSystem {
    pub fn dim(&self) -> usize {
        self.node_names.len()
    }

    pub fn l(&self) -> &[f64] {
        &self.b
    }

    pub fn partition(&self) -> PortPartition {
        let n = self.dim();
        let p = self.port;
        let mut map = vec![usize::MAX; n];
        let mut rows = Vec::with_capacity(n - 1);
        for r in 0..n {
            if r != p {
                map[r] = rows.len();
                rows.push(r);
            }
        }
        let m = rows.len();
        let mut gt = Vec::new();
        let mut g_ip = vec![0.0; m];
        let mut g_pp = 0.0;
        for (v, (i, j)) in self.g.iter() {
            match (i == p, j == p) {
                (true, true) => g_pp += v,
                (false, true) => g_ip[map[i]] += v,
                (true, false) => {}
                (false, false) => gt.push((map[i], map[j], *v)),
            }
        }
        let mut ct = Vec::new();
        for (v, (i, j)) in self.c.iter() {
            if i != p && j != p {
                ct.push((map[i], map[j], *v));
            }
        }
        PortPartition {
            g_ii: sparse::from_triplets(m, &gt),
            c_ii: sparse::from_triplets(m, &ct),
            g_ip,
            g_pp,
            rows,
        }
    }
}

/// Stamp the network into MNA form, inserting epsilon resistors where a node
/// has no resistive path to the port.
pub fn assemble_mna(net: &RcNetwork) -> Result<MnaSystem, NetlistError> {
    let mut names: Vec<String> = net.nodes.clone();
    let mut index: HashMap<String, usize> = names
        .iter()
        .enumerate()
        .map(|(k, n)| (n.clone(), k))
        .collect();
    let physical_port = *index
        .get(&net.port)
        .ok_or_else(|| NetlistError::MissingPort(net.port.clone()))?;

    let mut r_adj: Vec<Vec<usize>> = vec![Vec::new(); names.len()];
    let mut c_adj: Vec<Vec<usize>> = vec![Vec::new(); names.len()];
    let mut port_has_cap = false;
    for e in &net.elements {
        let a = index.get(&e.a).copied();
        let b = index.get(&e.b).copied();
        if e.kind == ElementKind::Capacitor && (a == Some(physical_port) || b == Some(physical_port))
        {
            port_has_cap = true;
        }
        if let (Some(a), Some(b)) = (a, b) {
            let adj = match e.kind {
                ElementKind::Resistor => &mut r_adj,
                ElementKind::Capacitor => &mut c_adj,
            };
            adj[a].push(b);
            adj[b].push(a);
        }
    }

    let mut repairs = Vec::new();
    let mut port = physical_port;
    if port_has_cap {
        let drv = format!("{}{}", net.port, DRIVE_NODE_SUFFIX);
        port = names.len();
        index.insert(drv.clone(), port);
        names.push(drv.clone());
        r_adj.push(vec![physical_port]);
        c_adj.push(Vec::new());
        r_adj[physical_port].push(port);
        repairs.push(Element {
            name: format!("Reps{}", repairs.len()),
            kind: ElementKind::Resistor,
            a: drv,
            b: net.port.clone(),
            value: EPSILON_OHMS,
        });
    }

    let mut reached = vec![false; names.len()];
    flood(&r_adj, port, &mut reached);
    loop {
        let Some(orphan) = (0..names.len()).find(|&k| !reached[k]) else {
            break;
        };
        // prefer a reached capacitive neighbour of any unreached node
        let mut pick = None;
        for k in (0..names.len()).filter(|&k| !reached[k]) {
            if let Some(&nb) = c_adj[k].iter().find(|&&nb| reached[nb]) {
                pick = Some((k, nb));
                break;
            }
        }
        let (node, anchor) = pick.unwrap_or((orphan, physical_port));
        repairs.push(Element {
            name: format!("Reps{}", repairs.len()),
            kind: ElementKind::Resistor,
            a: names[node].clone(),
            b: names[anchor].clone(),
            value: EPSILON_OHMS,
        });
        r_adj[node].push(anchor);
        r_adj[anchor].push(node);
        flood(&r_adj, node, &mut reached);
    }

    let n = names.len();
    let mut gt = Vec::new();
    let mut ct = Vec::new();
    for e in net.elements.iter().chain(repairs.iter()) {
        let a = index.get(&e.a).copied();
        let b = index.get(&e.b).copied();
        let (trips, v) = match e.kind {
            ElementKind::Resistor => (&mut gt, 1.0 / e.value),
            ElementKind::Capacitor => (&mut ct, e.value),
        };
        stamp(trips, a, b, v);
    }
    let mut b = vec![0.0; n];
    b[port] = 1.0;
    let sys = MnaSystem {
        g: sparse::from_triplets(n, &gt),
        c: sparse::from_triplets(n, &ct),
        b,
        node_names: names,
        node_index: index,
        port,
        physical_port,
        repairs,
        total_capacitance: net.total_capacitance(),
        total_resistance: net.total_resistance(),
    };
    check_grounded_block(&sys)?;
    Ok(sys)
}

fn stamp(trips: &mut Vec<(usize, usize, f64)>, a: Option<usize>, b: Option<usize>, v: f64) {
    if let Some(a) = a {
        trips.push((a, a, v));
    }
    if let Some(b) = b {
        trips.push((b, b, v));
    }
    if let (Some(a), Some(b)) = (a, b) {
        trips.push((a, b, -v));
        trips.push((b, a, -v));
    }
}

fn flood(adj: &[Vec<usize>], start: usize, reached: &mut [bool]) {
    if reached[start] {
        return;
    }
    let mut queue = VecDeque::from([start]);
    reached[start] = true;
    while let Some(k) = queue.pop_front() {
        for &nb in &adj[k] {
            if !reached[nb] {
                reached[nb] = true;
                queue.push_back(nb);
            }
        }
    }
}

/// The port-eliminated conductance block must be positive definite.
fn check_grounded_block(sys: &MnaSystem) -> Result<(), NetlistError> {
    if sys.dim() == 1 {
        return Ok(());
    }
    let part = sys.partition();
    SpdFactor::new(&part.g_ii).map(|_| ()).map_err(|e| {
        let crate::sparse::FactorError::Singular { index } = e;
        let name = part
            .rows
            .get(index)
            .map(|&r| sys.node_names[r].clone())
            .unwrap_or_default();
        NetlistError::Singular(vec![name])
    })
}

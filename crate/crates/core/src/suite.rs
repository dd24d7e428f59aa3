//! Synthetic benchmark nets and the DCM / lumped-baseline / oracle comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dcm::{self, CurrentMetrics, DcmConfig, DcmError};
use crate::driverlib::{
    characterize, default_cap_grid, CharacterizeOptions, Direction, DriverCharTable, DriverError, DriverModel,
};
use crate::mor::{reduce, MorError, ReducedAdmittance};
use crate::netlist::{assemble_mna, Element, ElementKind, MnaSystem, NetlistError, RcNetwork};
use crate::oracle::{simulate_driver, OracleError, TransientResult};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SuiteError {
    #[error("{name}: {source}")]
    Netlist { name: String, source: NetlistError },
    #[error("{name}: {source}")]
    Mor { name: String, source: MorError },
    #[error("{name}: {source}")]
    Driver { name: String, source: DriverError },
    #[error("{name}: {source}")]
    Dcm { name: String, source: DcmError },
    #[error("{name}: {source}")]
    Oracle { name: String, source: OracleError },
    #[error("{name}: oracle never reached the metrics window end")]
    NoWindow { name: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Ladder,
    Tree,
    Bus,
    WordLine,
    /// A net supplied by the user.
    Custom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub name: String,
    pub topology: Topology,
    pub net: RcNetwork,
    pub driver: String,
    pub model: DriverModel,
    pub vdd: f64,
    pub slew: f64,
    pub direction: Direction,
    pub resistors: usize,
    pub capacitors: usize,
    pub c_total: f64,
    /// Largest port-to-node path resistance.
    pub r_path: f64,
    /// Wire resistance at least half the driver's effective resistance.
    pub shielded: bool,
}

impl Benchmark {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: String,
        topology: Topology,
        net: RcNetwork,
        driver: String,
        model: DriverModel,
        vdd: f64,
        slew: f64,
        direction: Direction,
    ) -> Self {
        let r_path = path_resistance(&net);
        Self {
            name,
            topology,
            driver,
            vdd,
            slew,
            direction,
            resistors: net.resistors().count(),
            capacitors: net.capacitors().count(),
            c_total: net.total_capacitance(),
            r_path,
            shielded: r_path >= 0.5 * effective_resistance(&model, vdd),
            model,
            net,
        }
    }
}

/// Rough output resistance used to classify shielding.
pub fn effective_resistance(model: &DriverModel, vdd: f64) -> f64 {
    match *model {
        DriverModel::TheveninRamp { r_drv } => r_drv,
        DriverModel::MosLike { i_sat, .. } => 0.5 * vdd / i_sat,
    }
}

/// The two driver models of the suite.
pub fn suite_drivers() -> Vec<(String, DriverModel)> {
    vec![
        ("thv".into(), DriverModel::TheveninRamp { r_drv: 600.0 }),
        (
            "mos".into(),
            DriverModel::MosLike {
                i_sat: 1e-3,
                v_knee: 0.4,
                v_th: 0.3,
                c_couple: 1e-15,
                c_int: 1e-15,
            },
        ),
    ]
}

pub const SUITE_VDD: f64 = 1.1;
pub const SUITE_SLEWS: [f64; 3] = [10e-12, 50e-12, 150e-12];

struct Builder {
    elements: Vec<Element>,
    nodes: usize,
    nr: usize,
    nc: usize,
}

impl Builder {
    fn new() -> Self {
        Self {
            elements: Vec::new(),
            nodes: 1,
            nr: 0,
            nc: 0,
        }
    }

    fn node(&mut self) -> String {
        self.nodes += 1;
        format!("n{}", self.nodes - 1)
    }

    fn cap(&mut self, node: &str, c: f64) {
        self.nc += 1;
        self.elements.push(Element {
            name: format!("C{}", self.nc),
            kind: ElementKind::Capacitor,
            a: node.to_string(),
            b: "0".into(),
            value: c,
        });
    }

    /// Resistor from `from` to a new node, capacitor at the new node.
    fn segment(&mut self, from: &str, r: f64, c: f64) -> String {
        let to = self.node();
        self.nr += 1;
        self.elements.push(Element {
            name: format!("R{}", self.nr),
            kind: ElementKind::Resistor,
            a: from.to_string(),
            b: to.clone(),
            value: r,
        });
        self.cap(&to, c);
        to
    }

    fn finish(self) -> RcNetwork {
        RcNetwork::from_elements(self.elements, "n0").expect("generated nets are valid")
    }
}

fn jitter(rng: &mut ChaCha8Rng, x: f64) -> f64 {
    x * rng.random_range(0.8..1.2)
}

/// Uniform RC ladder with per-segment jitter.
pub fn ladder(rng: &mut ChaCha8Rng, segments: usize, r_total: f64, c_total: f64) -> RcNetwork {
    let mut b = Builder::new();
    let mut at = "n0".to_string();
    for _ in 0..segments {
        let (r, c) = (jitter(rng, r_total / segments as f64), jitter(rng, c_total / segments as f64));
        at = b.segment(&at, r, c);
    }
    b.finish()
}

/// Balanced tree: `fanout^k` segments on level `k < depth`.
pub fn tree(rng: &mut ChaCha8Rng, fanout: usize, depth: usize, r_path: f64, c_total: f64) -> RcNetwork {
    let segments: usize = (0..depth).map(|k| fanout.pow(k as u32)).sum();
    let mut b = Builder::new();
    // root segment, then `fanout` children per node
    let root = b.segment("n0", jitter(rng, r_path / depth as f64), jitter(rng, c_total / segments as f64));
    let mut level = vec![root];
    for _ in 1..depth {
        let mut next = Vec::new();
        for parent in &level {
            for _ in 0..fanout {
                let r = jitter(rng, r_path / depth as f64);
                let c = jitter(rng, c_total / segments as f64);
                next.push(b.segment(parent, r, c));
            }
        }
        level = next;
    }
    b.finish()
}

/// Trunk with branches to receivers; inactive drivers sit on the trunk as
/// fixed leaf capacitors.
pub fn bus(rng: &mut ChaCha8Rng, trunk: usize, branches: usize, r_total: f64, c_total: f64) -> RcNetwork {
    let branch_len = 5;
    let receiver = 0.04 * c_total;
    let idle_driver = 0.02 * c_total;
    let wire_c = c_total - branches as f64 * (receiver + idle_driver);
    let seg_count = trunk + branches * branch_len;
    let (r_seg, c_seg) = (r_total / trunk as f64, wire_c / seg_count as f64);
    let mut b = Builder::new();
    let mut trunk_nodes = Vec::new();
    let mut at = "n0".to_string();
    for _ in 0..trunk {
        at = b.segment(&at, jitter(rng, r_seg), jitter(rng, c_seg));
        trunk_nodes.push(at.clone());
    }
    for k in 0..branches {
        let tap = trunk_nodes[(k + 1) * trunk / (branches + 1)].clone();
        let mut at = tap.clone();
        for _ in 0..branch_len {
            at = b.segment(&at, jitter(rng, 0.5 * r_seg), jitter(rng, c_seg));
        }
        b.cap(&at, receiver);
        b.cap(&tap, idle_driver);
    }
    b.finish()
}

/// Long chain with a short stub (cell load) on every node.
pub fn word_line(rng: &mut ChaCha8Rng, cells: usize, r_total: f64, c_total: f64) -> RcNetwork {
    let mut b = Builder::new();
    let (r_seg, c_seg) = (r_total / cells as f64, 0.4 * c_total / cells as f64);
    let c_stub = 0.6 * c_total / cells as f64;
    let mut at = "n0".to_string();
    for _ in 0..cells {
        at = b.segment(&at, jitter(rng, r_seg), jitter(rng, c_seg));
        b.segment(&at, jitter(rng, 0.2 * r_seg), jitter(rng, c_stub));
    }
    b.finish()
}

fn path_resistance(net: &RcNetwork) -> f64 {
    let mut adj: BTreeMap<&str, Vec<(&str, f64)>> = BTreeMap::new();
    for e in net.resistors() {
        adj.entry(&e.a).or_default().push((&e.b, e.value));
        adj.entry(&e.b).or_default().push((&e.a, e.value));
    }
    let mut best = 0.0f64;
    let mut dist: BTreeMap<&str, f64> = BTreeMap::new();
    let mut stack = vec![(net.port.as_str(), 0.0)];
    while let Some((n, d)) = stack.pop() {
        if dist.contains_key(n) {
            continue;
        }
        dist.insert(n, d);
        best = best.max(d);
        for &(m, r) in adj.get(n).map(Vec::as_slice).unwrap_or(&[]) {
            if !dist.contains_key(m) && m != "0" {
                stack.push((m, d + r));
            }
        }
    }
    best
}

/// Deterministic suite: ladders of the given segment counts, two balanced
/// trees, a bus-like and a word-line-like net, each driven by both models at
/// three slews (rising output).
pub fn generate_suite(seed: u64, sizes: &[usize]) -> Vec<Benchmark> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nets: Vec<(String, Topology, RcNetwork)> = Vec::new();
    for &n in sizes {
        let (r, c) = (rng.random_range(2.5e3..4e3), rng.random_range(35e-15..50e-15));
        nets.push((format!("ladder{n}"), Topology::Ladder, ladder(&mut rng, n, r, c)));
    }
    let (r, c) = (rng.random_range(1.5e3..2.5e3), rng.random_range(35e-15..50e-15));
    nets.push(("tree2x8".into(), Topology::Tree, tree(&mut rng, 2, 8, r, c)));
    let (r, c) = (rng.random_range(1e3..2e3), rng.random_range(35e-15..50e-15));
    nets.push(("tree4x4".into(), Topology::Tree, tree(&mut rng, 4, 4, r, c)));
    let (r, c) = (rng.random_range(1.5e3..3e3), rng.random_range(35e-15..50e-15));
    nets.push(("bus120".into(), Topology::Bus, bus(&mut rng, 120, 6, r, c)));
    let (r, c) = (rng.random_range(2e3..3.5e3), rng.random_range(35e-15..50e-15));
    nets.push(("wordline256".into(), Topology::WordLine, word_line(&mut rng, 256, r, c)));

    let mut out = Vec::new();
    for (driver, model) in suite_drivers() {
        for &slew in &SUITE_SLEWS {
            for (name, topo, net) in &nets {
                out.push(Benchmark::new(
                    format!("{name}/{driver}/{:.0}ps", slew * 1e12),
                    *topo,
                    net.clone(),
                    driver.clone(),
                    model.clone(),
                    SUITE_VDD,
                    slew,
                    Direction::Rising,
                ));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub q: usize,
    pub dcm: DcmConfig,
    pub oracle_dt: f64,
    pub char_dt: f64,
    pub char_window: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            q: 4,
            dcm: DcmConfig::default(),
            oracle_dt: 2e-13,
            char_dt: 2e-13,
            char_window: 4e-10,
        }
    }
}

/// Driver identity for table caching: name, slew bits, direction.
pub type DriverKey = (String, u64, Direction);

fn key_of(b: &Benchmark) -> DriverKey {
    (b.driver.clone(), b.slew.to_bits(), b.direction)
}

/// Characterize every driver of the suite once, with the grid topped at the
/// largest net capacitance that driver sees.
pub fn characterize_suite(
    suite: &[Benchmark],
    cfg: &SuiteConfig,
) -> Result<BTreeMap<DriverKey, (DriverCharTable, f64)>, SuiteError> {
    let mut groups: BTreeMap<DriverKey, (&Benchmark, f64)> = BTreeMap::new();
    for b in suite {
        let e = groups.entry(key_of(b)).or_insert((b, 0.0));
        e.1 = e.1.max(b.c_total);
    }
    groups
        .into_par_iter()
        .map(|(key, (b, c_max))| {
            let start = Instant::now();
            let t = characterize(
                &b.driver,
                &b.model,
                b.vdd,
                b.slew,
                b.direction,
                &default_cap_grid(c_max),
                &CharacterizeOptions::new(cfg.char_window, cfg.char_dt),
            )
            .map_err(|source| SuiteError::Driver {
                name: b.driver.clone(),
                source,
            })?;
            Ok((key, (t, start.elapsed().as_secs_f64())))
        })
        .collect()
}

/// Everything about a benchmark that does not depend on the DCM settings.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub bench: Benchmark,
    pub sys: MnaSystem,
    pub ya: ReducedAdmittance,
    pub oracle: TransientResult,
    pub oracle_metrics: CurrentMetrics,
    pub oracle_runtime_s: f64,
    /// Metrics window: the oracle port's 99% crossing.
    pub window: f64,
}

fn crossing_window(b: &Benchmark, r: &TransientResult) -> Option<f64> {
    match b.direction {
        Direction::Rising => r.crossing(0.99 * b.vdd, true),
        Direction::Falling => r.crossing(0.01 * b.vdd, false),
    }
}

pub fn prepare(b: &Benchmark, table: &DriverCharTable, cfg: &SuiteConfig) -> Result<Prepared, SuiteError> {
    let name = b.name.clone();
    let sys = assemble_mna(&b.net).map_err(|source| SuiteError::Netlist {
        name: name.clone(),
        source,
    })?;
    let ya = reduce(&sys, cfg.q).map_err(|source| SuiteError::Mor {
        name: name.clone(),
        source,
    })?;
    let tau = ya
        .terms
        .iter()
        .map(|t| -1.0 / t.pole.re)
        .fold(0.0, f64::max);
    let window = table.window() + 8.0 * tau;
    let input = b.model.input_waveform(b.direction, b.vdd, b.slew);
    let start = Instant::now();
    let oracle = simulate_driver(&sys, &b.model, b.vdd, &input, cfg.oracle_dt, window)
        .map_err(|source| SuiteError::Oracle {
            name: name.clone(),
            source,
        })?;
    let oracle_runtime_s = start.elapsed().as_secs_f64();
    let w = crossing_window(b, &oracle).ok_or(SuiteError::NoWindow { name: name.clone() })?;
    let oracle_metrics = dcm::pwl_metrics(&oracle.current_waveform(), w)
        .map_err(|source| SuiteError::Dcm { name, source })?;
    Ok(Prepared {
        bench: b.clone(),
        sys,
        ya,
        oracle,
        oracle_metrics,
        oracle_runtime_s,
        window: w,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchmarkResult {
    pub name: String,
    pub topology: Topology,
    pub driver: String,
    pub slew_s: f64,
    pub shielded: bool,
    pub resistors: usize,
    pub capacitors: usize,
    #[serde(rename = "c_total_F")]
    pub c_total: f64,
    #[serde(rename = "c_first_F")]
    pub c_first: f64,
    #[serde(rename = "c_last_F")]
    pub c_last: f64,
    pub window_s: f64,
    pub oracle: CurrentMetrics,
    pub dcm: CurrentMetrics,
    pub baseline: CurrentMetrics,
    pub dcm_error: CurrentMetrics,
    pub baseline_error: CurrentMetrics,
    pub dcm_runtime_s: f64,
    pub oracle_runtime_s: f64,
    pub residual_max: f64,
    pub fallbacks: usize,
    pub c_steps_monotone: bool,
}

/// Run DCM and the lumped baseline on a prepared benchmark.
pub fn evaluate(p: &Prepared, table: &DriverCharTable, cfg: &DcmConfig) -> Result<BenchmarkResult, SuiteError> {
    let b = &p.bench;
    let err = |source| SuiteError::Dcm {
        name: b.name.clone(),
        source,
    };
    let start = Instant::now();
    let trace = dcm::run_dcm(table, &p.ya, cfg).map_err(err)?;
    let m_dcm = dcm::trace_metrics(&trace, p.window).map_err(err)?;
    let dcm_runtime_s = start.elapsed().as_secs_f64();
    let base = dcm::baseline_ctotal(table, b.c_total).map_err(err)?;
    let m_base = dcm::pwl_metrics(&base.current, p.window).map_err(err)?;
    let cs = trace.c_steps();
    Ok(BenchmarkResult {
        name: b.name.clone(),
        topology: b.topology,
        driver: b.driver.clone(),
        slew_s: b.slew,
        shielded: b.shielded,
        resistors: b.resistors,
        capacitors: b.capacitors,
        c_total: b.c_total,
        c_first: trace.c_eff_first,
        c_last: trace.c_eff_last,
        window_s: p.window,
        oracle: p.oracle_metrics,
        dcm: m_dcm,
        baseline: m_base,
        dcm_error: m_dcm.relative_error(&p.oracle_metrics),
        baseline_error: m_base.relative_error(&p.oracle_metrics),
        dcm_runtime_s,
        oracle_runtime_s: p.oracle_runtime_s,
        residual_max: trace.residual_max(),
        fallbacks: trace.fallbacks,
        c_steps_monotone: cs.windows(2).all(|w| w[1] >= w[0]),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct NSweepRow {
    pub n_steps: usize,
    pub mean_rms_error: f64,
    pub max_error: f64,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Totals {
    pub benchmarks: usize,
    pub dcm_runtime_s: f64,
    pub oracle_runtime_s: f64,
    pub characterization_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorReport {
    pub results: Vec<BenchmarkResult>,
    pub totals: Totals,
    pub n_sweep: Vec<NSweepRow>,
}

impl ErrorReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<28} {:>4} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "benchmark", "shld", "dcm avg", "dcm rms", "dcm pk", "base avg", "base rms", "base pk", "speedup"
        );
        for r in &self.results {
            let pct = |x: f64| format!("{:.2}%", 100.0 * x);
            let _ = writeln!(
                s,
                "{:<28} {:>4} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>7.1}x",
                r.name,
                if r.shielded { "yes" } else { "no" },
                pct(r.dcm_error.avg),
                pct(r.dcm_error.rms),
                pct(r.dcm_error.peak),
                pct(r.baseline_error.avg),
                pct(r.baseline_error.rms),
                pct(r.baseline_error.peak),
                r.oracle_runtime_s / r.dcm_runtime_s.max(1e-9),
            );
        }
        if !self.n_sweep.is_empty() {
            let _ = writeln!(s, "\n{:>6} {:>14} {:>10} {:>10}", "N", "mean rms err", "max err", "runtime");
            for row in &self.n_sweep {
                let _ = writeln!(
                    s,
                    "{:>6} {:>13.3}% {:>9.3}% {:>9.4}s",
                    row.n_steps,
                    100.0 * row.mean_rms_error,
                    100.0 * row.max_error,
                    row.runtime_s
                );
            }
        }
        let t = &self.totals;
        let _ = writeln!(
            s,
            "\n{} benchmarks; dcm {:.3}s, oracle {:.3}s, characterization {:.3}s",
            t.benchmarks, t.dcm_runtime_s, t.oracle_runtime_s, t.characterization_s
        );
        s
    }
}

/// Prepared suite plus its tables; reused by the comparison and N sweeps.
pub struct SuiteRun {
    pub tables: BTreeMap<DriverKey, (DriverCharTable, f64)>,
    pub prepared: Vec<Prepared>,
}

impl SuiteRun {
    pub fn new(suite: &[Benchmark], cfg: &SuiteConfig) -> Result<Self, SuiteError> {
        let tables = characterize_suite(suite, cfg)?;
        let prepared = suite
            .par_iter()
            .map(|b| prepare(b, &tables[&key_of(b)].0, cfg))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { tables, prepared })
    }

    pub fn table_for(&self, b: &Benchmark) -> &DriverCharTable {
        &self.tables[&key_of(b)].0
    }

    pub fn evaluate_all(&self, cfg: &DcmConfig) -> Result<Vec<BenchmarkResult>, SuiteError> {
        self.prepared
            .par_iter()
            .map(|p| evaluate(p, self.table_for(&p.bench), cfg))
            .collect()
    }

    /// Mean RMS error and total DCM runtime per step count, over the
    /// benchmarks accepted by `filter`. Runs sequentially so runtimes compare.
    pub fn n_sweep(
        &self,
        ns: &[usize],
        base: &DcmConfig,
        filter: impl Fn(&Benchmark) -> bool,
    ) -> Result<Vec<NSweepRow>, SuiteError> {
        let picked: Vec<&Prepared> = self.prepared.iter().filter(|p| filter(&p.bench)).collect();
        ns.iter()
            .map(|&n| {
                let cfg = DcmConfig {
                    n_steps: n,
                    ..base.clone()
                };
                let mut errs = Vec::new();
                let mut max_err = 0.0f64;
                let mut runtime = 0.0;
                for p in &picked {
                    let r = evaluate(p, self.table_for(&p.bench), &cfg)?;
                    errs.push(r.dcm_error.rms);
                    max_err = max_err.max(r.dcm_error.max_of_three());
                    runtime += r.dcm_runtime_s;
                }
                Ok(NSweepRow {
                    n_steps: n,
                    mean_rms_error: errs.iter().sum::<f64>() / errs.len().max(1) as f64,
                    max_error: max_err,
                    runtime_s: runtime,
                })
            })
            .collect()
    }

    pub fn report(&self, results: Vec<BenchmarkResult>, n_sweep: Vec<NSweepRow>) -> ErrorReport {
        ErrorReport {
            totals: Totals {
                benchmarks: results.len(),
                dcm_runtime_s: results.iter().map(|r| r.dcm_runtime_s).sum(),
                oracle_runtime_s: results.iter().map(|r| r.oracle_runtime_s).sum(),
                characterization_s: self.tables.values().map(|t| t.1).sum(),
            },
            results,
            n_sweep,
        }
    }
}

/// Characterize, prepare and evaluate the whole suite; the N sweep covers
/// the fastest slew.
pub fn run_comparison(suite: &[Benchmark], cfg: &SuiteConfig) -> Result<ErrorReport, SuiteError> {
    let run = SuiteRun::new(suite, cfg)?;
    let results = run.evaluate_all(&cfg.dcm)?;
    let fastest = suite.iter().map(|b| b.slew).fold(f64::INFINITY, f64::min);
    let sweep = run.n_sweep(&[25, 50, 100], &cfg.dcm, |b| b.slew == fastest)?;
    Ok(run.report(results, sweep))
}

#[derive(Debug, Clone, Serialize)]
pub struct RuntimeRow {
    pub name: String,
    pub dcm_s: f64,
    pub oracle_s: f64,
    pub speedup: f64,
}

/// Sequential wall-clock of the DCM path (reduction, matching, stitching,
/// metrics) against the oracle transient, per benchmark. Tables are taken as
/// given: characterization is excluded.
pub fn runtime_benchmark(
    suite: &[Benchmark],
    tables: &BTreeMap<DriverKey, (DriverCharTable, f64)>,
    cfg: &SuiteConfig,
) -> Result<Vec<RuntimeRow>, SuiteError> {
    suite
        .iter()
        .map(|b| {
            let table = &tables[&key_of(b)].0;
            let name = b.name.clone();
            let start = Instant::now();
            let sys = assemble_mna(&b.net).map_err(|source| SuiteError::Netlist {
                name: name.clone(),
                source,
            })?;
            let ya = reduce(&sys, cfg.q).map_err(|source| SuiteError::Mor {
                name: name.clone(),
                source,
            })?;
            let trace = dcm::run_dcm(table, &ya, &cfg.dcm).map_err(|source| SuiteError::Dcm {
                name: name.clone(),
                source,
            })?;
            let window = trace.breakpoints().last().copied().unwrap_or(1e-9);
            dcm::trace_metrics(&trace, window).map_err(|source| SuiteError::Dcm {
                name: name.clone(),
                source,
            })?;
            let dcm_s = start.elapsed().as_secs_f64();
            let tau = ya.terms.iter().map(|t| -1.0 / t.pole.re).fold(0.0, f64::max);
            let input = b.model.input_waveform(b.direction, b.vdd, b.slew);
            let start = Instant::now();
            simulate_driver(&sys, &b.model, b.vdd, &input, cfg.oracle_dt, table.window() + 8.0 * tau)
                .map_err(|source| SuiteError::Oracle { name, source })?;
            let oracle_s = start.elapsed().as_secs_f64();
            Ok(RuntimeRow {
                name: b.name.clone(),
                dcm_s,
                oracle_s,
                speedup: oracle_s / dcm_s.max(1e-12),
            })
        })
        .collect()
}

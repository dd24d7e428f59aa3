//! Driver characterization tables: the current a driver pushes into each of a
//! grid of fixed capacitors, sampled on a shared uniform time grid, with the
//! voltage recovered by integrating `i / C`.
//!
//! Lookups between grid capacitances blend the two bracketing curves
//! linearly at equal time. Internally curves are also kept in "progress"
//! form (`u = v` for rising outputs, `u = vdd - v` for falling ones) so the
//! matcher can treat both directions alike.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netlist::{assemble_mna, Element, ElementKind, NetlistError, RcNetwork};
use crate::oracle::{simulate_driver, OracleError};
use crate::response::PwlWaveform;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum DriverError {
    #[error("invalid capacitance grid: {0}")]
    BadGrid(String),
    #[error("capacitance {c:e} F outside table range [{lo:e}, {hi:e}]")]
    CapOutOfRange { c: f64, lo: f64, hi: f64 },
    #[error("voltage {v} V never reached on the {c:e} F curve")]
    Unreachable { v: f64, c: f64 },
    #[error("response did not settle within {0:e} s")]
    NotSettled(f64),
    #[error("invalid parameters: {0}")]
    BadParams(String),
    #[error("no table for driver '{0}'")]
    Missing(String),
    #[error("malformed table: {0}")]
    Format(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Netlist(#[from] NetlistError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Rising,
    Falling,
}

impl Direction {
    /// Physical voltage for a progress value.
    pub fn voltage(self, vdd: f64, u: f64) -> f64 {
        match self {
            Direction::Rising => u,
            Direction::Falling => vdd - u,
        }
    }

    pub fn progress(self, vdd: f64, v: f64) -> f64 {
        self.voltage(vdd, v)
    }

    /// +1 when progress and voltage move together.
    pub fn sign(self) -> f64 {
        match self {
            Direction::Rising => 1.0,
            Direction::Falling => -1.0,
        }
    }

    /// Gate input for an inverting driver: 10-90% slew, full ramp `slew / 0.8`.
    /// A zero slew becomes a 1 as edge.
    pub fn input_waveform(self, vdd: f64, slew: f64) -> PwlWaveform {
        let (from, to) = match self {
            Direction::Rising => (vdd, 0.0),
            Direction::Falling => (0.0, vdd),
        };
        let ramp = if slew > 0.0 { slew / 0.8 } else { 1e-18 };
        PwlWaveform::new(vec![(0.0, from), (ramp, to)]).expect("valid ramp")
    }
}

/// Behavioral inverting driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriverModel {
    /// Ideal source `vdd - v_in` behind `r_drv` ohms.
    TheveninRamp { r_drv: f64 },
    /// Saturating pull-up/pull-down pair. Each side conducts
    /// `i_sat * clamp(v_ds / v_knee, -1, 1) * g(x)` with gate drive `x` in
    /// [0, 1] and `g(x) = ((x - v_th) / (1 - v_th))^2` above threshold.
    /// `c_couple` ties the output to the gate, `c_int` to ground.
    MosLike {
        i_sat: f64,
        v_knee: f64,
        v_th: f64,
        c_couple: f64,
        c_int: f64,
    },
}

impl DriverModel {
    pub fn validate(&self) -> Result<(), String> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        match *self {
            DriverModel::TheveninRamp { r_drv } if ok(r_drv) => Ok(()),
            DriverModel::TheveninRamp { r_drv } => Err(format!("r_drv = {r_drv}")),
            DriverModel::MosLike {
                i_sat,
                v_knee,
                v_th,
                c_couple,
                c_int,
            } => {
                if !ok(i_sat) || !ok(v_knee) {
                    return Err("i_sat and v_knee must be positive".into());
                }
                if !(0.0..1.0).contains(&v_th) {
                    return Err(format!("v_th = {v_th} outside [0, 1)"));
                }
                if !(c_couple >= 0.0 && c_int >= 0.0 && c_couple.is_finite() && c_int.is_finite()) {
                    return Err("capacitances must be nonnegative".into());
                }
                Ok(())
            }
        }
    }

    /// Gate input used when characterizing or simulating this driver. The
    /// transistor model gets a raised-cosine edge with the same 10-90% slew:
    /// its gate coupling turns slope jumps into current jumps, which a sampled
    /// table cannot integrate without a half-step charge error.
    pub fn input_waveform(&self, direction: Direction, vdd: f64, slew: f64) -> PwlWaveform {
        match self {
            DriverModel::MosLike { .. } if slew > 0.0 => {
                let (from, to) = match direction {
                    Direction::Rising => (vdd, 0.0),
                    Direction::Falling => (0.0, vdd),
                };
                // 10-90% of (1 - cos x) / 2 spans acos(-0.8) - acos(0.8) radians
                let span = slew * std::f64::consts::PI / ((-0.8f64).acos() - 0.8f64.acos());
                let n = 32;
                let pts = (0..=n)
                    .map(|k| {
                        let x = k as f64 / n as f64;
                        let s = 0.5 * (1.0 - (std::f64::consts::PI * x).cos());
                        (x * span, from + (to - from) * s)
                    })
                    .collect();
                PwlWaveform::new(pts).expect("valid edge")
            }
            _ => direction.input_waveform(vdd, slew),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            DriverModel::TheveninRamp { .. } => "thevenin_ramp",
            DriverModel::MosLike { .. } => "mos_like",
        }
    }

    /// `(c_couple, c_int)` attached at the output node.
    pub fn port_capacitances(&self) -> (f64, f64) {
        match *self {
            DriverModel::TheveninRamp { .. } => (0.0, 0.0),
            DriverModel::MosLike { c_couple, c_int, .. } => (c_couple, c_int),
        }
    }

    /// Resistive/transistor current into the output node and its derivative
    /// with respect to the output voltage.
    pub fn output_current(&self, vdd: f64, v_in: f64, v_out: f64) -> (f64, f64) {
        match *self {
            DriverModel::TheveninRamp { r_drv } => ((vdd - v_in - v_out) / r_drv, -1.0 / r_drv),
            DriverModel::MosLike {
                i_sat,
                v_knee,
                v_th,
                ..
            } => {
                let gate = |x: f64| {
                    let y = ((x - v_th) / (1.0 - v_th)).clamp(0.0, 1.0);
                    y * y
                };
                let lin = |vds: f64| {
                    let y = vds / v_knee;
                    if y.abs() < 1.0 {
                        (y, 1.0 / v_knee)
                    } else {
                        (y.signum(), 0.0)
                    }
                };
                let g_up = gate((vdd - v_in) / vdd);
                let g_dn = gate(v_in / vdd);
                let (up, dup) = lin(vdd - v_out);
                let (dn, ddn) = lin(v_out);
                (
                    i_sat * (g_up * up - g_dn * dn),
                    -i_sat * (g_up * dup + g_dn * ddn),
                )
            }
        }
    }
}

/// 1%, 2.5%, then 5% to 100% of `c_max` in 5% steps (22 points).
pub fn default_cap_grid(c_max: f64) -> Vec<f64> {
    let mut g = vec![0.01 * c_max, 0.025 * c_max];
    g.extend((1..=20).map(|k| 0.05 * k as f64 * c_max));
    g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableMeta {
    pub model: DriverModel,
    /// Simulation step of the characterization runs.
    pub dt: f64,
    pub window: f64,
}

/// A point between grid curves: `c = (1 - w) c_lo + w c_hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapBlend {
    pub lo: usize,
    pub hi: usize,
    pub w: f64,
    pub c: f64,
}

/// Interpolated value with a flag raised when `t` fell outside the window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lookup {
    pub value: f64,
    pub clamped: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Derived {
    /// Progress curves `u = sign * v`, integrated from the current.
    progress: Vec<Vec<f64>>,
    /// Index of the undershoot minimum; curves are monotone after it.
    start: Vec<usize>,
    /// Largest drop below the running maximum after `start`, per curve.
    monotone_violation: Vec<f64>,
    step: f64,
    domain: BlendDomain,
}

/// How curves between two grid capacitances are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlendDomain {
    /// Mix values at equal time; keeps features tied to the input timing.
    #[default]
    Time,
    /// Mix crossing times at equal level; keeps features tied to a voltage.
    Level,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverCharTable {
    pub driver: String,
    pub vdd: f64,
    pub slew: f64,
    pub direction: Direction,
    pub cap_grid: Vec<f64>,
    pub time_grid: Vec<f64>,
    /// `current[cap][time]`, positive into the load.
    pub current: Vec<Vec<f64>>,
    pub meta: TableMeta,
    #[serde(skip)]
    derived: Derived,
}

fn check_grid(grid: &[f64]) -> Result<(), DriverError> {
    if grid.len() < 2 {
        return Err(DriverError::BadGrid("need at least two capacitances".into()));
    }
    if grid.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
        return Err(DriverError::BadGrid("capacitances must be positive".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(DriverError::BadGrid("capacitances must be strictly ascending".into()));
    }
    Ok(())
}

impl DriverCharTable {
    /// Assemble a table from raw samples; derived voltages are recomputed.
    #[allow(clippy::too_many_arguments)]
    pub fn from_samples(
        driver: &str,
        vdd: f64,
        slew: f64,
        direction: Direction,
        cap_grid: Vec<f64>,
        time_grid: Vec<f64>,
        current: Vec<Vec<f64>>,
        meta: TableMeta,
    ) -> Result<Self, DriverError> {
        let mut t = Self {
            driver: driver.to_string(),
            vdd,
            slew,
            direction,
            cap_grid,
            time_grid,
            current,
            meta,
            derived: Derived::default(),
        };
        t.finish()?;
        Ok(t)
    }

    fn finish(&mut self) -> Result<(), DriverError> {
        check_grid(&self.cap_grid)?;
        let nt = self.time_grid.len();
        if nt < 2 || self.time_grid[0] != 0.0 {
            return Err(DriverError::Format("time grid must start at 0 with >= 2 samples".into()));
        }
        let step = self.time_grid[1];
        let uniform = self
            .time_grid
            .iter()
            .enumerate()
            .all(|(k, &t)| (t - k as f64 * step).abs() <= 1e-9 * step * (k as f64 + 1.0));
        if !(step > 0.0) || !uniform {
            return Err(DriverError::Format("time grid must be uniform".into()));
        }
        if self.current.len() != self.cap_grid.len() || self.current.iter().any(|c| c.len() != nt) {
            return Err(DriverError::Format("current array shape mismatch".into()));
        }
        let sign = self.direction.sign();
        let mut d = Derived {
            step,
            ..Derived::default()
        };
        for (c, cur) in self.cap_grid.iter().zip(&self.current) {
            let mut u = Vec::with_capacity(nt);
            let mut acc = 0.0;
            u.push(0.0);
            for w in cur.windows(2) {
                acc += 0.5 * (w[0] + w[1]) * step / c;
                u.push(sign * acc);
            }
            let start = u
                .iter()
                .enumerate()
                .fold(0, |best, (k, &x)| if x < u[best] { k } else { best });
            let mut run = f64::NEG_INFINITY;
            let mut viol: f64 = 0.0;
            for &x in &u[start..] {
                run = run.max(x);
                viol = viol.max(run - x);
            }
            d.progress.push(u);
            d.start.push(start);
            d.monotone_violation.push(viol);
        }
        self.derived = d;
        self.derived.domain = self.pick_domain();
        Ok(())
    }

    /// Predict every interior curve from its neighbours both ways and keep
    /// the domain with the smaller current error at that curve's crossings.
    fn pick_domain(&self) -> BlendDomain {
        let n = self.cap_grid.len();
        let (mut e_time, mut e_level) = (0.0, 0.0);
        for k in 1..n.saturating_sub(1) {
            let g = &self.cap_grid;
            let w = (g[k] - g[k - 1]) / (g[k + 1] - g[k - 1]);
            let b = CapBlend { lo: k - 1, hi: k + 1, w, c: g[k] };
            for j in 5..=95 {
                let u = self.vdd * j as f64 / 100.0;
                let own = self.grid_blend(k);
                let (Some(t), Some(by_level)) = (self.time_of_progress(&own, u), self.level_current(&b, u)) else {
                    continue;
                };
                let exact = self.static_current_at(&own, t);
                e_time += (self.static_current_at(&b, t) - exact).powi(2);
                e_level += (by_level - exact).powi(2);
            }
        }
        if e_level < e_time {
            BlendDomain::Level
        } else {
            BlendDomain::Time
        }
    }

    pub fn blend_domain(&self) -> BlendDomain {
        self.derived.domain
    }

    /// Time at which the blended curve reaches level `u`, in the table's
    /// blend domain.
    pub fn crossing_time(&self, b: &CapBlend, u: f64) -> Option<f64> {
        match self.derived.domain {
            BlendDomain::Time => self.time_of_progress(b, u),
            BlendDomain::Level => self.level_time(b, u),
        }
    }

    /// Static current of the blended curve as it reaches level `u`.
    pub fn crossing_current(&self, b: &CapBlend, u: f64) -> Option<f64> {
        match self.derived.domain {
            BlendDomain::Time => self.time_of_progress(b, u).map(|t| self.static_current_at(b, t)),
            BlendDomain::Level => self.level_current(b, u),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("table serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, DriverError> {
        let mut t: Self = serde_json::from_str(text).map_err(|e| DriverError::Format(e.to_string()))?;
        t.finish()?;
        Ok(t)
    }

    pub fn c_min(&self) -> f64 {
        self.cap_grid[0]
    }

    pub fn c_max(&self) -> f64 {
        *self.cap_grid.last().unwrap()
    }

    pub fn window(&self) -> f64 {
        *self.time_grid.last().unwrap()
    }

    pub fn time_step(&self) -> f64 {
        self.derived.step
    }

    /// Largest decrease of any progress curve after its undershoot minimum.
    pub fn monotone_violation(&self) -> f64 {
        self.derived.monotone_violation.iter().cloned().fold(0.0, f64::max)
    }

    /// Sampled voltage of grid curve `k`.
    pub fn voltage_curve(&self, k: usize) -> Vec<f64> {
        self.derived.progress[k]
            .iter()
            .map(|&u| self.direction.voltage(self.vdd, u))
            .collect()
    }

    pub fn blend(&self, c: f64) -> Result<CapBlend, DriverError> {
        let g = &self.cap_grid;
        let (lo, hi) = (g[0], g[g.len() - 1]);
        // tolerate last-ulp noise at the ends
        let slack = 1e-12 * hi;
        if !(c >= lo - slack && c <= hi + slack) {
            return Err(DriverError::CapOutOfRange { c, lo, hi });
        }
        let c = c.clamp(lo, hi);
        let k = g.partition_point(|&x| x <= c);
        if k >= g.len() {
            let last = g.len() - 1;
            return Ok(CapBlend { lo: last, hi: last, w: 0.0, c });
        }
        if g[k - 1] == c {
            return Ok(CapBlend { lo: k - 1, hi: k - 1, w: 0.0, c });
        }
        let w = (c - g[k - 1]) / (g[k] - g[k - 1]);
        Ok(CapBlend { lo: k - 1, hi: k, w, c })
    }

    /// Grid point `k` as a blend.
    pub fn grid_blend(&self, k: usize) -> CapBlend {
        CapBlend {
            lo: k,
            hi: k,
            w: 0.0,
            c: self.cap_grid[k],
        }
    }

    fn sample(&self, data: &[f64], t: f64) -> (f64, bool) {
        let n = data.len();
        if t <= 0.0 {
            return (data[0], t < 0.0);
        }
        let x = t / self.derived.step;
        if x >= (n - 1) as f64 {
            return (data[n - 1], x > (n - 1) as f64 * (1.0 + 1e-12));
        }
        let k = x.floor() as usize;
        let f = x - k as f64;
        (data[k] + f * (data[k + 1] - data[k]), false)
    }

    fn mix(&self, b: &CapBlend, f: impl Fn(usize) -> f64) -> f64 {
        if b.lo == b.hi || b.w == 0.0 {
            f(b.lo)
        } else {
            (1.0 - b.w) * f(b.lo) + b.w * f(b.hi)
        }
    }

    /// Progress of the blended curve at `t` (held after the window).
    pub fn progress_at(&self, b: &CapBlend, t: f64) -> f64 {
        self.mix(b, |k| self.sample(&self.derived.progress[k], t).0)
    }

    /// Current in the progress sense (`sign * i`) of the blended curve.
    pub fn drive_current_at(&self, b: &CapBlend, t: f64) -> f64 {
        if t > self.window() {
            return 0.0;
        }
        self.direction.sign() * self.mix(b, |k| self.sample(&self.current[k], t).0)
    }

    /// Output capacitance of the characterized driver.
    pub fn output_capacitance(&self) -> f64 {
        let (cc, ci) = self.meta.model.port_capacitances();
        cc + ci
    }

    /// Driver current with its own output capacitance's share added back,
    /// `i (1 + c_out / c)` per curve, in the progress sense. Unlike the port
    /// current it does not depend on how fast the load lets the output move.
    pub fn static_current_at(&self, b: &CapBlend, t: f64) -> f64 {
        if t > self.window() {
            return 0.0;
        }
        let c_out = self.output_capacitance();
        self.direction.sign()
            * self.mix(b, |k| self.sample(&self.current[k], t).0 * (1.0 + c_out / self.cap_grid[k]))
    }

    /// Charge in the progress sense delivered by the blended curve over `[ta, tb]`.
    pub fn charge_between(&self, b: &CapBlend, ta: f64, tb: f64) -> f64 {
        self.mix(b, |k| {
            let p = &self.derived.progress[k];
            self.cap_grid[k] * (self.sample(p, tb).0 - self.sample(p, ta).0)
        })
    }

    /// Time at which the blended curve's progress reaches `u`, searching only
    /// after the undershoot minimum. Levels at or below that minimum map to
    /// its time.
    pub fn time_of_progress(&self, b: &CapBlend, u: f64) -> Option<f64> {
        let d = &self.derived;
        let start = d.start[b.lo].max(d.start[b.hi]);
        let at = |j: usize| self.mix(b, |k| d.progress[k][j]);
        let n = self.time_grid.len();
        if u <= at(start) {
            return Some(self.time_grid[start]);
        }
        // first index with progress >= u; curves are monotone after `start`
        let (mut lo, mut hi) = (start, n);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if at(mid) < u {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        if lo >= n {
            return None;
        }
        let (u0, u1) = (at(lo - 1), at(lo));
        let f = if u1 > u0 { (u - u0) / (u1 - u0) } else { 1.0 };
        Some(self.time_grid[lo - 1] + f * d.step)
    }

    /// Crossing time of level `u`, blended per level rather than per time.
    fn level_time(&self, b: &CapBlend, u: f64) -> Option<f64> {
        let t_lo = self.time_of_progress(&self.grid_blend(b.lo), u)?;
        if b.lo == b.hi || b.w == 0.0 {
            return Some(t_lo);
        }
        let t_hi = self.time_of_progress(&self.grid_blend(b.hi), u)?;
        Some((1.0 - b.w) * t_lo + b.w * t_hi)
    }

    /// Static current at level `u`, each curve sampled at its own crossing.
    fn level_current(&self, b: &CapBlend, u: f64) -> Option<f64> {
        let at = |k: usize| {
            let g = self.grid_blend(k);
            self.time_of_progress(&g, u).map(|t| self.static_current_at(&g, t))
        };
        let i_lo = at(b.lo)?;
        if b.lo == b.hi || b.w == 0.0 {
            return Some(i_lo);
        }
        Some((1.0 - b.w) * i_lo + b.w * at(b.hi)?)
    }

    pub fn voltage_of(&self, c: f64, t: f64) -> Result<Lookup, DriverError> {
        let b = self.blend(c)?;
        let u = self.progress_at(&b, t);
        Ok(Lookup {
            value: self.direction.voltage(self.vdd, u),
            clamped: t > self.window(),
        })
    }

    pub fn current_of(&self, c: f64, t: f64) -> Result<Lookup, DriverError> {
        let b = self.blend(c)?;
        if t > self.window() {
            return Ok(Lookup {
                value: 0.0,
                clamped: true,
            });
        }
        Ok(Lookup {
            value: self.mix(&b, |k| self.sample(&self.current[k], t).0),
            clamped: false,
        })
    }

    pub fn time_of_voltage(&self, c: f64, v: f64) -> Result<f64, DriverError> {
        let b = self.blend(c)?;
        let u = self.direction.progress(self.vdd, v);
        self.time_of_progress(&b, u)
            .ok_or(DriverError::Unreachable { v, c })
    }

    /// Voltage waveform of the blended curve as a PWL on the table grid.
    pub fn voltage_waveform(&self, c: f64) -> Result<PwlWaveform, DriverError> {
        let b = self.blend(c)?;
        let pts = (0..self.time_grid.len())
            .map(|j| {
                let u = self.mix(&b, |k| self.derived.progress[k][j]);
                (self.time_grid[j], self.direction.voltage(self.vdd, u))
            })
            .collect();
        Ok(PwlWaveform::new(pts).expect("uniform grid"))
    }

    /// Current waveform of the blended curve as a PWL on the table grid.
    pub fn current_waveform(&self, c: f64) -> Result<PwlWaveform, DriverError> {
        let b = self.blend(c)?;
        let pts = (0..self.time_grid.len())
            .map(|j| (self.time_grid[j], self.mix(&b, |k| self.current[k][j])))
            .collect();
        Ok(PwlWaveform::new(pts).expect("uniform grid"))
    }

    /// Trapezoidal charge of grid curve `k` over the whole window.
    pub fn curve_charge(&self, k: usize) -> f64 {
        let h = self.derived.step;
        self.current[k].windows(2).map(|w| 0.5 * (w[0] + w[1]) * h).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharacterizeOptions {
    pub window: f64,
    pub dt: f64,
    /// Upper bound on stored time samples; the simulation grid is decimated.
    pub max_samples: usize,
    /// Settled when the final progress is within this fraction of vdd.
    pub settle_tol: f64,
    pub max_extension: f64,
}

impl CharacterizeOptions {
    pub fn new(window: f64, dt: f64) -> Self {
        Self {
            window,
            dt,
            max_samples: 4000,
            settle_tol: 1e-3,
            max_extension: 100.0,
        }
    }
}

fn load_system(c: f64) -> Result<crate::netlist::MnaSystem, DriverError> {
    let net = RcNetwork::from_elements(
        vec![Element {
            name: "CL".into(),
            kind: ElementKind::Capacitor,
            a: "out".into(),
            b: "0".into(),
            value: c,
        }],
        "out",
    )?;
    Ok(assemble_mna(&net)?)
}

/// Current into a lone capacitor `c` driven by `model`, on the simulation grid.
pub fn single_cap_run(
    model: &DriverModel,
    vdd: f64,
    slew: f64,
    direction: Direction,
    c: f64,
    dt: f64,
    window: f64,
) -> Result<crate::oracle::TransientResult, DriverError> {
    let sys = load_system(c)?;
    let input = model.input_waveform(direction, vdd, slew);
    Ok(simulate_driver(&sys, model, vdd, &input, dt, window)?)
}

/// Characterize `model` on every capacitance of `cap_grid`.
///
/// The window grows (doubling, up to `max_extension` times the request)
/// until the slowest curve settles; all curves then share that window.
#[allow(clippy::too_many_arguments)]
pub fn characterize(
    name: &str,
    model: &DriverModel,
    vdd: f64,
    slew: f64,
    direction: Direction,
    cap_grid: &[f64],
    opts: &CharacterizeOptions,
) -> Result<DriverCharTable, DriverError> {
    check_grid(cap_grid)?;
    model.validate().map_err(DriverError::BadParams)?;
    if !(vdd > 0.0 && slew >= 0.0 && opts.dt > 0.0 && opts.window > 0.0) {
        return Err(DriverError::BadParams("vdd, window and dt must be positive".into()));
    }
    if opts.dt > opts.window / 1000.0 {
        return Err(DriverError::BadParams(format!(
            "dt {:e} exceeds window/1000 ({:e})",
            opts.dt,
            opts.window / 1000.0
        )));
    }
    let target = match direction {
        Direction::Rising => vdd,
        Direction::Falling => 0.0,
    };
    let settled = |v: &[f64]| (v[v.len() - 1] - target).abs() <= opts.settle_tol * vdd;
    let c_top = *cap_grid.last().unwrap();
    let mut window = opts.window;
    loop {
        let r = single_cap_run(model, vdd, slew, direction, c_top, opts.dt, window)?;
        if settled(&r.v_port) {
            break;
        }
        if window * 2.0 > opts.window * opts.max_extension {
            return Err(DriverError::NotSettled(window));
        }
        window *= 2.0;
    }
    let steps = (window / opts.dt - 1e-9).ceil() as usize;
    let stride = steps.div_ceil(opts.max_samples.max(2) - 1).max(1);
    let runs: Vec<Result<Vec<f64>, DriverError>> = cap_grid
        .par_iter()
        .map(|&c| {
            let r = single_cap_run(model, vdd, slew, direction, c, opts.dt, window)?;
            if !settled(&r.v_port) {
                return Err(DriverError::NotSettled(window));
            }
            Ok(r.i_port.iter().step_by(stride).copied().collect())
        })
        .collect();
    let current = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let nt = current[0].len();
    let h = opts.dt * stride as f64;
    let time_grid = (0..nt).map(|k| k as f64 * h).collect();
    DriverCharTable::from_samples(
        name,
        vdd,
        slew,
        direction,
        cap_grid.to_vec(),
        time_grid,
        current,
        TableMeta {
            model: model.clone(),
            dt: opts.dt,
            window: (nt - 1) as f64 * h,
        },
    )
}

/// Table chosen for a requested slew.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub table: DriverCharTable,
    /// Requested slew lies outside the characterized range.
    pub out_of_range: bool,
    pub blended: bool,
}

/// Tables for several drivers, directions and slews.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LibrarySet {
    tables: BTreeMap<(String, Direction), Vec<DriverCharTable>>,
}

impl LibrarySet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, table: DriverCharTable) {
        let list = self
            .tables
            .entry((table.driver.clone(), table.direction))
            .or_default();
        list.push(table);
        list.sort_by(|a, b| a.slew.total_cmp(&b.slew));
    }

    pub fn len(&self) -> usize {
        self.tables.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tables(&self) -> impl Iterator<Item = &DriverCharTable> {
        self.tables.values().flatten()
    }

    /// Load every `*.json` table in a directory.
    pub fn load_dir(dir: &std::path::Path) -> Result<Self, DriverError> {
        let mut set = Self::new();
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| DriverError::Format(format!("{}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for p in paths {
            let text = std::fs::read_to_string(&p)
                .map_err(|e| DriverError::Format(format!("{}: {e}", p.display())))?;
            set.insert(DriverCharTable::from_json(&text)?);
        }
        Ok(set)
    }

    pub fn select(&self, driver: &str, direction: Direction, slew: f64) -> Result<Selection, DriverError> {
        let list = self
            .tables
            .get(&(driver.to_string(), direction))
            .filter(|l| !l.is_empty())
            .ok_or_else(|| DriverError::Missing(driver.to_string()))?;
        let first = &list[0];
        let last = &list[list.len() - 1];
        if slew <= first.slew || slew >= last.slew {
            let (t, exact) = if slew <= first.slew {
                (first, slew == first.slew)
            } else {
                (last, slew == last.slew)
            };
            return Ok(Selection {
                table: t.clone(),
                out_of_range: !exact,
                blended: false,
            });
        }
        let k = list.partition_point(|t| t.slew <= slew);
        let (a, b) = (&list[k - 1], &list[k]);
        if a.slew == slew {
            return Ok(Selection {
                table: a.clone(),
                out_of_range: false,
                blended: false,
            });
        }
        let w = (slew - a.slew) / (b.slew - a.slew);
        if a.cap_grid != b.cap_grid || a.time_grid != b.time_grid {
            let t = if w < 0.5 { a } else { b };
            return Ok(Selection {
                table: t.clone(),
                out_of_range: false,
                blended: false,
            });
        }
        let current = a
            .current
            .iter()
            .zip(&b.current)
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (1.0 - w) * p + w * q).collect())
            .collect();
        let table = DriverCharTable::from_samples(
            &a.driver,
            a.vdd,
            slew,
            direction,
            a.cap_grid.clone(),
            a.time_grid.clone(),
            current,
            a.meta.clone(),
        )?;
        Ok(Selection {
            table,
            out_of_range: false,
            blended: true,
        })
    }
}

/// Nearest or blended table for `slew`; see [`LibrarySet::select`].
pub fn select_table(
    libset: &LibrarySet,
    driver: &str,
    direction: Direction,
    slew: f64,
) -> Result<Selection, DriverError> {
    libset.select(driver, direction, slew)
}

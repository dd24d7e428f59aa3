//! Dynamic capacitance matching.
//!
//! The output transition is cut into `n_steps` voltage levels between 1% and
//! 99% of the swing. At each level a capacitance is searched on the driver
//! table such that the table curve for that capacitance and the closed-form
//! RC response agree, and the matched segment is appended to the output
//! PWL. Work happens in progress coordinates (`u = v` rising, `u = vdd - v`
//! falling), where the RC network starts at rest.
//!
//! The first step uses the candidate curve's own head (from t = 0, including
//! any undershoot) and the last matched curve supplies the tail.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::driverlib::{CapBlend, Direction, DriverCharTable};
use crate::mor::ReducedAdmittance;
use crate::response::{ClosedFormResponse, PwlWaveform, ResponseError};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum DcmError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("net capacitance {c_total:e} F exceeds table range (max {c_max:e} F)")]
    Coverage { c_total: f64, c_max: f64 },
    #[error("level {level} V unreachable on every table curve")]
    Unreachable { level: f64 },
    #[error("empty metrics window")]
    EmptyWindow,
    #[error(transparent)]
    Response(#[from] ResponseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Crossing {
    /// Segment duration is the candidate curve's travel time between levels.
    Incremental,
    /// Segment ends at the candidate curve's own crossing time.
    #[default]
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MatchRule {
    /// Mean current over the candidate segment: RC charge against table charge.
    #[default]
    Charge,
    /// Instantaneous currents at the segment end.
    Endpoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DcmConfig {
    pub n_steps: usize,
    /// Relative to `max(|i_lib|, running peak)`.
    pub tol: f64,
    /// Grid bisection iterations; `None` means `ceil(log2(grid)) + 2`.
    pub max_iter: Option<usize>,
    pub v_start_frac: f64,
    pub v_end_frac: f64,
    pub crossing: Crossing,
    pub rule: MatchRule,
}

impl Default for DcmConfig {
    fn default() -> Self {
        Self {
            n_steps: 100,
            tol: 1e-3,
            max_iter: None,
            v_start_frac: 0.01,
            v_end_frac: 0.99,
            crossing: Crossing::Absolute,
            rule: MatchRule::Charge,
        }
    }
}

impl DcmConfig {
    pub fn with_steps(n_steps: usize) -> Self {
        Self {
            n_steps,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DcmError> {
        if self.n_steps < 10 {
            return Err(DcmError::Config(format!("N = {} < 10", self.n_steps)));
        }
        if !(self.tol > 0.0 && self.tol < 0.2) {
            return Err(DcmError::Config(format!("tolerance {} outside (0, 0.2)", self.tol)));
        }
        if !(0.0 < self.v_start_frac && self.v_start_frac < self.v_end_frac && self.v_end_frac < 1.0) {
            return Err(DcmError::Config("voltage span must satisfy 0 < start < end < 1".into()));
        }
        if self.max_iter == Some(0) {
            return Err(DcmError::Config("max_iter must be positive".into()));
        }
        Ok(())
    }

    fn grid_iterations(&self, grid: usize) -> usize {
        self.max_iter
            .unwrap_or_else(|| (grid as f64).log2().ceil() as usize + 2)
    }
}

/// One matched step: the output reaches `v` at `t` with capacitance `c_step`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub v: f64,
    /// RC current at `t`, amperes.
    pub i: f64,
    pub c_step: f64,
    /// Mismatch left at acceptance, relative to the step's current scale.
    pub residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct DcmTrace {
    pub vdd: f64,
    pub direction: Direction,
    pub records: Vec<StepRecord>,
    /// Library samples `(t, v)` before the first record.
    pub head: Vec<(f64, f64)>,
    /// Library samples `(t, v)` after the last record.
    pub tail: Vec<(f64, f64)>,
    pub c_eff_first: f64,
    pub c_eff_last: f64,
    /// Grid evaluations spent in the search, all steps.
    pub evaluations: usize,
    /// Steps that used the exhaustive scan.
    pub fallbacks: usize,
    response: ClosedFormResponse,
    y_dc: f64,
}

impl DcmTrace {
    fn to_physical(&self, u: f64) -> f64 {
        self.direction.voltage(self.vdd, u)
    }

    fn current_from_progress(&self, i_u: f64) -> f64 {
        match self.direction {
            Direction::Rising => i_u,
            Direction::Falling => self.y_dc * self.vdd - i_u,
        }
    }

    /// Output voltage as a PWL (head, matched steps, tail).
    pub fn voltage_waveform(&self) -> PwlWaveform {
        let pts = self
            .response
            .waveform()
            .points()
            .iter()
            .map(|&(t, u)| (t, self.to_physical(u)))
            .collect();
        PwlWaveform::new(pts).expect("trace times increase")
    }

    /// The closed-form response in progress coordinates.
    pub fn progress_response(&self) -> &ClosedFormResponse {
        &self.response
    }

    /// RC current into the net at `t`.
    pub fn current(&self, t: f64) -> f64 {
        self.current_from_progress(self.response.eval(t))
    }

    /// Currents at ascending times.
    pub fn currents(&self, times: &[f64]) -> Vec<f64> {
        self.response
            .eval_sorted(times)
            .into_iter()
            .map(|i| self.current_from_progress(i))
            .collect()
    }

    pub fn residual_max(&self) -> f64 {
        self.records.iter().map(|r| r.residual).fold(0.0, f64::max)
    }

    pub fn c_steps(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.c_step).collect()
    }

    /// Breakpoints of the output PWL.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.response.waveform().points().iter().map(|p| p.0).collect()
    }

    /// Rows `step,t_ps,v_V,i_mA,C_step_fF`. Head rows carry step 0 and
    /// `c_eff_first`; tail rows carry step `N + 1` and `c_eff_last`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "step,t_ps,v_V,i_mA,C_step_fF")?;
        let tail_step = self.records.len() + 1;
        let rows = self
            .head
            .iter()
            .map(|&(t, v)| (0, t, v, self.c_eff_first))
            .chain(self.records.iter().map(|r| (r.step, r.t, r.v, r.c_step)))
            .chain(self.tail.iter().map(|&(t, v)| (tail_step, t, v, self.c_eff_last)));
        for (step, t, v, c) in rows {
            writeln!(out, "{step},{:e},{:e},{:e},{:e}", t * 1e12, v, self.current(t) * 1e3, c * 1e15)?;
        }
        Ok(())
    }
}

/// Total capacitance seen by the reduced model (`sum res / pole`).
pub fn admittance_capacitance(ya: &ReducedAdmittance) -> f64 {
    ya.terms.iter().map(|t| (t.residue / t.pole).re).sum()
}

/// Head time steps up to the fastest curve's first-level crossing.
const HEAD_STEPS: usize = 24;

struct Matcher<'a> {
    table: &'a DriverCharTable,
    cfg: &'a DcmConfig,
    evaluations: usize,
}

/// Result of one candidate evaluation.
#[derive(Debug, Clone, Copy)]
struct Probe {
    /// RC minus library, amperes; decreases with capacitance.
    r: f64,
    /// library current magnitude used for the tolerance scale
    i_lib: f64,
    t_end: f64,
}

#[derive(Clone, Copy)]
struct LibTerms {
    t_end: f64,
    i_end: f64,
    q_seg: Option<f64>,
    /// mean static current between the curve's own crossings
    i_mean: f64,
    /// current slope for end times away from `t_end`
    di_dt: f64,
}

impl<'a> Matcher<'a> {
    fn head_points(&self, b: &CapBlend, level: f64) -> Option<Vec<(f64, f64)>> {
        let t_end = self.table.time_of_progress(b, level)?;
        let mut pts = Vec::new();
        for &t in &self.table.time_grid {
            if t >= t_end {
                break;
            }
            pts.push((t, self.table.progress_at(b, t)));
        }
        pts.push((t_end, level));
        Some(pts)
    }

    fn probe_head(&mut self, ya: &ReducedAdmittance, b: &CapBlend, level: f64) -> Option<Probe> {
        self.evaluations += 1;
        let pts = self.head_points(b, level)?;
        let t_end = pts.last().unwrap().0;
        if t_end <= 0.0 {
            return None;
        }
        let cf = ClosedFormResponse::new(ya.clone(), PwlWaveform::new(pts).ok()?);
        Some(match self.cfg.rule {
            MatchRule::Charge => {
                let q_lib = self.table.charge_between(b, 0.0, t_end);
                Probe {
                    r: (cf.charge(t_end) - q_lib) / t_end,
                    i_lib: (q_lib / t_end).abs(),
                    t_end,
                }
            }
            MatchRule::Endpoint => {
                let i_lib = self.table.drive_current_at(b, t_end);
                Probe {
                    r: cf.eval(t_end) - i_lib,
                    i_lib: i_lib.abs(),
                    t_end,
                }
            }
        })
    }

    /// Library side of one step: end-of-segment current and, for the
    /// incremental charge rule, the curve's charge over its own segment.
    fn lib_terms(&self, b: &CapBlend, from: f64, to: f64, t_last: f64) -> Option<LibTerms> {
        Some(match self.cfg.crossing {
            Crossing::Incremental => {
                let ta = self.table.time_of_progress(b, from)?;
                let tb = self.table.time_of_progress(b, to)?;
                LibTerms {
                    t_end: t_last + (tb - ta),
                    i_end: self.table.static_current_at(b, tb),
                    q_seg: Some(self.table.charge_between(b, ta, tb)),
                    i_mean: 0.0,
                    di_dt: 0.0,
                }
            }
            Crossing::Absolute => {
                let ta = self.table.crossing_time(b, from)?;
                let tb = self.table.crossing_time(b, to)?;
                let i_end = self.table.crossing_current(b, to)?;
                LibTerms {
                    t_end: tb,
                    i_end,
                    q_seg: None,
                    i_mean: if tb > ta {
                        (b.c + self.table.output_capacitance()) * (to - from) / (tb - ta)
                    } else {
                        i_end
                    },
                    di_dt: 0.0,
                }
            }
        })
    }

    fn residual(&self, cf: &ClosedFormResponse, to: f64, t_end: f64, lib: &LibTerms) -> Probe {
        let (t_last, u_last) = cf.waveform().last();
        let dt = t_end - t_last;
        // the driver's output capacitance moves with the load's slope
        let c_slope = self.table.output_capacitance() * (to - u_last) / dt;
        let shift = lib.di_dt * (t_end - lib.t_end);
        let lib = &LibTerms {
            i_end: lib.i_end + shift,
            i_mean: lib.i_mean + shift,
            ..*lib
        };
        match self.cfg.rule {
            MatchRule::Charge => {
                let q_rc = cf.charge_candidate(t_end, to) - cf.charge(t_last);
                let (i_lib, extra) = match lib.q_seg {
                    // both sides would gain the same c_out * du
                    Some(q) => (q / dt, 0.0),
                    None => (lib.i_mean, c_slope),
                };
                Probe {
                    r: q_rc / dt + extra - i_lib,
                    i_lib: i_lib.abs(),
                    t_end,
                }
            }
            MatchRule::Endpoint => Probe {
                r: cf.eval_candidate(t_end, to) + c_slope - lib.i_end,
                i_lib: lib.i_end.abs(),
                t_end,
            },
        }
    }

    fn probe_step(
        &mut self,
        cf: &ClosedFormResponse,
        b: &CapBlend,
        from: f64,
        to: f64,
    ) -> Option<Probe> {
        self.evaluations += 1;
        let t_last = cf.waveform().last().0;
        let lib = self.lib_terms(b, from, to, t_last)?;
        if !(lib.t_end > t_last) {
            // the curve is already past this level: too fast
            return match self.cfg.crossing {
                Crossing::Absolute => Some(Probe {
                    r: f64::INFINITY,
                    i_lib: lib.i_end.abs(),
                    t_end: lib.t_end,
                }),
                Crossing::Incremental => None,
            };
        }
        Some(self.residual(cf, to, lib.t_end, &lib))
    }

    /// Head point at time `t`: the port progress where the RC charge over the
    /// step meets the driver's (trapezoidal) charge. At fixed time the table curves sample the driver's
    /// current against output voltage; it is interpolated in voltage and
    /// extended linearly past the outermost curves.
    fn head_point(&mut self, cf: &ClosedFormResponse, t: f64, i_prev: f64, tol: f64) -> Option<(f64, f64)> {
        let mut pts: Vec<(f64, f64)> = (0..self.table.cap_grid.len())
            .map(|k| {
                let b = self.table.grid_blend(k);
                (self.table.progress_at(&b, t), self.table.static_current_at(&b, t))
            })
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts.dedup_by(|a, b| a.0 - b.0 <= 1e-12 * (1.0 + b.0.abs()));
        let drive = |u: f64| -> f64 {
            if pts.len() == 1 {
                return pts[0].1;
            }
            let k = pts.partition_point(|p| p.0 < u).clamp(1, pts.len() - 1);
            let (a, b) = (pts[k - 1], pts[k]);
            a.1 + (b.1 - a.1) * (u - a.0) / (b.0 - a.0)
        };
        let (t_last, u_last) = cf.waveform().last();
        let c_out = self.table.output_capacitance();
        // trapezoidal charge balance over the step
        let q_last = cf.charge(t_last);
        let eval = |me: &mut Self, u: f64| {
            me.evaluations += 1;
            let q = cf.charge_candidate(t, u) - q_last + c_out * (u - u_last);
            q / (t - t_last) - 0.5 * (i_prev + drive(u))
        };
        // r grows with u; bracket from the table's own span
        let span = (pts[pts.len() - 1].0 - pts[0].0).max(1e-6 * self.table.vdd);
        let (mut a, mut c) = (pts[0].0, pts[pts.len() - 1].0);
        let (mut fa, mut fc) = (eval(self, a), eval(self, c));
        let mut grow = span;
        while fa > 0.0 && grow < 1e3 * self.table.vdd {
            c = a;
            fc = fa;
            a -= grow;
            grow *= 2.0;
            fa = eval(self, a);
        }
        grow = span;
        while fc < 0.0 && grow < 1e3 * self.table.vdd {
            a = c;
            fa = fc;
            c += grow;
            grow *= 2.0;
            fc = eval(self, c);
        }
        if !(fa <= 0.0 && fc >= 0.0) {
            return None;
        }
        let mut side = 0;
        let (mut best, mut fbest) = if fa.abs() < fc.abs() { (a, fa) } else { (c, fc) };
        for _ in 0..80 {
            let u = if fc != fa { (a * fc - c * fa) / (fc - fa) } else { 0.5 * (a + c) };
            let u = if u > a && u < c { u } else { 0.5 * (a + c) };
            let f = eval(self, u);
            if f.abs() < fbest.abs() {
                (best, fbest) = (u, f);
            }
            if f.abs() <= tol || c - a <= 1e-12 * self.table.vdd {
                break;
            }
            if f <= 0.0 {
                a = u;
                fa = f;
                if side == -1 {
                    fc *= 0.5;
                }
                side = -1;
            } else {
                c = u;
                fc = f;
                if side == 1 {
                    fa *= 0.5;
                }
                side = 1;
            }
        }
        Some((best, drive(best)))
    }

    /// The grid ran out on one side: keep the edge curve's library terms and
    /// solve for the segment end time instead.
    fn solve_time(
        &mut self,
        cf: &ClosedFormResponse,
        b: &CapBlend,
        from: f64,
        to: f64,
        edge: Probe,
        peak: f64,
    ) -> Option<Probe> {
        let t_last = cf.waveform().last().0;
        let mut lib = self.lib_terms(b, from, to, t_last)?;
        if self.cfg.crossing == Crossing::Absolute && b.c <= self.table.cap_grid[0] {
            // earlier than the fastest curve: follow the level's trend
            // across the two fastest curves back in time
            let (g0, g1) = (self.table.grid_blend(0), self.table.grid_blend(1));
            if let (Some(t0), Some(t1)) = (self.table.time_of_progress(&g0, to), self.table.time_of_progress(&g1, to)) {
                if t1 > t0 {
                    let i0 = self.table.static_current_at(&g0, t0);
                    let i1 = self.table.static_current_at(&g1, t1);
                    lib.di_dt = (i1 - i0) / (t1 - t0);
                }
            }
        }
        let eval = |me: &mut Self, t: f64| {
            me.evaluations += 1;
            me.residual(cf, to, t, &lib)
        };
        let t0 = if edge.t_end > t_last && edge.r.is_finite() {
            edge.t_end
        } else {
            let span = cf.waveform().last().0 - cf.waveform().points()[0].0;
            t_last + span.max(1e-15) * 1e-3
        };
        let p0 = eval(self, t0);
        let (mut a, mut c) = if p0.r >= 0.0 {
            let mut dt = t0 - t_last;
            let mut p = p0;
            let mut prev = p0;
            for _ in 0..80 {
                if p.r < 0.0 {
                    break;
                }
                prev = p;
                dt *= 2.0;
                p = eval(self, t_last + dt);
            }
            if p.r >= 0.0 {
                return None;
            }
            (prev, p)
        } else {
            let mut dt = t0 - t_last;
            let mut p = p0;
            let mut prev = p0;
            for _ in 0..80 {
                if p.r >= 0.0 {
                    break;
                }
                prev = p;
                dt *= 0.5;
                p = eval(self, t_last + dt);
            }
            if p.r < 0.0 {
                return None;
            }
            (p, prev)
        };
        let tol = self.cfg.tol;
        let mut side = 0;
        let (mut fa, mut fc) = (a.r, c.r);
        let mut best = if a.r.abs() < c.r.abs() { a } else { c };
        for _ in 0..80 {
            let t = (a.t_end * fc - c.t_end * fa) / (fc - fa);
            let t = if t > a.t_end && t < c.t_end { t } else { 0.5 * (a.t_end + c.t_end) };
            let p = eval(self, t);
            if p.r.abs() < best.r.abs() {
                best = p;
            }
            if p.r.abs() <= tol * p.i_lib.max(peak) || c.t_end - a.t_end <= 1e-9 * c.t_end {
                break;
            }
            if p.r >= 0.0 {
                a = p;
                fa = p.r;
                if side == 1 {
                    fc *= 0.5;
                }
                side = 1;
            } else {
                c = p;
                fc = p.r;
                if side == -1 {
                    fa *= 0.5;
                }
                side = -1;
            }
        }
        Some(best)
    }

    fn blend_at(&self, lo: usize, hi: usize, w: f64) -> CapBlend {
        let g = &self.table.cap_grid;
        CapBlend {
            lo,
            hi,
            w,
            c: (1.0 - w) * g[lo] + w * g[hi],
        }
    }

    fn grid_probe<F>(&mut self, probe: &mut F, cache: &mut [Option<Option<Probe>>], k: usize) -> Option<Probe>
    where
        F: FnMut(&mut Self, &CapBlend) -> Option<Probe>,
    {
        if cache[k].is_none() {
            let b = self.table.grid_blend(k);
            cache[k] = Some(probe(self, &b));
        }
        cache[k].unwrap()
    }

    /// Find the capacitance where `probe` changes sign. Returns the blend,
    /// its probe, whether the tolerance was met, and whether the exhaustive
    /// scan was needed.
    fn search<F>(&mut self, mut probe: F, peak: f64) -> Option<(CapBlend, Probe, bool, bool)>
    where
        F: FnMut(&mut Self, &CapBlend) -> Option<Probe>,
    {
        let n = self.table.cap_grid.len();
        let mut cache: Vec<Option<Option<Probe>>> = vec![None; n];
        let frac = self.cfg.tol;
        let tol = move |p: &Probe| frac * p.i_lib.max(peak);
        let (mut lo, mut hi) = (0, n - 1);
        let p_lo = self.grid_probe(&mut probe, &mut cache, lo);
        let p_hi = self.grid_probe(&mut probe, &mut cache, hi);
        let mut exhaustive = true;
        if let (Some(a), Some(b)) = (p_lo, p_hi) {
            if a.r >= 0.0 && b.r < 0.0 {
                exhaustive = false;
                let mut iters = self.cfg.grid_iterations(n);
                while hi - lo > 1 && iters > 0 {
                    iters -= 1;
                    let mid = (lo + hi) / 2;
                    match self.grid_probe(&mut probe, &mut cache, mid) {
                        Some(p) if p.r >= 0.0 => lo = mid,
                        Some(_) => hi = mid,
                        None => {
                            exhaustive = true;
                            break;
                        }
                    }
                }
                if hi - lo > 1 {
                    exhaustive = true;
                }
                // the sign rule assumes r decreases with C; verify around the bracket
                let mut check = |me: &mut Self, k: usize, j: usize| {
                    match (me.grid_probe(&mut probe, &mut cache, k), me.grid_probe(&mut probe, &mut cache, j)) {
                        (Some(x), Some(y)) => x.r >= y.r,
                        _ => false,
                    }
                };
                if !exhaustive && lo > 0 && !check(self, lo - 1, lo) {
                    exhaustive = true;
                }
                if !exhaustive && hi + 1 < n && !check(self, hi, hi + 1) {
                    exhaustive = true;
                }
            }
        }
        if exhaustive {
            let all: Vec<Option<Probe>> = (0..n).map(|k| self.grid_probe(&mut probe, &mut cache, k)).collect();
            let sign_change = (0..n - 1).find(|&k| match (all[k], all[k + 1]) {
                (Some(a), Some(b)) => a.r >= 0.0 && b.r < 0.0,
                _ => false,
            });
            match sign_change {
                Some(k) => (lo, hi) = (k, k + 1),
                None => {
                    // no root on the grid: take the edge the sign points to,
                    // or the closest point when signs are mixed
                    let valid: Vec<(usize, Probe)> =
                        all.iter().enumerate().filter_map(|(k, p)| p.map(|p| (k, p))).collect();
                    let (k, p) = if valid.iter().all(|(_, p)| p.r >= 0.0) {
                        *valid.last()?
                    } else if valid.iter().all(|(_, p)| p.r < 0.0) {
                        *valid.first()?
                    } else {
                        *valid.iter().min_by(|a, b| a.1.r.abs().total_cmp(&b.1.r.abs()))?
                    };
                    return Some((self.table.grid_blend(k), p, p.r.abs() <= tol(&p), true));
                }
            }
        }
        let p0 = self.grid_probe(&mut probe, &mut cache, lo)?;
        let p1 = self.grid_probe(&mut probe, &mut cache, hi)?;
        self.refine(&mut probe, (lo, hi), (p0, p1), peak, exhaustive)
    }

    /// Illinois refinement of the blend weight between grid points `lo` and
    /// `hi` whose probes bracket a sign change.
    fn refine<F>(
        &mut self,
        probe: &mut F,
        (lo, hi): (usize, usize),
        (p0, p1): (Probe, Probe),
        peak: f64,
        exhaustive: bool,
    ) -> Option<(CapBlend, Probe, bool, bool)>
    where
        F: FnMut(&mut Self, &CapBlend) -> Option<Probe>,
    {
        let frac = self.cfg.tol;
        let tol = move |p: &Probe| frac * p.i_lib.max(peak);
        if p0.r == 0.0 {
            return Some((self.table.grid_blend(lo), p0, true, exhaustive));
        }
        // Illinois refinement on the blend weight
        let (mut w0, mut f0) = (0.0, p0.r);
        let (mut w1, mut f1) = (1.0, p1.r);
        let mut best = if p1.r.abs() < p0.r.abs() {
            (self.blend_at(lo, hi, 1.0), p1)
        } else {
            (self.blend_at(lo, hi, 0.0), p0)
        };
        let mut side = 0;
        for _ in 0..60 {
            let w = if f0 != f1 && f0.is_finite() && f1.is_finite() {
                (w0 * f1 - w1 * f0) / (f1 - f0)
            } else {
                0.5 * (w0 + w1)
            };
            let w = if w > w0 && w < w1 { w } else { 0.5 * (w0 + w1) };
            let b = self.blend_at(lo, hi, w);
            let Some(p) = probe(self, &b) else { break };
            if p.r.abs() < best.1.r.abs() {
                best = (b, p);
            }
            if p.r.abs() <= tol(&p) || w1 - w0 <= 1e-9 {
                return Some((b, p, p.r.abs() <= tol(&p), exhaustive));
            }
            if p.r >= 0.0 {
                w0 = w;
                f0 = p.r;
                if side == 1 {
                    f1 *= 0.5;
                }
                side = 1;
            } else {
                w1 = w;
                f1 = p.r;
                if side == -1 {
                    f0 *= 0.5;
                }
                side = -1;
            }
        }
        let ok = best.1.r.abs() <= tol(&best.1);
        Some((best.0, best.1, ok, exhaustive))
    }
}

/// Match the RC load `ya` against `table`, step by step.
///
/// The returned trace already carries the head (the first step is matched on
/// whole library heads); [`stitch_tail`] completes it.
pub fn dcm_match(
    table: &DriverCharTable,
    ya: &ReducedAdmittance,
    cfg: &DcmConfig,
) -> Result<DcmTrace, DcmError> {
    cfg.validate()?;
    let c_total = admittance_capacitance(ya);
    let c_max = table.c_max();
    if c_total > c_max * (1.0 + 1e-9) {
        return Err(DcmError::Coverage { c_total, c_max });
    }
    let vdd = table.vdd;
    let dir = table.direction;
    let n = cfg.n_steps;
    let (u_s, u_e) = (cfg.v_start_frac * vdd, cfg.v_end_frac * vdd);
    let level = |i: usize| u_s + (u_e - u_s) * (i - 1) as f64 / (n - 1) as f64;
    let y_dc = ya.dc();
    let to_i = |i_u: f64| match dir {
        Direction::Rising => i_u,
        Direction::Falling => y_dc * vdd - i_u,
    };
    let mut m = Matcher {
        table,
        cfg,
        evaluations: 0,
    };
    let mut fallbacks = 0;
    let mut records = Vec::with_capacity(n);

    let scale = |p: &Probe, peak: f64| p.i_lib.max(peak).max(f64::MIN_POSITIVE);
    let l1 = level(1);
    let (b1, p1, ok1, mut cf, mut peak, head_pts) = match cfg.crossing {
        Crossing::Incremental => {
            // step 1: whole library heads up to the first level
            let (b1, p1, ok1, ex1) = m
                .search(|me, b| me.probe_head(ya, b, l1), 0.0)
                .ok_or(DcmError::Unreachable { level: dir.voltage(vdd, l1) })?;
            fallbacks += ex1 as usize;
            let head_pts = m.head_points(&b1, l1).ok_or(DcmError::Unreachable {
                level: dir.voltage(vdd, l1),
            })?;
            let cf = ClosedFormResponse::new(ya.clone(), PwlWaveform::new(head_pts.clone())?);
            let head_times: Vec<f64> = head_pts.iter().map(|p| p.0).collect();
            let peak = cf.eval_sorted(&head_times).iter().fold(0.0f64, |m, i| m.max(i.abs()));
            (b1, p1, ok1, cf, peak, head_pts)
        }
        Crossing::Absolute => {
            // march the head in time until the first level is reached, then
            // match the first level like any other
            let mut cf = ClosedFormResponse::start(ya.clone(), 0.0, 0.0);
            let mut peak = 0.0f64;
            let t_fast = table
                .time_of_progress(&table.grid_blend(0), l1)
                .ok_or(DcmError::Unreachable { level: dir.voltage(vdd, l1) })?;
            let h = t_fast / HEAD_STEPS as f64;
            let mut k = 1;
            let mut i_head = table.static_current_at(&table.grid_blend(0), 0.0);
            loop {
                let t = k as f64 * h;
                k += 1;
                let (u, i_drv) = m
                    .head_point(&cf, t, i_head, cfg.tol * peak.max(f64::MIN_POSITIVE))
                    .ok_or(DcmError::Unreachable { level: dir.voltage(vdd, l1) })?;
                if u >= l1 || k > 64 * HEAD_STEPS {
                    break;
                }
                cf.push(t, u)?;
                i_head = i_drv;
                peak = peak.max(i_drv.abs()).max(cf.eval(t).abs());
            }
            let (b1, mut p1, mut ok1, ex1) = m
                .search(|me, b| me.probe_step(&cf, b, l1, l1), peak)
                .ok_or(DcmError::Unreachable { level: dir.voltage(vdd, l1) })?;
            fallbacks += ex1 as usize;
            let grid = &table.cap_grid;
            if !ok1 && ((b1.c >= grid[grid.len() - 1] && p1.r > 0.0) || (b1.c <= grid[0] && p1.r < 0.0)) {
                if let Some(q) = m.solve_time(&cf, &b1, l1, l1, p1, peak) {
                    ok1 = q.r.abs() <= cfg.tol * scale(&q, peak);
                    p1 = q;
                }
            }
            if !(p1.t_end > cf.waveform().last().0) {
                return Err(DcmError::Unreachable { level: dir.voltage(vdd, l1) });
            }
            let mut head_pts = cf.waveform().points().to_vec();
            cf.push(p1.t_end, l1)?;
            head_pts.push((p1.t_end, l1));
            (b1, p1, ok1, cf, peak, head_pts)
        }
    };
    peak = peak.max(cf.eval(p1.t_end).abs());
    records.push(StepRecord {
        step: 1,
        t: p1.t_end,
        v: dir.voltage(vdd, l1),
        i: to_i(cf.eval(p1.t_end)),
        c_step: b1.c,
        residual: p1.r.abs() / scale(&p1, peak),
        converged: ok1,
    });
    let head: Vec<(f64, f64)> = head_pts[..head_pts.len() - 1]
        .iter()
        .map(|&(t, u)| (t, dir.voltage(vdd, u)))
        .collect();

    for i in 2..=n {
        let (from, to) = (level(i - 1), level(i));
        let (b, mut p, mut ok, ex) = m
            .search(|me, b| me.probe_step(&cf, b, from, to), peak)
            .ok_or(DcmError::Unreachable { level: dir.voltage(vdd, to) })?;
        fallbacks += ex as usize;
        let grid = &table.cap_grid;
        let at_top = b.c >= grid[grid.len() - 1] && p.r > 0.0;
        let at_bottom = b.c <= grid[0] && p.r < 0.0;
        if !ok && (at_top || at_bottom) {
            if let Some(q) = m.solve_time(&cf, &b, from, to, p, peak) {
                ok = q.r.abs() <= cfg.tol * scale(&q, peak);
                p = q;
            }
        }
        if !(p.t_end > cf.waveform().last().0) {
            return Err(DcmError::Unreachable { level: dir.voltage(vdd, to) });
        }
        cf.push(p.t_end, to)?;
        let i_u = cf.eval(p.t_end);
        peak = peak.max(i_u.abs());
        records.push(StepRecord {
            step: i,
            t: p.t_end,
            v: dir.voltage(vdd, to),
            i: to_i(i_u),
            c_step: b.c,
            residual: p.r.abs() / scale(&p, peak),
            converged: ok,
        });
    }
    let c_eff_first = records[0].c_step;
    let c_eff_last = records[n - 1].c_step;
    Ok(DcmTrace {
        vdd,
        direction: dir,
        records,
        head,
        tail: Vec::new(),
        c_eff_first,
        c_eff_last,
        evaluations: m.evaluations,
        fallbacks,
        response: cf,
        y_dc,
    })
}

fn rebuild(trace: &mut DcmTrace, pts: Vec<(f64, f64)>) -> Result<(), DcmError> {
    let ya = trace.response.admittance().clone();
    let (vdd, dir) = (trace.vdd, trace.direction);
    let prog = pts.into_iter().map(|(t, v)| (t, dir.progress(vdd, v))).collect();
    trace.response = ClosedFormResponse::new(ya, PwlWaveform::new(prog)?);
    Ok(())
}

/// Replace everything before the first record with the library curve of
/// `c_eff_first`, shifted so its first-level crossing lands on that record.
pub fn stitch_head(mut trace: DcmTrace, table: &DriverCharTable) -> Result<DcmTrace, DcmError> {
    let first = trace.records[0];
    let b = table.blend(trace.c_eff_first).map_err(|_| DcmError::Coverage {
        c_total: trace.c_eff_first,
        c_max: table.c_max(),
    })?;
    let u1 = table.direction.progress(table.vdd, first.v);
    let t_cross = table
        .time_of_progress(&b, u1)
        .ok_or(DcmError::Unreachable { level: first.v })?;
    let shift = first.t - t_cross;
    let head: Vec<(f64, f64)> = table
        .time_grid
        .iter()
        .filter(|&&t| t < t_cross && t + shift >= 0.0)
        .map(|&t| (t + shift, table.direction.voltage(table.vdd, table.progress_at(&b, t))))
        .collect();
    let mut pts = head.clone();
    if pts.first().is_none_or(|p| p.0 > 0.0) {
        // hold the initial rail from t = 0
        let v0 = table.direction.voltage(table.vdd, 0.0);
        pts.insert(0, (0.0, v0));
    }
    pts.extend(trace.records.iter().map(|r| (r.t, r.v)));
    pts.extend(trace.tail.iter().copied());
    pts.dedup_by(|a, b| a.0 <= b.0);
    trace.head = pts.iter().copied().take_while(|p| p.0 < first.t).collect();
    rebuild(&mut trace, pts)?;
    Ok(trace)
}

/// Append the library curve of `c_eff_last` from its last-level crossing,
/// shifted onto the last record; the curve settles within the table window.
pub fn stitch_tail(mut trace: DcmTrace, table: &DriverCharTable) -> Result<DcmTrace, DcmError> {
    let last = *trace.records.last().expect("trace has records");
    let b = table.blend(trace.c_eff_last).map_err(|_| DcmError::Coverage {
        c_total: trace.c_eff_last,
        c_max: table.c_max(),
    })?;
    let u_n = table.direction.progress(table.vdd, last.v);
    let t_cross = table
        .time_of_progress(&b, u_n)
        .ok_or(DcmError::Unreachable { level: last.v })?;
    let shift = last.t - t_cross;
    trace.tail = table
        .time_grid
        .iter()
        .filter(|&&t| t > t_cross && t + shift > last.t)
        .map(|&t| (t + shift, table.direction.voltage(table.vdd, table.progress_at(&b, t))))
        .collect();
    let mut pts: Vec<(f64, f64)> = trace.head.clone();
    if pts.first().is_none_or(|p| p.0 > 0.0) {
        pts.insert(0, (0.0, table.direction.voltage(table.vdd, 0.0)));
    }
    pts.extend(trace.records.iter().map(|r| (r.t, r.v)));
    pts.extend(trace.tail.iter().copied());
    pts.dedup_by(|a, b| a.0 <= b.0);
    rebuild(&mut trace, pts)?;
    Ok(trace)
}

/// Match, then stitch head and tail.
pub fn run_dcm(
    table: &DriverCharTable,
    ya: &ReducedAdmittance,
    cfg: &DcmConfig,
) -> Result<DcmTrace, DcmError> {
    let trace = dcm_match(table, ya, cfg)?;
    // absolute matching marches its own head
    let trace = match cfg.crossing {
        Crossing::Incremental => stitch_head(trace, table)?,
        Crossing::Absolute => trace,
    };
    stitch_tail(trace, table)
}

/// Lumped comparator: the table curve for a single capacitance `c_total`.
#[derive(Debug, Clone)]
pub struct Baseline {
    pub c: f64,
    pub voltage: PwlWaveform,
    pub current: PwlWaveform,
}

pub fn baseline_ctotal(table: &DriverCharTable, c_total: f64) -> Result<Baseline, DcmError> {
    let cov = |_| DcmError::Coverage {
        c_total,
        c_max: table.c_max(),
    };
    Ok(Baseline {
        c: c_total,
        voltage: table.voltage_waveform(c_total).map_err(cov)?,
        current: table.current_waveform(c_total).map_err(cov)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurrentMetrics {
    #[serde(rename = "avg_A")]
    pub avg: f64,
    #[serde(rename = "avg_abs_A")]
    pub avg_abs: f64,
    #[serde(rename = "rms_A")]
    pub rms: f64,
    #[serde(rename = "peak_A")]
    pub peak: f64,
}

impl CurrentMetrics {
    /// `|self - reference| / |reference|` per field.
    pub fn relative_error(&self, reference: &CurrentMetrics) -> CurrentMetrics {
        let rel = |a: f64, b: f64| if b == 0.0 { (a - b).abs() } else { ((a - b) / b).abs() };
        CurrentMetrics {
            avg: rel(self.avg, reference.avg),
            avg_abs: rel(self.avg_abs, reference.avg_abs),
            rms: rel(self.rms, reference.rms),
            peak: rel(self.peak, reference.peak),
        }
    }

    pub fn max_of_three(&self) -> f64 {
        self.avg.max(self.rms).max(self.peak)
    }
}

/// Metrics file contents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(flatten)]
    pub metrics: CurrentMetrics,
    pub runtime_s: f64,
    pub residual_max: f64,
}

/// Exact metrics of a piecewise-linear current over `[0, window]`, with the
/// waveform held beyond its end points.
pub fn pwl_metrics(current: &PwlWaveform, window: f64) -> Result<CurrentMetrics, DcmError> {
    if !(window > 0.0 && window.is_finite()) {
        return Err(DcmError::EmptyWindow);
    }
    let mut ts: Vec<f64> = vec![0.0];
    ts.extend(current.points().iter().map(|p| p.0).filter(|&t| t > 0.0 && t < window));
    ts.push(window);
    let vals: Vec<f64> = ts.iter().map(|&t| current.eval(t)).collect();
    Ok(segment_metrics(&ts, &vals, window))
}

fn segment_metrics(ts: &[f64], vals: &[f64], window: f64) -> CurrentMetrics {
    let (mut q, mut q_abs, mut q2, mut peak) = (0.0, 0.0, 0.0, 0.0f64);
    for k in 0..ts.len() {
        peak = peak.max(vals[k].abs());
        if k == 0 {
            continue;
        }
        let h = ts[k] - ts[k - 1];
        let (a, b) = (vals[k - 1], vals[k]);
        q += 0.5 * h * (a + b);
        q2 += h * (a * a + a * b + b * b) / 3.0;
        q_abs += if a * b >= 0.0 {
            0.5 * h * (a.abs() + b.abs())
        } else {
            0.5 * h * (a * a + b * b) / (a.abs() + b.abs())
        };
    }
    CurrentMetrics {
        avg: q / window,
        avg_abs: q_abs / window,
        rms: (q2 / window).sqrt(),
        peak,
    }
}

/// Metrics of an arbitrary current function, sampled 8 times per interval
/// between consecutive `breakpoints` and integrated piecewise linearly.
pub fn compute_metrics(
    current: impl Fn(&[f64]) -> Vec<f64>,
    breakpoints: &[f64],
    window: f64,
) -> Result<CurrentMetrics, DcmError> {
    if !(window > 0.0 && window.is_finite()) {
        return Err(DcmError::EmptyWindow);
    }
    let mut knots: Vec<f64> = vec![0.0];
    knots.extend(breakpoints.iter().copied().filter(|&t| t > 0.0 && t < window));
    knots.push(window);
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let mut ts = Vec::with_capacity(8 * knots.len());
    for w in knots.windows(2) {
        for j in 0..8 {
            ts.push(w[0] + (w[1] - w[0]) * j as f64 / 8.0);
        }
    }
    ts.push(window);
    let vals = current(&ts);
    Ok(segment_metrics(&ts, &vals, window))
}

/// Metrics of a stitched trace over `[0, window]`.
pub fn trace_metrics(trace: &DcmTrace, window: f64) -> Result<CurrentMetrics, DcmError> {
    compute_metrics(|ts| trace.currents(ts), &trace.breakpoints(), window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driverlib::{characterize, default_cap_grid, CharacterizeOptions, DriverModel};
    use crate::mor::reduce;
    use crate::netlist::{assemble_mna, parse_netlist};

    fn mos() -> DriverModel {
        DriverModel::MosLike {
            i_sat: 1e-3,
            v_knee: 0.4,
            v_th: 0.3,
            c_couple: 1e-15,
            c_int: 1e-15,
        }
    }

    fn table(model: &DriverModel, direction: Direction, c_max: f64) -> DriverCharTable {
        characterize(
            "drv",
            model,
            1.1,
            2e-11,
            direction,
            &default_cap_grid(c_max),
            &CharacterizeOptions::new(4e-10, 2e-13),
        )
        .unwrap()
    }

    fn cap_admittance(c: f64) -> ReducedAdmittance {
        let net = parse_netlist(&format!("C1 out 0 {c:e}"), "out").unwrap();
        reduce(&assemble_mna(&net).unwrap(), 4).unwrap()
    }

    fn ladder_admittance(n: usize, r: f64, c: f64) -> ReducedAdmittance {
        let mut s = String::new();
        for k in 0..n {
            s += &format!("R{k} n{k} n{} {r:e}\nC{k} n{} 0 {c:e}\n", k + 1, k + 1);
        }
        reduce(&assemble_mna(&parse_netlist(&s, "n0").unwrap()).unwrap(), 4).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(DcmConfig::default().validate().is_ok());
        assert!(DcmConfig::with_steps(5).validate().is_err());
        let mut c = DcmConfig::default();
        c.tol = 0.3;
        assert!(c.validate().is_err());
        c.tol = 0.01;
        c.v_end_frac = 0.005;
        assert!(c.validate().is_err());
        assert_eq!(DcmConfig::default().grid_iterations(22), 7);
    }

    #[test]
    fn pure_capacitor_is_a_fixed_point() {
        let t = table(&mos(), Direction::Rising, 20e-15);
        for k in [3, 10, 21] {
            let c = t.cap_grid[k];
            let trace = run_dcm(&t, &cap_admittance(c), &DcmConfig::default()).unwrap();
            let refine = 0.05 * 20e-15;
            let hits = trace.c_steps().iter().filter(|&&x| (x - c).abs() <= refine).count();
            assert!(hits >= 95, "k={k} hits={hits}");
            let lib = t.voltage_waveform(c).unwrap();
            let out = trace.voltage_waveform();
            for r in &trace.records {
                assert!((lib.eval(r.t) - r.v).abs() <= 0.01 * 1.1, "k={k} step={} t={:e} lib={} v={}", r.step, r.t, lib.eval(r.t), r.v);
            }
            for j in (0..400).map(|j| j as f64 * 1e-12) {
                assert!((lib.eval(j) - out.eval(j)).abs() <= 0.01 * 1.1, "t={j:e}");
            }
        }
    }

    #[test]
    fn trace_invariants_hold() {
        let t = table(&mos(), Direction::Rising, 40e-15);
        let ya = ladder_admittance(50, 40.0, 0.6e-15);
        let trace = run_dcm(&t, &ya, &DcmConfig::default()).unwrap();
        assert_eq!(trace.records.len(), 100);
        assert!(trace.records.windows(2).all(|w| w[1].t > w[0].t && w[1].v > w[0].v));
        let (lo, hi) = (t.c_min(), t.c_max());
        assert!(trace.c_steps().iter().all(|&c| c >= lo && c <= hi));
        let w = trace.voltage_waveform();
        for r in &trace.records {
            assert_eq!(w.eval(r.t), r.v);
        }
        assert!(w.points().windows(2).all(|p| p[1].0 > p[0].0));
        // continuity at the stitch points
        let first = trace.records[0];
        let h = trace.head.last().unwrap();
        assert!((w.eval(h.0) - h.1).abs() < 1e-3);
        assert!(first.v - h.1 < 0.05);
        assert!((w.last().1 - 1.1).abs() <= 1e-3 * 1.1);
        // head carries the coupling undershoot
        assert!(trace.head.iter().any(|p| p.1 < 0.0));
        // deterministic
        let again = run_dcm(&t, &ya, &DcmConfig::default()).unwrap();
        assert_eq!(again.records, trace.records);
    }

    #[test]
    fn shielded_ladder_capacitance_grows() {
        let t = table(&DriverModel::TheveninRamp { r_drv: 300.0 }, Direction::Rising, 30e-15);
        let ya = ladder_admittance(100, 20.0, 0.3e-15);
        let trace = run_dcm(&t, &ya, &DcmConfig::default()).unwrap();
        let cs = trace.c_steps();
        assert!(cs[0] < 0.6 * 30e-15, "first {:e}", cs[0]);
        assert!(cs[cs.len() - 1] > cs[0]);
        let late = cs[cs.len() - 1];
        assert!((late - 30e-15).abs() <= 0.2 * 30e-15, "last {late:e}");
    }

    #[test]
    fn falling_transition_mirrors_rising() {
        let t = table(&mos(), Direction::Falling, 20e-15);
        let c = t.cap_grid[12];
        let trace = run_dcm(&t, &cap_admittance(c), &DcmConfig::default()).unwrap();
        assert!(trace.records.windows(2).all(|w| w[1].v < w[0].v));
        assert!(trace.records.iter().all(|r| r.i <= 1e-9));
        // overshoot above vdd at the start
        assert!(trace.head.iter().any(|p| p.1 > 1.1));
        let lib = t.current_waveform(c).unwrap();
        let mid = trace.records[50];
        let rel = (trace.current(mid.t) - lib.eval(mid.t)).abs() / lib.eval(mid.t).abs();
        assert!(rel < 0.02, "rel={rel}");
    }

    #[test]
    fn exhausted_search_reports_residuals() {
        let t = table(&mos(), Direction::Rising, 20e-15);
        let ya = ladder_admittance(40, 100.0, 0.4e-15);
        let mut cfg = DcmConfig::default();
        cfg.tol = 1e-15;
        cfg.max_iter = Some(1);
        let trace = run_dcm(&t, &ya, &cfg).unwrap();
        assert_eq!(trace.records.len(), 100);
        assert!(trace.records.iter().any(|r| !r.converged));
        assert!(trace.residual_max() > 0.0);
    }

    #[test]
    fn endpoint_rule_and_absolute_crossing_run() {
        let t = table(&mos(), Direction::Rising, 20e-15);
        let ya = ladder_admittance(30, 50.0, 0.5e-15);
        for (rule, crossing) in [
            (MatchRule::Endpoint, Crossing::Incremental),
            (MatchRule::Charge, Crossing::Absolute),
        ] {
            let cfg = DcmConfig {
                rule,
                crossing,
                ..DcmConfig::default()
            };
            let trace = run_dcm(&t, &ya, &cfg).unwrap();
            assert!(trace.records.windows(2).all(|w| w[1].t > w[0].t));
        }
    }

    #[test]
    fn coverage_is_checked() {
        let t = table(&mos(), Direction::Rising, 10e-15);
        let e = dcm_match(&t, &cap_admittance(12e-15), &DcmConfig::default());
        assert!(matches!(e, Err(DcmError::Coverage { .. })));
    }

    #[test]
    fn baseline_equals_dcm_on_pure_capacitor() {
        let t = table(&mos(), Direction::Rising, 20e-15);
        let c = t.cap_grid[15];
        let trace = run_dcm(&t, &cap_admittance(c), &DcmConfig::default()).unwrap();
        let base = baseline_ctotal(&t, c).unwrap();
        let window = 3e-10;
        let a = trace_metrics(&trace, window).unwrap();
        let b = pwl_metrics(&base.current, window).unwrap();
        let e = a.relative_error(&b);
        assert!(e.max_of_three() < 0.02, "{e:?}");
    }

    #[test]
    fn metrics_of_constant_and_half_sine() {
        let c = PwlWaveform::new(vec![(0.0, 1e-3), (1.0, 1e-3)]).unwrap();
        let m = pwl_metrics(&c, 1.0).unwrap();
        for x in [m.avg, m.avg_abs, m.rms, m.peak] {
            assert!((x - 1e-3).abs() < 1e-15);
        }
        let pi = std::f64::consts::PI;
        let m = compute_metrics(
            |ts| ts.iter().map(|&t| (pi * t).sin()).collect(),
            &(0..=400).map(|k| k as f64 / 400.0).collect::<Vec<_>>(),
            1.0,
        )
        .unwrap();
        assert!((m.avg - 2.0 / pi).abs() < 1e-6);
        assert!((m.rms - 0.5f64.sqrt()).abs() < 1e-6);
        assert!((m.peak - 1.0).abs() < 1e-9);
        assert!(matches!(pwl_metrics(&c, 0.0), Err(DcmError::EmptyWindow)));
    }

    #[test]
    fn sign_changing_current_abs_average() {
        let w = PwlWaveform::new(vec![(0.0, -1.0), (2.0, 1.0)]).unwrap();
        let m = pwl_metrics(&w, 2.0).unwrap();
        assert!(m.avg.abs() < 1e-15);
        assert!((m.avg_abs - 0.5).abs() < 1e-15);
        assert!((m.rms - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn trace_csv_and_metrics_json() {
        let t = table(&mos(), Direction::Rising, 20e-15);
        let trace = run_dcm(&t, &cap_admittance(5e-15), &DcmConfig::with_steps(20)).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "step,t_ps,v_V,i_mA,C_step_fF");
        assert_eq!(lines.len(), 1 + trace.head.len() + 20 + trace.tail.len());
        let rep = MetricsReport {
            metrics: trace_metrics(&trace, 2e-10).unwrap(),
            runtime_s: 0.1,
            residual_max: trace.residual_max(),
        };
        let json = serde_json::to_value(rep).unwrap();
        for k in ["avg_A", "avg_abs_A", "rms_A", "peak_A", "runtime_s", "residual_max"] {
            assert!(json.get(k).is_some(), "{k}");
        }
    }
}

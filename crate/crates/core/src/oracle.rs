//! Reference transient simulator: fixed-step trapezoidal integration of the
//! full MNA system, driven either by an ideal PWL source at the port or by a
//! behavioral driver model.
//!
//! Trapezoidal integration leaves stiff modes undamped, so a jump in the
//! forcing would ring for the whole run. Each source breakpoint (and t = 0)
//! is therefore followed by a short backward-Euler sub-step of `dt / 20`
//! before the trapezoid rule resumes; the output grid stays uniform.

use std::collections::HashMap;

use sprs::CsMat;
use thiserror::Error;

use crate::driverlib::DriverModel;
use crate::netlist::MnaSystem;
use crate::response::PwlWaveform;
use crate::sparse::{self, FactorError, SpdFactor};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum OracleError {
    #[error("time step {dt:e} s and window {window:e} s must be positive and finite")]
    BadStep { dt: f64, window: f64 },
    #[error("non-finite state at step {step} (t = {t:e} s)")]
    NonFinite { step: usize, t: f64 },
    #[error("driver solve did not converge at t = {t:e} s")]
    Newton { t: f64 },
    #[error("invalid driver model: {0}")]
    Model(String),
    #[error(transparent)]
    Factor(#[from] FactorError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransientStats {
    pub dt: f64,
    pub steps: usize,
    /// Largest port KCL residual of the driver solve (A); 0 for ideal sources.
    pub max_residual: f64,
    /// Smallest `R * C` product over resistors and their adjacent capacitance.
    pub tau_min: f64,
    /// Whether `dt <= tau_min / 10` held. Fine ladders routinely violate this;
    /// the integrator stays stable, only the stiffest modes are not resolved.
    pub resolves_tau_min: bool,
    /// Backward-Euler sub-steps taken after breakpoints.
    pub euler_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransientResult {
    pub time: Vec<f64>,
    pub v_port: Vec<f64>,
    /// Current into the network at the port.
    pub i_port: Vec<f64>,
    /// Every node voltage per time point, when requested.
    pub nodes: Option<Vec<Vec<f64>>>,
    pub stats: TransientStats,
}

impl TransientResult {
    pub fn charge(&self) -> f64 {
        self.time
            .windows(2)
            .zip(self.i_port.windows(2))
            .map(|(t, i)| 0.5 * (i[0] + i[1]) * (t[1] - t[0]))
            .sum()
    }

    /// First time the port voltage reaches `v` in the given sense.
    pub fn crossing(&self, v: f64, rising: bool) -> Option<f64> {
        let hit = |x: f64| if rising { x >= v } else { x <= v };
        let k = self.v_port.iter().position(|&x| hit(x))?;
        if k == 0 {
            return Some(self.time[0]);
        }
        let (t0, t1) = (self.time[k - 1], self.time[k]);
        let (v0, v1) = (self.v_port[k - 1], self.v_port[k]);
        Some(t0 + (v - v0) / (v1 - v0) * (t1 - t0))
    }

    pub fn current_waveform(&self) -> PwlWaveform {
        PwlWaveform::new(self.time.iter().copied().zip(self.i_port.iter().copied()).collect())
            .expect("uniform grid")
    }

    pub fn voltage_waveform(&self) -> PwlWaveform {
        PwlWaveform::new(self.time.iter().copied().zip(self.v_port.iter().copied()).collect())
            .expect("uniform grid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransientOptions {
    pub dt: f64,
    pub window: f64,
    pub record_nodes: bool,
}

impl TransientOptions {
    pub fn new(dt: f64, window: f64) -> Self {
        Self {
            dt,
            window,
            record_nodes: false,
        }
    }
}

/// Smallest `R * C_adjacent` over the resistors of the system.
pub fn tau_min_estimate(sys: &MnaSystem) -> f64 {
    let n = sys.dim();
    let mut cap = vec![0.0; n];
    for (v, (i, j)) in sys.c.iter() {
        if i == j {
            cap[i] += v;
        }
    }
    let mut best = f64::INFINITY;
    for (v, (i, j)) in sys.g.iter() {
        if i < j && *v < 0.0 {
            let c = cap[i].max(cap[j]);
            if c > 0.0 {
                best = best.min(c / -v);
            }
        }
    }
    best
}

fn check_step(o: &TransientOptions) -> Result<usize, OracleError> {
    if !(o.dt > 0.0 && o.window > 0.0 && o.dt.is_finite() && o.window.is_finite()) {
        return Err(OracleError::BadStep {
            dt: o.dt,
            window: o.window,
        });
    }
    Ok((o.window / o.dt - 1e-9).ceil() as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Rule {
    Euler,
    Trapezoid,
}

/// Fraction of `dt` taken by the Euler sub-step after each breakpoint.
const EULER_FRACTION: f64 = 0.05;

/// Sub-steps covering `(t0, t1]`. A breakpoint inside the step splits it:
/// trapezoid up to the breakpoint, a short Euler step, trapezoid to `t1`.
/// The flag reports a breakpoint sitting on `t0` itself.
fn substeps(t0: f64, t1: f64, breaks: &[f64], delta: f64) -> (Vec<(f64, f64, Rule)>, bool) {
    let snap = 1e-6 * (t1 - t0);
    let mut out = Vec::new();
    let mut cursor = t0;
    let mut at_start = false;
    for &b in breaks {
        if b < t0 - snap || b >= t1 - snap || b < cursor - snap {
            continue;
        }
        let b = if (b - t0).abs() <= snap {
            at_start = true;
            t0
        } else {
            b.max(cursor)
        };
        if b > cursor {
            out.push((cursor, b, Rule::Trapezoid));
        }
        let end = if b + delta >= t1 - snap { t1 } else { b + delta };
        out.push((b, end, Rule::Euler));
        cursor = end;
    }
    if cursor < t1 {
        out.push((cursor, t1, Rule::Trapezoid));
    }
    (out, at_start)
}

/// Factorizations of `G + C/h` (Euler) and `G + 2C/h` (trapezoid), with the
/// response to a unit current at `port` when one is given.
struct Factors<'a> {
    g: &'a CsMat<f64>,
    c: &'a CsMat<f64>,
    port: Option<usize>,
    cache: HashMap<(Rule, u64), (SpdFactor, Vec<f64>)>,
}

impl<'a> Factors<'a> {
    fn new(g: &'a CsMat<f64>, c: &'a CsMat<f64>, port: Option<usize>) -> Self {
        Self {
            g,
            c,
            port,
            cache: HashMap::new(),
        }
    }

    fn get(&mut self, rule: Rule, h: f64) -> Result<&(SpdFactor, Vec<f64>), OracleError> {
        let key = (rule, h.to_bits());
        if !self.cache.contains_key(&key) {
            let scale = match rule {
                Rule::Euler => 1.0 / h,
                Rule::Trapezoid => 2.0 / h,
            };
            let f = SpdFactor::new(&scaled_sum(1.0, self.g, scale, self.c))?;
            let z = match self.port {
                Some(p) => {
                    let mut e = vec![0.0; f.dim()];
                    e[p] = 1.0;
                    f.solve(&e)
                }
                None => Vec::new(),
            };
            self.cache.insert(key, (f, z));
        }
        Ok(&self.cache[&key])
    }
}

fn sorted_breaks(w: &PwlWaveform) -> Vec<f64> {
    let mut b: Vec<f64> = std::iter::once(0.0)
        .chain(w.points().iter().map(|q| q.0).filter(|&t| t > 0.0))
        .collect();
    b.dedup();
    b
}

fn scaled_sum(a: f64, ma: &CsMat<f64>, b: f64, mb: &CsMat<f64>) -> CsMat<f64> {
    sparse::linear_combination(a, ma, b, mb)
}

/// Port driven by an ideal voltage source following `source`.
pub fn simulate_pwl(
    sys: &MnaSystem,
    source: &PwlWaveform,
    dt: f64,
    window: f64,
) -> Result<TransientResult, OracleError> {
    simulate_pwl_with(sys, source, &TransientOptions::new(dt, window))
}

pub fn simulate_pwl_with(
    sys: &MnaSystem,
    source: &PwlWaveform,
    opts: &TransientOptions,
) -> Result<TransientResult, OracleError> {
    let steps = check_step(opts)?;
    let dt = opts.dt;
    let part = sys.partition();
    let m = part.rows.len();
    let mut factors = Factors::new(&part.g_ii, &part.c_ii, None);
    let breaks = sorted_breaks(source);
    let delta = dt * EULER_FRACTION;
    let probe = dt * 1e-4;

    // the network is at rest before t = 0
    let mut v = vec![0.0; m];
    let mut time = Vec::with_capacity(steps + 1);
    let mut v_port = Vec::with_capacity(steps + 1);
    let mut i_port = Vec::with_capacity(steps + 1);
    let mut nodes = opts.record_nodes.then(Vec::new);
    let current = |u: f64, v: &[f64]| -> f64 {
        part.g_pp * u + part.g_ip.iter().zip(v).map(|(g, x)| g * x).sum::<f64>()
    };
    let record = |nodes: &mut Option<Vec<Vec<f64>>>, u: f64, v: &[f64]| {
        if let Some(rec) = nodes {
            let mut x = vec![0.0; m + 1];
            x[sys.port] = u;
            for (k, &r) in part.rows.iter().enumerate() {
                x[r] = v[k];
            }
            rec.push(x);
        }
    };
    let u_start = source.eval(0.0);
    time.push(0.0);
    v_port.push(u_start);
    i_port.push(current(u_start, &v));
    record(&mut nodes, u_start, &v);
    let mut n_euler = 0;
    for n in 0..steps {
        let t0 = n as f64 * dt;
        let t1 = (n + 1) as f64 * dt;
        let (plan, at_start) = substeps(t0, t1, &breaks, delta);
        if at_start {
            // right limit through a discarded Euler step far shorter than dt
            let (f, _) = factors.get(Rule::Euler, probe)?;
            let ud = source.eval(t0 + probe);
            let cv = sparse::matvec(&part.c_ii, &v);
            let rhs: Vec<f64> = cv.iter().zip(&part.g_ip).map(|(c, g)| c / probe - g * ud).collect();
            patch_jump(&mut i_port, n, current(ud, &f.solve(&rhs)));
        }
        for &(ta, tb, rule) in &plan {
            let h = tb - ta;
            let (ua, ub) = (source.eval(ta), source.eval(tb));
            let cv = sparse::matvec(&part.c_ii, &v);
            let (f, _) = factors.get(rule, h)?;
            v = match rule {
                Rule::Euler => {
                    n_euler += 1;
                    let rhs: Vec<f64> = cv.iter().zip(&part.g_ip).map(|(c, g)| c / h - g * ub).collect();
                    f.solve(&rhs)
                }
                Rule::Trapezoid => {
                    let gv = sparse::matvec(&part.g_ii, &v);
                    let rhs: Vec<f64> = cv
                        .iter()
                        .zip(&gv)
                        .zip(&part.g_ip)
                        .map(|((c, g), gp)| 2.0 * c / h - g - gp * (ua + ub))
                        .collect();
                    f.solve(&rhs)
                }
            };
            if v.iter().any(|x| !x.is_finite()) {
                return Err(OracleError::NonFinite { step: n + 1, t: tb });
            }
        }
        let u1 = source.eval(t1);
        time.push(t1);
        v_port.push(u1);
        i_port.push(current(u1, &v));
        record(&mut nodes, u1, &v);
    }
    let tau_min = tau_min_estimate(sys);
    Ok(TransientResult {
        time,
        v_port,
        i_port,
        nodes,
        stats: TransientStats {
            dt,
            steps,
            max_residual: 0.0,
            tau_min,
            resolves_tau_min: dt <= tau_min / 10.0,
            euler_steps: n_euler,
        },
    })
}

/// A sample sitting on a forcing jump. At t = 0 the right limit is used (the
/// network is at rest before); later the mean of both limits, which keeps
/// the trapezoid rule charge-exact across the jump.
fn patch_jump(i_port: &mut [f64], n: usize, right: f64) {
    if n == 0 {
        i_port[0] = right;
    } else {
        i_port[n] = 0.5 * (i_port[n] + right);
    }
}

/// Port driven by a behavioral inverter whose gate follows `input`.
///
/// The network starts at the rail the inverter holds for the initial input.
pub fn simulate_driver(
    sys: &MnaSystem,
    model: &DriverModel,
    vdd: f64,
    input: &PwlWaveform,
    dt: f64,
    window: f64,
) -> Result<TransientResult, OracleError> {
    simulate_driver_with(sys, model, vdd, input, &TransientOptions::new(dt, window))
}

pub fn simulate_driver_with(
    sys: &MnaSystem,
    model: &DriverModel,
    vdd: f64,
    input: &PwlWaveform,
    opts: &TransientOptions,
) -> Result<TransientResult, OracleError> {
    model.validate().map_err(OracleError::Model)?;
    let steps = check_step(opts)?;
    let dt = opts.dt;
    let n = sys.dim();
    let p = sys.port;
    let (c_cc, c_int) = model.port_capacitances();
    let mut c_full = sys.c.clone();
    if c_cc + c_int > 0.0 {
        c_full = scaled_sum(1.0, &c_full, 1.0, &sparse::from_triplets(n, &[(p, p, c_cc + c_int)]));
    }
    let mut factors = Factors::new(&sys.g, &c_full, Some(p));
    let breaks = sorted_breaks(input);
    let delta = dt * EULER_FRACTION;
    let probe = dt * 1e-4;

    let vin0 = input.eval(0.0);
    let v_init = if vin0 > 0.5 * vdd { 0.0 } else { vdd };
    let mut x = vec![v_init; n];
    let port_current = |x: &[f64]| -> f64 {
        let mut acc = 0.0;
        for (v, (i, j)) in sys.g.iter() {
            if i == p {
                acc += v * x[j];
            }
        }
        acc
    };
    let mut time = Vec::with_capacity(steps + 1);
    let mut v_port = Vec::with_capacity(steps + 1);
    let mut i_port = Vec::with_capacity(steps + 1);
    let mut nodes = opts.record_nodes.then(Vec::new);
    time.push(0.0);
    v_port.push(x[p]);
    i_port.push(port_current(&x));
    if let Some(rec) = nodes.as_mut() {
        rec.push(x.clone());
    }
    let mut i_drv_prev = model.output_current(vdd, vin0, x[p]).0;
    let mut vp = x[p];
    let mut max_res: f64 = 0.0;
    let mut n_euler = 0;
    for k in 0..steps {
        let t0 = k as f64 * dt;
        let t1 = (k + 1) as f64 * dt;
        let (plan, at_start) = substeps(t0, t1, &breaks, delta);
        if at_start {
            let (f, z) = factors.get(Rule::Euler, probe)?;
            let vd = input.eval(t0 + probe);
            let mut rhs: Vec<f64> = sparse::matvec(&c_full, &x).iter().map(|c| c / probe).collect();
            rhs[p] += c_cc * (vd - input.eval(t0)) / probe;
            let a = f.solve(&rhs);
            let (_, i_drv, _) =
                solve_port(model, vdd, vd, a[p], z[p], x[p]).ok_or(OracleError::Newton { t: t0 })?;
            let y: Vec<f64> = a.iter().zip(z).map(|(ai, zi)| ai + zi * i_drv).collect();
            patch_jump(&mut i_port, k, port_current(&y));
        }
        for &(ta, tb, rule) in &plan {
            let h = tb - ta;
            let (va, vb) = (input.eval(ta), input.eval(tb));
            let cx = sparse::matvec(&c_full, &x);
            let (f, z) = factors.get(rule, h)?;
            let a = match rule {
                Rule::Euler => {
                    n_euler += 1;
                    let mut rhs: Vec<f64> = cx.iter().map(|c| c / h).collect();
                    rhs[p] += c_cc * (vb - va) / h;
                    f.solve(&rhs)
                }
                Rule::Trapezoid => {
                    let gx = sparse::matvec(&sys.g, &x);
                    let mut rhs: Vec<f64> = cx.iter().zip(&gx).map(|(c, g)| 2.0 * c / h - g).collect();
                    rhs[p] += i_drv_prev + 2.0 * c_cc * (vb - va) / h;
                    f.solve(&rhs)
                }
            };
            let (v_new, i_drv, res) =
                solve_port(model, vdd, vb, a[p], z[p], x[p]).ok_or(OracleError::Newton { t: tb })?;
            max_res = max_res.max(res);
            // keep x consistent with the linear solve; v_new differs by z_p * residual
            for ((xi, ai), zi) in x.iter_mut().zip(&a).zip(z) {
                *xi = ai + zi * i_drv;
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(OracleError::NonFinite { step: k + 1, t: tb });
            }
            i_drv_prev = i_drv;
            vp = v_new;
        }
        time.push(t1);
        v_port.push(vp);
        i_port.push(port_current(&x));
        if let Some(rec) = nodes.as_mut() {
            rec.push(x.clone());
        }
    }
    let tau_min = tau_min_estimate(sys);
    Ok(TransientResult {
        time,
        v_port,
        i_port,
        nodes,
        stats: TransientStats {
            dt,
            steps,
            max_residual: max_res,
            tau_min,
            resolves_tau_min: dt <= tau_min / 10.0,
            euler_steps: n_euler,
        },
    })
}

/// Solve `(v - a)/z = I(v)` for the port voltage. The left side increases
/// and the driver current never increases with `v`, so the root is unique.
/// Newton with a bisection fallback; returns `(v, I(v), |residual|)`.
fn solve_port(
    model: &DriverModel,
    vdd: f64,
    vin: f64,
    a: f64,
    z: f64,
    guess: f64,
) -> Option<(f64, f64, f64)> {
    const TOL: f64 = 1e-12;
    let f = |v: f64| {
        let (i, di) = model.output_current(vdd, vin, v);
        ((v - a) / z - i, 1.0 / z - di, i)
    };
    let mut v = guess;
    let (mut fv, mut dfv, mut i) = f(v);
    // the driver current is piecewise linear in v, so Newton lands exactly
    for _ in 0..4 {
        if fv == 0.0 {
            return Some((v, i, 0.0));
        }
        let next = v - fv / dfv;
        let (fn_, dn, i_n) = f(next);
        if fn_.abs() >= fv.abs() {
            break;
        }
        (v, fv, dfv, i) = (next, fn_, dn, i_n);
    }
    if fv.abs() <= TOL {
        return Some((v, i, fv.abs()));
    }
    // bracket the root
    let mut step = vdd.abs().max(1e-3) * 1e-3;
    let (mut lo, mut hi) = (v, v);
    if fv > 0.0 {
        loop {
            lo -= step;
            step *= 2.0;
            if f(lo).0 <= 0.0 {
                break;
            }
            if step > 1e6 * vdd.abs().max(1.0) {
                return None;
            }
        }
    } else {
        loop {
            hi += step;
            step *= 2.0;
            if f(hi).0 >= 0.0 {
                break;
            }
            if step > 1e6 * vdd.abs().max(1.0) {
                return None;
            }
        }
    }
    for _ in 0..200 {
        let mut next = v - fv / dfv;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        v = next;
        (fv, dfv, i) = f(v);
        if fv.abs() <= TOL {
            return Some((v, i, fv.abs()));
        }
        if fv > 0.0 {
            hi = v;
        } else {
            lo = v;
        }
        if hi - lo <= 4.0 * f64::EPSILON * v.abs().max(1e-30) {
            return Some((v, i, fv.abs()));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mor::reduce;
    use crate::netlist::{assemble_mna, parse_netlist};
    use crate::response::eval_current;

    fn series_rc() -> MnaSystem {
        assemble_mna(&parse_netlist("R1 n1 n2 1k\nC1 n2 0 10f", "n1").unwrap()).unwrap()
    }

    fn ladder_rc(n: usize, r: &str, c: &str) -> MnaSystem {
        let mut s = String::new();
        for k in 0..n {
            s += &format!("R{k} n{k} n{} {r}\nC{k} n{} 0 {c}\n", k + 1, k + 1);
        }
        assemble_mna(&parse_netlist(&s, "n0").unwrap()).unwrap()
    }

    fn ladder(n: usize) -> MnaSystem {
        ladder_rc(n, "20", "1f")
    }

    #[test]
    fn series_rc_step_charges_exponentially() {
        let sys = series_rc();
        let src = PwlWaveform::new(vec![(0.0, 1.0)]).unwrap();
        let opts = TransientOptions {
            dt: 1e-13,
            window: 5e-11,
            record_nodes: true,
        };
        let r = simulate_pwl_with(&sys, &src, &opts).unwrap();
        let nodes = r.nodes.as_ref().unwrap();
        let n2 = sys.node_index["n2"];
        let tau = 1e-11;
        for (k, t) in r.time.iter().enumerate().skip(1) {
            let want = 1.0 - (-t / tau).exp();
            assert!((nodes[k][n2] - want).abs() < 1e-3, "t={t:e}");
        }
    }

    #[test]
    fn zero_source_gives_zero_result() {
        let sys = ladder(20);
        let src = PwlWaveform::new(vec![(0.0, 0.0), (1e-10, 0.0)]).unwrap();
        let r = simulate_pwl(&sys, &src, 1e-12, 2e-10).unwrap();
        assert!(r.i_port.iter().all(|&i| i == 0.0));
        assert!(r.v_port.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn trapezoid_is_second_order() {
        // order is only visible once every mode is resolved (tau_min = 2 ps)
        let sys = ladder_rc(10, "200", "10f");
        let src = PwlWaveform::new(vec![(0.0, 0.0), (4e-11, 1.0), (1.2e-10, 0.3)]).unwrap();
        let ya = reduce(&sys, sys.dim()).unwrap();
        let probe: Vec<f64> = (1..=20).map(|k| k as f64 * 1e-11).collect();
        let err = |dt: f64| {
            let r = simulate_pwl(&sys, &src, dt, 2e-10).unwrap();
            probe
                .iter()
                .map(|&t| {
                    let k = (t / dt).round() as usize;
                    (r.i_port[k] - eval_current(&ya, &src, t)).abs()
                })
                .fold(0.0, f64::max)
        };
        let ratio = err(2e-13) / err(1e-13);
        assert!((3.2..=4.8).contains(&ratio), "ratio={ratio}");
    }

    #[test]
    fn stored_energy_never_grows_once_source_returns_to_zero() {
        let sys = ladder(15);
        let src = PwlWaveform::new(vec![(0.0, 0.0), (2e-11, 1.0), (4e-11, 0.0)]).unwrap();
        let opts = TransientOptions {
            dt: 2e-13,
            window: 4e-10,
            record_nodes: true,
        };
        let r = simulate_pwl_with(&sys, &src, &opts).unwrap();
        let energy: Vec<f64> = r
            .nodes
            .unwrap()
            .iter()
            .map(|x| 0.5 * sparse::bilinear(&sys.c, x, x))
            .collect();
        let start = (4e-11 / 2e-13) as usize + 1;
        for w in energy[start..].windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-30);
        }
        assert!(energy[start] > 0.0);
    }

    #[test]
    fn thevenin_step_into_capacitor() {
        let sys = assemble_mna(&parse_netlist("C1 n1 0 10f", "n1").unwrap()).unwrap();
        let model = DriverModel::TheveninRamp { r_drv: 1000.0 };
        let input = crate::driverlib::Direction::Rising.input_waveform(1.0, 0.0);
        let r = simulate_driver(&sys, &model, 1.0, &input, 1e-13, 1e-10).unwrap();
        let tau = 1e-11;
        for (k, t) in r.time.iter().enumerate().skip(1) {
            let want = 1.0 - (-t / tau).exp();
            assert!((r.v_port[k] - want).abs() < 1e-3 * 1.0, "t={t:e}");
        }
        assert!((r.charge() - 1e-14).abs() < 1e-3 * 1e-14);
        assert!(r.stats.max_residual <= 1e-12);
    }

    #[test]
    fn driver_charge_is_conserved_on_ladder() {
        let sys = ladder(50);
        let model = DriverModel::MosLike {
            i_sat: 1e-3,
            v_knee: 0.4,
            v_th: 0.3,
            c_couple: 1e-15,
            c_int: 1e-15,
        };
        let input = PwlWaveform::new(vec![(0.0, 1.1), (2e-11, 0.0)]).unwrap();
        let r = simulate_driver(&sys, &model, 1.1, &input, 2e-13, 2e-9).unwrap();
        let q = r.charge();
        let want = sys.total_capacitance * 1.1;
        assert!((q - want).abs() < 1e-2 * want, "q={q:e} want={want:e}");
        // coupling pulls the output below ground first
        let vmin = r.v_port.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(vmin < 0.0);
    }

    #[test]
    fn falling_driver_starts_at_vdd() {
        let sys = ladder(5);
        let model = DriverModel::TheveninRamp { r_drv: 500.0 };
        let input = PwlWaveform::new(vec![(0.0, 0.0), (1e-11, 1.0)]).unwrap();
        let r = simulate_driver(&sys, &model, 1.0, &input, 1e-13, 1e-9).unwrap();
        assert_eq!(r.v_port[0], 1.0);
        assert!(r.v_port.last().unwrap().abs() < 1e-3);
        assert!((r.charge() + sys.total_capacitance).abs() < 1e-2 * sys.total_capacitance);
    }

    #[test]
    fn rejects_bad_steps() {
        let sys = series_rc();
        let src = PwlWaveform::ramp(1e-11, 1.0);
        assert!(matches!(simulate_pwl(&sys, &src, 0.0, 1e-9), Err(OracleError::BadStep { .. })));
        assert!(matches!(
            simulate_pwl(&sys, &src, 1e-12, f64::NAN),
            Err(OracleError::BadStep { .. })
        ));
    }

    #[test]
    fn tau_min_flag_is_reported() {
        let sys = series_rc();
        assert!((tau_min_estimate(&sys) - 1e-11).abs() < 1e-24);
        let r = simulate_pwl(&sys, &PwlWaveform::ramp(1e-11, 1.0), 1e-13, 1e-11).unwrap();
        assert!(r.stats.resolves_tau_min);
        let r = simulate_pwl(&sys, &PwlWaveform::ramp(1e-11, 1.0), 5e-12, 1e-11).unwrap();
        assert!(!r.stats.resolves_tau_min);
    }
}

//! Piecewise-linear excitations and the RC current they draw through a
//! pole/residue admittance.
//!
//! A waveform holds its first value from `t = 0` (the network is at rest
//! before that) and its last value forever. With slope changes
//! `dk_i = k_i - k_{i-1}` at every breakpoint, each term of
//! `Y(s) = d + sum res/(1 - s/p)` contributes
//!
//! ```text
//! res * [ v(t) - v_1 e^{pt} + (k(t) - E(t)) / p ],   E(t) = sum_i dk_i e^{p(t - t_i)} u(t - t_i)
//! ```
//!
//! where `k(t)` is the slope in force at `t`. Expanding that sum per segment
//! gives the familiar ramp/step form; all three arrangements are implemented
//! and cross-checked.

use std::io::{self, Write};

use num_complex::Complex64;
use thiserror::Error;

use crate::mor::ReducedAdmittance;

/// Exponent below which `e^{x}` is flushed to zero.
const EXP_FLOOR: f64 = -700.0;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ResponseError {
    #[error("invalid waveform: {0}")]
    InvalidPwl(String),
    #[error("time step {dt:e} s does not resolve the fastest pole (need <= {required:e} s)")]
    StepTooCoarse { dt: f64, required: f64 },
    #[error("inverse Laplace contour did not converge at t = {0:e}")]
    Contour(f64),
}

#[inline]
fn cexp(z: Complex64) -> Complex64 {
    if z.re < EXP_FLOOR {
        Complex64::new(0.0, 0.0)
    } else {
        z.exp()
    }
}

/// Piecewise-linear voltage `(t, v)` with strictly increasing times.
#[derive(Debug, Clone, PartialEq)]
pub struct PwlWaveform {
    points: Vec<(f64, f64)>,
}

impl PwlWaveform {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, ResponseError> {
        if points.is_empty() {
            return Err(ResponseError::InvalidPwl("no points".into()));
        }
        if points.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(ResponseError::InvalidPwl("non-finite point".into()));
        }
        if points[0].0 < 0.0 {
            return Err(ResponseError::InvalidPwl("first point before t = 0".into()));
        }
        if let Some(w) = points.windows(2).find(|w| !(w[1].0 > w[0].0)) {
            return Err(ResponseError::InvalidPwl(format!(
                "times not strictly increasing at t = {:e}",
                w[1].0
            )));
        }
        Ok(Self { points })
    }

    /// A single ramp from `(0, 0)` to `(t_end, v_end)`.
    pub fn ramp(t_end: f64, v_end: f64) -> Self {
        Self::new(vec![(0.0, 0.0), (t_end, v_end)]).expect("valid ramp")
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> (f64, f64) {
        self.points[0]
    }

    pub fn last(&self) -> (f64, f64) {
        self.points[self.points.len() - 1]
    }

    pub fn eval(&self, t: f64) -> f64 {
        let p = &self.points;
        if t <= p[0].0 {
            return p[0].1;
        }
        let n = p.len();
        if t >= p[n - 1].0 {
            return p[n - 1].1;
        }
        let k = p.partition_point(|&(ti, _)| ti <= t);
        let (t0, v0) = p[k - 1];
        let (t1, v1) = p[k];
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    /// Segment slopes `k_i`, one per segment.
    pub fn slopes(&self) -> Vec<f64> {
        self.points
            .windows(2)
            .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
            .collect()
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            points: self.points.iter().map(|&(t, v)| (t, a * v)).collect(),
        }
    }

    pub fn shifted(&self, dt: f64) -> Result<Self, ResponseError> {
        Self::new(self.points.iter().map(|&(t, v)| (t + dt, v)).collect())
    }

    pub fn push(&mut self, t: f64, v: f64) -> Result<(), ResponseError> {
        let (tl, _) = self.last();
        if !(t > tl) || !v.is_finite() {
            return Err(ResponseError::InvalidPwl(format!(
                "appended point t = {t:e} not after {tl:e}"
            )));
        }
        self.points.push((t, v));
        Ok(())
    }

    /// `(t_i, dk_i)` slope changes, including the final return to zero slope.
    fn kinks(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.points.len());
        let mut prev = 0.0;
        for (i, s) in self.slopes().into_iter().enumerate() {
            out.push((self.points[i].0, s - prev));
            prev = s;
        }
        out.push((self.last().0, -prev));
        out
    }
}

/// Per-segment coefficients of the Laplace transform of a PWL waveform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentTerm {
    pub k: f64,
    pub t_start: f64,
    pub v_start: f64,
    pub t_end: f64,
    pub v_end: f64,
}

/// Frequency-domain description of a PWL waveform.
///
/// `segments` alone give the transform of the waveform restricted to
/// `[t_1, t_N]`; the two hold terms extend it to the held waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct PwlLaplace {
    pub segments: Vec<SegmentTerm>,
    pub first: (f64, f64),
    pub last: (f64, f64),
}

impl PwlLaplace {
    /// `sum (k/s^2 + v_i/s) e^{-s t_i} - (k/s^2 + v_{i+1}/s) e^{-s t_{i+1}}`.
    pub fn eval_windowed(&self, s: Complex64) -> Complex64 {
        let s2 = s * s;
        self.segments
            .iter()
            .map(|g| {
                (g.k / s2 + g.v_start / s) * (-s * g.t_start).exp()
                    - (g.k / s2 + g.v_end / s) * (-s * g.t_end).exp()
            })
            .sum()
    }

    /// Same transform with the interior step terms telescoped away.
    pub fn eval_windowed_telescoped(&self, s: Complex64) -> Complex64 {
        let s2 = s * s;
        let ramps: Complex64 = self
            .segments
            .iter()
            .map(|g| g.k / s2 * ((-s * g.t_start).exp() - (-s * g.t_end).exp()))
            .sum();
        ramps + self.first.1 / s * (-s * self.first.0).exp()
            - self.last.1 / s * (-s * self.last.0).exp()
    }

    /// Transform of the held waveform (first value from t = 0, last value forever).
    pub fn eval(&self, s: Complex64) -> Complex64 {
        let (t1, v1) = self.first;
        let (tn, vn) = self.last;
        self.eval_windowed(s) + v1 / s * (1.0 - (-s * t1).exp()) + vn / s * (-s * tn).exp()
    }
}

pub fn laplace_of_pwl(w: &PwlWaveform) -> PwlLaplace {
    let segments = w
        .points
        .windows(2)
        .map(|p| SegmentTerm {
            k: (p[1].1 - p[0].1) / (p[1].0 - p[0].0),
            t_start: p[0].0,
            v_start: p[0].1,
            t_end: p[1].0,
            v_end: p[1].1,
        })
        .collect();
    PwlLaplace {
        segments,
        first: w.first(),
        last: w.last(),
    }
}

/// Ramp term `(p tau - e^{p tau} + 1)` and step term `(1 - e^{p tau})`, zero for tau < 0.
fn ramp_step(p: Complex64, tau: f64) -> (Complex64, Complex64) {
    if tau < 0.0 {
        return (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
    }
    let e = cexp(p * tau);
    (p * tau - e + 1.0, 1.0 - e)
}

/// RC current via the per-segment ramp/step expansion (every step term kept).
pub fn eval_current_segments(ya: &ReducedAdmittance, w: &PwlWaveform, t: f64) -> f64 {
    if t < 0.0 {
        return 0.0;
    }
    let (t1, v1) = w.first();
    let (tn, vn) = w.last();
    let mut total = Complex64::new(ya.direct * w.eval(t), 0.0);
    for term in &ya.terms {
        let (p, res) = (term.pole, term.residue);
        let mut acc = Complex64::new(0.0, 0.0);
        for seg in w.points.windows(2) {
            let (ta, va) = seg[0];
            let (tb, vb) = seg[1];
            let k = (vb - va) / (tb - ta);
            let (ra, sa) = ramp_step(p, t - ta);
            let (rb, sb) = ramp_step(p, t - tb);
            acc += k / p * (ra - rb);
            acc += va * sa - vb * sb;
        }
        // holds: v_1 on [0, t_1), v_N after t_N
        acc += v1 * (ramp_step(p, t).1 - ramp_step(p, t - t1).1);
        acc += vn * ramp_step(p, t - tn).1;
        total += res * acc;
    }
    total.re
}

/// RC current with interior step terms telescoped: only `v_1` and `v_N`
/// step terms remain.
pub fn eval_current_collapsed(ya: &ReducedAdmittance, w: &PwlWaveform, t: f64) -> f64 {
    if t < 0.0 {
        return 0.0;
    }
    let (t1, v1) = w.first();
    let (tn, vn) = w.last();
    let slopes = w.slopes();
    let mut total = Complex64::new(ya.direct * w.eval(t), 0.0);
    for term in &ya.terms {
        let (p, res) = (term.pole, term.residue);
        let mut acc = Complex64::new(0.0, 0.0);
        for (seg, &k) in w.points.windows(2).zip(&slopes) {
            acc += k / p * (ramp_step(p, t - seg[0].0).0 - ramp_step(p, t - seg[1].0).0);
        }
        acc += v1 * ramp_step(p, t - t1).1 - vn * ramp_step(p, t - tn).1;
        acc += v1 * (ramp_step(p, t).1 - ramp_step(p, t - t1).1);
        acc += vn * ramp_step(p, t - tn).1;
        total += res * acc;
    }
    total.re
}

/// RC current drawn by the network when its port follows `w`.
pub fn eval_current(ya: &ReducedAdmittance, w: &PwlWaveform, t: f64) -> f64 {
    ClosedFormResponse::new(ya.clone(), w.clone()).eval(t)
}

/// Per-term running state at the last committed breakpoint.
#[derive(Debug, Clone)]
struct TermState {
    pole: Complex64,
    residue: Complex64,
    /// `sum dk_i e^{p(t_last - t_i)}` over kinks strictly before `t_last`.
    e: Complex64,
}

/// Incrementally built closed-form response: appending a breakpoint or
/// evaluating at/after the last one costs O(q).
#[derive(Debug, Clone)]
pub struct ClosedFormResponse {
    ya: ReducedAdmittance,
    y0: f64,
    wave: PwlWaveform,
    state: Vec<TermState>,
    /// slope of the last segment (0 with a single point)
    slope: f64,
    /// `int_0^{t_last} v dt`
    v_integral: f64,
}

impl ClosedFormResponse {
    pub fn new(ya: ReducedAdmittance, wave: PwlWaveform) -> Self {
        let (t1, v1) = wave.first();
        let mut me = Self::start(ya, t1, v1);
        for &(t, v) in &wave.points[1..] {
            me.push(t, v).expect("waveform already validated");
        }
        me
    }

    /// Response to a waveform that so far consists of the single point `(t, v)`.
    pub fn start(ya: ReducedAdmittance, t: f64, v: f64) -> Self {
        let state = ya
            .terms
            .iter()
            .map(|tm| TermState {
                pole: tm.pole,
                residue: tm.residue,
                e: Complex64::new(0.0, 0.0),
            })
            .collect();
        Self {
            y0: ya.dc(),
            ya,
            wave: PwlWaveform::new(vec![(t, v)]).expect("valid start point"),
            state,
            slope: 0.0,
            v_integral: v * t,
        }
    }

    pub fn admittance(&self) -> &ReducedAdmittance {
        &self.ya
    }

    pub fn waveform(&self) -> &PwlWaveform {
        &self.wave
    }

    pub fn into_waveform(self) -> PwlWaveform {
        self.wave
    }

    pub fn push(&mut self, t: f64, v: f64) -> Result<(), ResponseError> {
        let (tl, vl) = self.wave.last();
        self.wave.push(t, v)?;
        let k = (v - vl) / (t - tl);
        let dk = k - self.slope;
        for st in &mut self.state {
            st.e = (st.e + dk) * cexp(st.pole * (t - tl));
        }
        self.slope = k;
        self.v_integral += 0.5 * (v + vl) * (t - tl);
        Ok(())
    }

    /// `(v, k, E_j)` at `t >= t_last` if the waveform were extended by a
    /// segment to `(t_next, v_next)` (or held, when `next` is `None`).
    fn extend(&self, next: Option<(f64, f64)>, t: f64) -> (f64, f64, Vec<Complex64>) {
        let (tl, vl) = self.wave.last();
        let (k, v) = match next {
            Some((tn, vn)) => {
                let k = (vn - vl) / (tn - tl);
                (k, vl + k * (t - tl))
            }
            None => (0.0, vl),
        };
        let dk = k - self.slope;
        let e = self
            .state
            .iter()
            .map(|st| (st.e + dk) * cexp(st.pole * (t - tl)))
            .collect();
        (v, k, e)
    }

    fn assemble(&self, t: f64, v: f64, k: f64, e: &[Complex64]) -> f64 {
        let v1 = self.wave.first().1;
        let mut acc = Complex64::new(self.y0 * v, 0.0);
        for (st, ej) in self.state.iter().zip(e) {
            let p = st.pole;
            acc += st.residue * (-v1 * cexp(p * t) + (k - ej) / p);
        }
        acc.re
    }

    /// Current at `t`. O(q) when `t` is at or after the last breakpoint.
    pub fn eval(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        let tl = self.wave.last().0;
        if t >= tl {
            let (v, k, e) = self.extend(None, t);
            return self.assemble(t, v, k, &e);
        }
        self.eval_from_scratch(t)
    }

    fn eval_from_scratch(&self, t: f64) -> f64 {
        let v = self.wave.eval(t);
        let kinks = self.wave.kinks();
        let mut k = 0.0;
        for &(ti, dk) in &kinks {
            if ti <= t {
                k += dk;
            }
        }
        let e: Vec<Complex64> = self
            .state
            .iter()
            .map(|st| {
                kinks
                    .iter()
                    .filter(|(ti, _)| *ti <= t)
                    .map(|&(ti, dk)| dk * cexp(st.pole * (t - ti)))
                    .sum()
            })
            .collect();
        self.assemble(t, v, k, &e)
    }

    /// Currents at ascending `times` in one sweep over the breakpoints.
    pub fn eval_sorted(&self, times: &[f64]) -> Vec<f64> {
        let kinks = self.wave.kinks();
        let zero = Complex64::new(0.0, 0.0);
        let mut e = vec![zero; self.state.len()];
        let (mut t_e, mut k, mut idx) = (0.0, 0.0, 0);
        let mut out = Vec::with_capacity(times.len());
        let mut prev = f64::NEG_INFINITY;
        for &t in times {
            assert!(t >= prev, "times must be ascending");
            prev = t;
            if t < 0.0 {
                out.push(0.0);
                continue;
            }
            while idx < kinks.len() && kinks[idx].0 <= t {
                let (ti, dk) = kinks[idx];
                for (ej, st) in e.iter_mut().zip(&self.state) {
                    *ej = *ej * cexp(st.pole * (ti - t_e)) + dk;
                }
                t_e = ti;
                k += dk;
                idx += 1;
            }
            let et: Vec<Complex64> = e
                .iter()
                .zip(&self.state)
                .map(|(ej, st)| ej * cexp(st.pole * (t - t_e)))
                .collect();
            out.push(self.assemble(t, self.wave.eval(t), k, &et));
        }
        out
    }

    /// Current at `t_next` if the waveform were extended to `(t_next, v_next)`.
    pub fn eval_candidate(&self, t_next: f64, v_next: f64) -> f64 {
        let (v, k, e) = self.extend(Some((t_next, v_next)), t_next);
        self.assemble(t_next, v, k, &e)
    }

    /// Charge `int_0^t i dt` for `t` at or after the last breakpoint.
    pub fn charge(&self, t: f64) -> f64 {
        let (v, k, e) = self.extend(None, t);
        let tl = self.wave.last();
        let vint = self.v_integral + tl.1 * (t - tl.0);
        self.charge_from(t, v, k, &e, vint)
    }

    /// Charge delivered up to `t_next` along a candidate segment.
    pub fn charge_candidate(&self, t_next: f64, v_next: f64) -> f64 {
        let (v, k, e) = self.extend(Some((t_next, v_next)), t_next);
        let (tl, vl) = self.wave.last();
        let vint = self.v_integral + 0.5 * (vl + v_next) * (t_next - tl);
        self.charge_from(t_next, v, k, &e, vint)
    }

    fn charge_from(&self, t: f64, v: f64, k: f64, e: &[Complex64], vint: f64) -> f64 {
        let v1 = self.wave.first().1;
        let mut acc = Complex64::new(self.y0 * vint, 0.0);
        for (st, ej) in self.state.iter().zip(e) {
            let p = st.pole;
            let step = -v1 * (cexp(p * t) - 1.0) / p;
            acc += st.residue * (step + (v - v1) / p - (ej - k) / (p * p));
        }
        acc.re
    }
}

/// Reference current by time-stepped convolution with the impulse response
/// `y(t) = d delta(t) - sum res_j p_j e^{p_j t}` (trapezoidal quadrature).
pub fn convolution_reference(
    ya: &ReducedAdmittance,
    w: &PwlWaveform,
    t_grid: &[f64],
    dt: f64,
) -> Result<Vec<f64>, ResponseError> {
    let fastest = ya.fastest_pole_magnitude();
    if fastest > 0.0 && dt > 0.1 / fastest {
        return Err(ResponseError::StepTooCoarse {
            dt,
            required: 0.1 / fastest,
        });
    }
    let mut order: Vec<usize> = (0..t_grid.len()).collect();
    order.sort_by(|&a, &b| t_grid[a].total_cmp(&t_grid[b]));
    let decay: Vec<Complex64> = ya.terms.iter().map(|tm| cexp(tm.pole * dt)).collect();
    let mut z = vec![Complex64::new(0.0, 0.0); ya.terms.len()];
    let mut out = vec![0.0; t_grid.len()];
    let mut t = 0.0;
    let mut v_now = w.eval(0.0);
    let current = |z: &[Complex64], v: f64| -> f64 {
        let mut acc = Complex64::new(ya.direct * v, 0.0);
        for (tm, zj) in ya.terms.iter().zip(z) {
            acc -= tm.residue * tm.pole * zj;
        }
        acc.re
    };
    for idx in order {
        let target = t_grid[idx];
        if target < 0.0 {
            out[idx] = 0.0;
            continue;
        }
        while t + dt <= target {
            let v_next = w.eval(t + dt);
            for (zj, dj) in z.iter_mut().zip(&decay) {
                *zj = *zj * dj + 0.5 * dt * (dj * v_now + v_next);
            }
            t += dt;
            v_now = v_next;
        }
        // partial step to the exact target, state left untouched
        let h = target - t;
        let v_t = w.eval(target);
        let zt: Vec<Complex64> = ya
            .terms
            .iter()
            .zip(&z)
            .map(|(tm, zj)| {
                let d = cexp(tm.pole * h);
                zj * d + 0.5 * h * (d * v_now + v_t)
            })
            .collect();
        out[idx] = current(&zt, v_t);
    }
    Ok(out)
}

/// Reference current by numerical inverse Laplace transform of `V(s) Y(s)`
/// on a fixed Talbot contour with `nodes` quadrature points.
///
/// Each slope change contributes `dk L^{-1}{Y/s^2}(t - t_i)` and the initial
/// value `v_1 L^{-1}{Y/s}(t)`, so the delays never enter the contour.
pub fn inverse_laplace_reference(
    ya: &ReducedAdmittance,
    w: &PwlWaveform,
    t: f64,
    nodes: usize,
) -> Result<f64, ResponseError> {
    if t <= 0.0 {
        return Ok(0.0);
    }
    let v1 = w.first().1;
    let mut total = 0.0;
    if v1 != 0.0 {
        total += v1 * talbot(|s| ya_eval(ya, s) / s, t, nodes);
    }
    for (ti, dk) in w.kinks() {
        let tau = t - ti;
        if tau > 0.0 && dk != 0.0 {
            total += dk * talbot(|s| ya_eval(ya, s) / (s * s), tau, nodes);
        }
    }
    if total.is_finite() {
        Ok(total)
    } else {
        Err(ResponseError::Contour(t))
    }
}

fn ya_eval(ya: &ReducedAdmittance, s: Complex64) -> Complex64 {
    let mut y = Complex64::new(ya.direct, 0.0);
    for tm in &ya.terms {
        y += tm.residue / (1.0 - s / tm.pole);
    }
    y
}

/// Fixed Talbot inversion (Abate and Valko).
fn talbot(f: impl Fn(Complex64) -> Complex64, t: f64, m: usize) -> f64 {
    let r = 2.0 * m as f64 / (5.0 * t);
    let mut acc = 0.5 * (f(Complex64::new(r, 0.0)) * (r * t).exp()).re;
    for k in 1..m {
        let theta = k as f64 * std::f64::consts::PI / m as f64;
        let cot = 1.0 / theta.tan();
        let s = Complex64::new(r * theta * cot, r * theta);
        let sigma = theta + (theta * cot - 1.0) * cot;
        acc += (cexp(s * t) * f(s) * Complex64::new(1.0, sigma)).re;
    }
    r / m as f64 * acc
}

/// Waveform CSV: header `t_s,v_V,i_A`, one row per sample.
pub fn write_waveform_csv<W: Write>(
    out: &mut W,
    rows: impl IntoIterator<Item = (f64, f64, f64)>,
) -> io::Result<()> {
    writeln!(out, "t_s,v_V,i_A")?;
    for (t, v, i) in rows {
        writeln!(out, "{t:e},{v:e},{i:e}")?;
    }
    Ok(())
}

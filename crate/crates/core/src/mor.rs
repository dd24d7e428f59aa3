//! Krylov reduction of the port admittance to pole/residue form.
//!
//! The port voltage is the input. With the port row eliminated, the
//! internal block `G_ii` is symmetric positive definite and
//!
//! ```text
//! Y(s) = G_pp - g^T (G_ii + s C_ii)^{-1} g,      g = G[internal, port]
//!      = G_pp - g^T (I - sA)^{-1} R,             A = -G_ii^{-1} C_ii, R = G_ii^{-1} g
//! ```
//!
//! The Arnoldi basis is built in the `G_ii` inner product, where `A` is
//! self-adjoint, so the projected `H_q` is symmetric and every reduced pole is
//! real and negative. The reduced model is
//!
//! ```text
//! Y_q(s) = d + sum_j res_j / (1 - s / pole_j)
//! ```
//!
//! where the direct term `d` equals `Y(inf)` (the conductance seen with every
//! capacitor shorted) plus any numerically infinite-frequency modes.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netlist::{MnaSystem, PortPartition};
use crate::sparse::{self, ComplexSymSolver, SpdFactor};

/// Default reduction order.
pub const DEFAULT_ORDER: usize = 4;

/// Krylov vectors whose G-norm collapses below this fraction of their
/// pre-orthogonalization norm end the basis.
pub const DEFLATION_TOL: f64 = 1e-12;

/// Ritz values below this fraction of the largest one are treated as
/// infinite-frequency poles and folded into the direct term.
pub const ZERO_MODE_TOL: f64 = 1e-14;

/// Imaginary parts below this fraction of the real part are zeroed.
pub const SYMMETRIZE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MorError {
    #[error("grounded conductance block is singular at pivot {0}")]
    Singular(usize),
    #[error("reduction order must be at least 1")]
    ZeroOrder,
    #[error("admittance evaluated at a pole ({0})")]
    AtPole(Complex64),
    #[error("pole {0} is not in the open left half-plane")]
    Unstable(Complex64),
    #[error("complex term {0} has no conjugate partner")]
    UnpairedComplex(usize),
    #[error("invalid admittance json: {0}")]
    Json(String),
}

impl From<sparse::FactorError> for MorError {
    fn from(e: sparse::FactorError) -> Self {
        let sparse::FactorError::Singular { index } = e;
        MorError::Singular(index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoleResidue {
    /// 1/s
    pub pole: Complex64,
    /// siemens
    pub residue: Complex64,
}

/// Driving-point admittance `d + sum res_j / (1 - s/pole_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedAdmittance {
    pub terms: Vec<PoleResidue>,
    /// Frequency-independent conductance, siemens.
    pub direct: f64,
    pub net_id: String,
    pub order_requested: usize,
    /// Set when the Krylov space deflated below the requested order.
    pub notice: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct TermJson {
    pole_re: f64,
    pole_im: f64,
    res_re: f64,
    res_im: f64,
}

#[derive(Serialize, Deserialize)]
struct AdmittanceJson {
    net_id: String,
    q: usize,
    #[serde(rename = "direct_S")]
    direct: f64,
    terms: Vec<TermJson>,
}

impl ReducedAdmittance {
    pub fn new(terms: Vec<PoleResidue>, direct: f64) -> Self {
        let q = terms.len();
        Self {
            terms,
            direct,
            net_id: String::new(),
            order_requested: q,
            notice: None,
        }
    }

    /// A single real pole/residue pair with no direct term.
    pub fn single(pole: f64, residue: f64) -> Self {
        Self::new(
            vec![PoleResidue {
                pole: Complex64::new(pole, 0.0),
                residue: Complex64::new(residue, 0.0),
            }],
            0.0,
        )
    }

    pub fn order(&self) -> usize {
        self.terms.len()
    }

    pub fn eval(&self, s: Complex64) -> Result<Complex64, MorError> {
        let mut y = Complex64::new(self.direct, 0.0);
        for t in &self.terms {
            let den = 1.0 - s / t.pole;
            if den.norm() < 1e-14 {
                return Err(MorError::AtPole(t.pole));
            }
            y += t.residue / den;
        }
        Ok(y)
    }

    /// Y(0).
    pub fn dc(&self) -> f64 {
        self.direct + self.terms.iter().map(|t| t.residue.re).sum::<f64>()
    }

    /// Taylor coefficients about s = 0: `m_0 = Y(0)`, `m_i = sum res_j pole_j^-i`.
    pub fn moments(&self, count: usize) -> Vec<f64> {
        (0..count)
            .map(|i| {
                if i == 0 {
                    self.dc()
                } else {
                    self.terms
                        .iter()
                        .map(|t| (t.residue * t.pole.powi(-(i as i32))).re)
                        .sum()
                }
            })
            .collect()
    }

    /// Pole closest to the origin.
    pub fn dominant_pole(&self) -> Option<Complex64> {
        self.terms
            .iter()
            .map(|t| t.pole)
            .min_by(|a, b| a.norm().total_cmp(&b.norm()))
    }

    pub fn fastest_pole_magnitude(&self) -> f64 {
        self.terms.iter().map(|t| t.pole.norm()).fold(0.0, f64::max)
    }

    /// Zero negligible imaginary parts and check conjugate pairing and
    /// stability.
    pub fn symmetrize(&mut self) -> Result<(), MorError> {
        for t in &mut self.terms {
            if t.pole.im.abs() < SYMMETRIZE_TOL * t.pole.re.abs() {
                t.pole.im = 0.0;
            }
            if t.residue.im.abs() < SYMMETRIZE_TOL * t.residue.re.abs().max(f64::MIN_POSITIVE) {
                t.residue.im = 0.0;
            }
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), MorError> {
        for (k, t) in self.terms.iter().enumerate() {
            if !(t.pole.re < 0.0) {
                return Err(MorError::Unstable(t.pole));
            }
            if t.pole.im != 0.0 {
                let paired = self.terms.iter().any(|u| {
                    (u.pole - t.pole.conj()).norm() <= 1e-9 * t.pole.norm()
                        && (u.residue - t.residue.conj()).norm()
                            <= 1e-9 * t.residue.norm().max(f64::MIN_POSITIVE)
                });
                if !paired {
                    return Err(MorError::UnpairedComplex(k));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let doc = AdmittanceJson {
            net_id: self.net_id.clone(),
            q: self.order(),
            direct: self.direct,
            terms: self
                .terms
                .iter()
                .map(|t| TermJson {
                    pole_re: t.pole.re,
                    pole_im: t.pole.im,
                    res_re: t.residue.re,
                    res_im: t.residue.im,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("admittance serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, MorError> {
        let doc: AdmittanceJson =
            serde_json::from_str(text).map_err(|e| MorError::Json(e.to_string()))?;
        let mut ya = Self::new(
            doc.terms
                .iter()
                .map(|t| PoleResidue {
                    pole: Complex64::new(t.pole_re, t.pole_im),
                    residue: Complex64::new(t.res_re, t.res_im),
                })
                .collect(),
            doc.direct,
        );
        ya.net_id = doc.net_id;
        ya.order_requested = doc.q;
        ya.symmetrize()?;
        Ok(ya)
    }
}

/// Krylov basis, orthonormal in the `G_ii` inner product, with the projected
/// operator in normalized time.
#[derive(Debug, Clone)]
pub struct ArnoldiBasis {
    /// Basis vectors (columns of X).
    pub vectors: Vec<Vec<f64>>,
    /// Upper Hessenberg coefficients from the orthogonalization, q x q.
    pub hessenberg: DMatrix<f64>,
    /// Time normalization, seconds.
    pub tau0: f64,
}

/// Build up to `q` basis vectors of Kr(A, R) with `A = -G_ii^{-1} C_ii / tau0`.
pub fn arnoldi(part: &PortPartition, factor: &SpdFactor, q: usize, tau0: f64) -> ArnoldiBasis {
    let g = &part.g_ii;
    let r = factor.solve(&part.g_ip);
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(q);
    let mut h = DMatrix::zeros(q, q);
    let norm_r = sparse::bilinear(g, &r, &r).max(0.0).sqrt();
    if norm_r == 0.0 || q == 0 {
        return ArnoldiBasis {
            vectors,
            hessenberg: DMatrix::zeros(0, 0),
            tau0,
        };
    }
    vectors.push(r.iter().map(|x| x / norm_r).collect());
    for k in 0..q {
        let cv = sparse::matvec(&part.c_ii, &vectors[k]);
        let mut w: Vec<f64> = factor.solve(&cv).iter().map(|x| -x / tau0).collect();
        let start_norm = sparse::bilinear(g, &w, &w).max(0.0).sqrt();
        // modified Gram-Schmidt plus one reorthogonalization pass
        for _ in 0..2 {
            for (j, v) in vectors.iter().enumerate() {
                let gv = sparse::matvec(g, v);
                let c: f64 = w.iter().zip(&gv).map(|(a, b)| a * b).sum();
                h[(j, k)] += c;
                for (wi, vi) in w.iter_mut().zip(v) {
                    *wi -= c * vi;
                }
            }
        }
        if k + 1 == q {
            break;
        }
        let norm = sparse::bilinear(g, &w, &w).max(0.0).sqrt();
        if !(norm > DEFLATION_TOL * start_norm) || norm == 0.0 {
            break;
        }
        h[(k + 1, k)] = norm;
        vectors.push(w.iter().map(|x| x / norm).collect());
    }
    let m = vectors.len();
    ArnoldiBasis {
        vectors,
        hessenberg: h.view((0, 0), (m, m)).into_owned(),
        tau0,
    }
}

fn time_scale(sys: &MnaSystem) -> f64 {
    let tau = sys.total_capacitance * sys.total_resistance;
    if tau.is_finite() && tau > 0.0 {
        tau
    } else {
        1.0
    }
}

/// Reduce the port admittance to order `q` (or lower when the Krylov space
/// deflates; see `notice`).
pub fn reduce(sys: &MnaSystem, q: usize) -> Result<ReducedAdmittance, MorError> {
    if q == 0 {
        return Err(MorError::ZeroOrder);
    }
    let part = sys.partition();
    let net_id = sys.node_names[sys.physical_port].clone();
    if part.rows.is_empty() {
        let mut ya = ReducedAdmittance::new(Vec::new(), part.g_pp);
        ya.net_id = net_id;
        ya.order_requested = q;
        return Ok(ya);
    }
    let factor = SpdFactor::new(&part.g_ii)?;
    let tau0 = time_scale(sys);
    let basis = arnoldi(&part, &factor, q, tau0);
    let m = basis.vectors.len();

    // H = X^T G A X = -X^T C X / tau0, assembled symmetrically
    let mut h = DMatrix::zeros(m, m);
    let cx: Vec<Vec<f64>> = basis
        .vectors
        .iter()
        .map(|v| sparse::matvec(&part.c_ii, v))
        .collect();
    for i in 0..m {
        for j in 0..=i {
            let v: f64 = basis.vectors[i].iter().zip(&cx[j]).map(|(a, b)| a * b).sum();
            h[(i, j)] = -v / tau0;
            h[(j, i)] = -v / tau0;
        }
    }
    let b_r: Vec<f64> = basis
        .vectors
        .iter()
        .map(|v| v.iter().zip(&part.g_ip).map(|(a, b)| a * b).sum())
        .collect();

    let mut direct = part.g_pp;
    let mut terms = Vec::with_capacity(m);
    if m > 0 {
        let eig = SymmetricEigen::new(h);
        let lam_max = eig.eigenvalues.iter().map(|l| l.abs()).fold(0.0, f64::max);
        for (k, &lam) in eig.eigenvalues.iter().enumerate() {
            let w = eig.eigenvectors.column(k);
            let proj: f64 = w.iter().zip(&b_r).map(|(a, b)| a * b).sum();
            let weight = proj * proj;
            if lam.abs() <= ZERO_MODE_TOL * lam_max || lam >= 0.0 {
                direct -= weight;
            } else {
                terms.push(PoleResidue {
                    pole: Complex64::new(1.0 / (lam * tau0), 0.0),
                    residue: Complex64::new(-weight, 0.0),
                });
            }
        }
    }
    terms.sort_by(|a, b| b.pole.re.total_cmp(&a.pole.re));
    let notice = (m < q).then(|| {
        format!("Krylov space deflated: requested order {q}, effective order {m}")
    });
    let ya = ReducedAdmittance {
        terms,
        direct,
        net_id,
        order_requested: q,
        notice,
    };
    ya.validate()?;
    Ok(ya)
}

/// Explicit moments of the full model, `m_0 = Y(0)` and `m_i = -g^T A^i R`.
/// Only meant as a reference for small `count`.
pub fn full_moments(sys: &MnaSystem, count: usize) -> Result<Vec<f64>, MorError> {
    let part = sys.partition();
    if part.rows.is_empty() {
        let mut m = vec![0.0; count];
        if count > 0 {
            m[0] = part.g_pp;
        }
        return Ok(m);
    }
    let factor = SpdFactor::new(&part.g_ii)?;
    let g = &part.g_ip;
    let mut r = factor.solve(g);
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        if i == 0 {
            out.push(part.g_pp - dot(g, &r));
        } else {
            let cr = sparse::matvec(&part.c_ii, &r);
            r = factor.solve(&cr).iter().map(|x| -x).collect();
            out.push(-dot(g, &r));
        }
    }
    Ok(out)
}

/// Exact port admittance at `s = j*omega` by a direct sparse solve.
pub fn full_admittance(sys: &MnaSystem, omega: f64) -> Result<Complex64, MorError> {
    let part = sys.partition();
    if part.rows.is_empty() {
        return Ok(Complex64::new(part.g_pp, 0.0));
    }
    let solver = ComplexSymSolver::new(&part.g_ii, &part.c_ii, omega)?;
    let rhs: Vec<Complex64> = part.g_ip.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let x = solver.solve(&rhs);
    let gx: Complex64 = part.g_ip.iter().zip(&x).map(|(a, b)| b * *a).sum();
    Ok(Complex64::new(part.g_pp, 0.0) - gx)
}

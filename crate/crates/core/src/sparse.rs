//! Thin wrappers over `sprs`/`sprs-ldl` for the symmetric systems that show
//! up everywhere in this crate: grounded conductance blocks, `G + 2C/dt`
//! transient matrices and the complex `G + jwC` frequency sweep.

use num_complex::Complex64;
use sprs::{CsMat, SymmetryCheck, TriMat};
use sprs_ldl::{Ldl, LdlNumeric};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum FactorError {
    #[error("matrix is singular or indefinite at pivot {index}")]
    Singular { index: usize },
}

/// Assemble a CSC matrix from (row, col, value) triplets; duplicates sum.
pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> CsMat<f64> {
    let mut tri = TriMat::with_capacity((n, n), triplets.len());
    for &(i, j, v) in triplets {
        tri.add_triplet(i, j, v);
    }
    tri.to_csc()
}

pub fn matvec(mat: &CsMat<f64>, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; mat.rows()];
    for (v, (i, j)) in mat.iter() {
        y[i] += v * x[j];
    }
    y
}

/// Quadratic form `x^T M y`.
pub fn bilinear(mat: &CsMat<f64>, x: &[f64], y: &[f64]) -> f64 {
    mat.iter().map(|(v, (i, j))| x[i] * v * y[j]).sum()
}

/// `a*A + b*B` for two matrices with the same shape.
pub fn linear_combination(a: f64, ma: &CsMat<f64>, b: f64, mb: &CsMat<f64>) -> CsMat<f64> {
    let n = ma.rows();
    let mut trips = Vec::with_capacity(ma.nnz() + mb.nnz());
    trips.extend(ma.iter().map(|(v, (i, j))| (i, j, a * v)));
    trips.extend(mb.iter().map(|(v, (i, j))| (i, j, b * v)));
    from_triplets(n, &trips)
}

/// Symmetric part `(A + A^T)/2`, exactly symmetric in floating point.
fn symmetric_part(mat: &CsMat<f64>) -> CsMat<f64> {
    let mut trips = Vec::with_capacity(2 * mat.nnz());
    for (v, (i, j)) in mat.iter() {
        trips.push((i, j, 0.5 * v));
        trips.push((j, i, 0.5 * v));
    }
    from_triplets(mat.rows(), &trips)
}

/// `sprs-ldl` needs at least two unknowns, so tiny systems are kept dense.
#[derive(Debug, Clone)]
enum Inner {
    Empty,
    Scalar(f64),
    Sparse(LdlNumeric<f64, usize>),
}

impl Inner {
    fn factor(mat: &CsMat<f64>) -> Result<Self, FactorError> {
        match mat.rows() {
            0 => Ok(Inner::Empty),
            1 => {
                let d = mat.get(0, 0).copied().unwrap_or(0.0);
                if d == 0.0 || !d.is_finite() {
                    Err(FactorError::Singular { index: 0 })
                } else {
                    Ok(Inner::Scalar(d))
                }
            }
            _ => {
                let sym = symmetric_part(mat);
                Ldl::new()
                    .check_symmetry(SymmetryCheck::DontCheckSymmetry)
                    .numeric(sym.view())
                    .map(Inner::Sparse)
                    .map_err(|e| match e {
                        sprs::errors::LinalgError::SingularMatrix(info) => {
                            FactorError::Singular { index: info.index }
                        }
                        _ => FactorError::Singular { index: 0 },
                    })
            }
        }
    }

    fn pivots(&self) -> Vec<f64> {
        match self {
            Inner::Empty => vec![],
            Inner::Scalar(d) => vec![*d],
            Inner::Sparse(l) => l.d().to_vec(),
        }
    }

    fn solve(&self, rhs: Vec<f64>) -> Vec<f64> {
        match self {
            Inner::Empty => rhs,
            Inner::Scalar(d) => vec![rhs[0] / d],
            Inner::Sparse(l) => l.solve(rhs),
        }
    }
}

/// LDL^T factorization of a symmetric positive definite sparse matrix.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    inner: Inner,
    n: usize,
}

impl SpdFactor {
    pub fn new(mat: &CsMat<f64>) -> Result<Self, FactorError> {
        let n = mat.rows();
        let inner = Inner::factor(mat)?;
        // sprs-ldl only rejects exact zeros; a positive definite matrix also
        // needs every pivot clearly positive.
        let scale = mat
            .diag_iter()
            .map(|d| d.copied().unwrap_or(0.0).abs())
            .fold(0.0, f64::max);
        if let Some(index) = inner
            .pivots()
            .iter()
            .position(|&d| !(d > 1e-13 * scale) || !d.is_finite())
        {
            return Err(FactorError::Singular { index });
        }
        Ok(Self { inner, n })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        self.inner.solve(rhs.to_vec())
    }
}

/// Solver for the complex symmetric system `(G + jw C) x = b`.
///
/// Uses the real quasi-definite embedding `[[G, -wC], [-wC, -G]]`, which
/// admits an LDL^T factorization under any symmetric ordering when G is
/// positive definite.
#[derive(Debug, Clone)]
pub struct ComplexSymSolver {
    inner: Inner,
    n: usize,
}

impl ComplexSymSolver {
    pub fn new(g: &CsMat<f64>, c: &CsMat<f64>, omega: f64) -> Result<Self, FactorError> {
        let n = g.rows();
        let mut trips = Vec::with_capacity(2 * (g.nnz() + c.nnz()));
        for (v, (i, j)) in g.iter() {
            trips.push((i, j, *v));
            trips.push((n + i, n + j, -v));
        }
        for (v, (i, j)) in c.iter() {
            trips.push((i, n + j, -omega * v));
            trips.push((n + i, j, -omega * v));
        }
        let k = from_triplets(2 * n, &trips);
        let inner = Inner::factor(&k)?;
        Ok(Self { inner, n })
    }

    pub fn solve(&self, rhs: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let mut b = vec![0.0; 2 * n];
        for (k, z) in rhs.iter().enumerate() {
            b[k] = z.re;
            b[n + k] = -z.im;
        }
        let x = self.inner.solve(b);
        (0..n).map(|k| Complex64::new(x[k], x[n + k])).collect()
    }
}

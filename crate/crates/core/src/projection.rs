//! Feature → label-space projection `P`, fitted once by regularized least squares.

use alloc::vec::Vec;

use crate::dataset::Example;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// How much ridge to add to `XᵀX` when fitting.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Ridge {
    /// `1e-6 · trace(XᵀX) / p`.
    #[default]
    Auto,
    Fixed(f64),
}

impl Ridge {
    pub fn resolve(self, gram: &Matrix) -> f64 {
        match self {
            Ridge::Auto => 1e-6 * gram.trace() / gram.rows().max(1) as f64,
            Ridge::Fixed(r) => r,
        }
    }
}

/// The p × q projection matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    matrix: Matrix,
    ridge: f64,
}

impl Projection {
    pub fn from_matrix(matrix: Matrix, ridge: f64) -> Result<Self> {
        if !matrix.is_finite() {
            return Err(Error::NonFinite("projection matrix"));
        }
        Ok(Self { matrix, ridge })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    /// Ridge actually used when fitting.
    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn p(&self) -> usize {
        self.matrix.rows()
    }

    pub fn q(&self) -> usize {
        self.matrix.cols()
    }

    /// `Pᵀx`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.matrix.tr_mul_vec(x)
    }
}

/// Solves `(XᵀX + ridge·I) P = XᵀY`.
///
/// When the regularized Gram matrix is not numerically positive definite
/// (only possible with `ridge = 0`), the minimum-norm solution
/// `pinv(XᵀX) XᵀY` is returned instead.
pub fn fit_projection(x: &Matrix, y: &Matrix, ridge: Ridge) -> Result<Projection> {
    if x.rows() == 0 {
        return Err(Error::Config(
            "cannot fit projection on zero examples".into(),
        ));
    }
    if x.rows() != y.rows() {
        return Err(Error::Shape {
            what: "projection design rows",
            expected: x.rows(),
            found: y.rows(),
        });
    }
    if !x.is_finite() || !y.is_finite() {
        return Err(Error::NonFinite("projection inputs"));
    }
    let mut gram = x.gram();
    let rhs = x.transpose().matmul(y)?;
    let ridge = ridge.resolve(&gram);
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::Config(alloc::format!(
            "ridge {ridge} must be finite and >= 0"
        )));
    }
    for i in 0..gram.rows() {
        gram[(i, i)] += ridge;
    }

    let p = match linalg::cholesky(&gram) {
        Some(l) => {
            let mut p = linalg::cholesky_solve(&l, &rhs);
            // one step of iterative refinement
            let resid = rhs.sub(&gram.matmul(&p)?)?;
            let corr = linalg::cholesky_solve(&l, &resid);
            for (pi, ci) in p.as_mut_slice().iter_mut().zip(corr.as_slice()) {
                *pi += ci;
            }
            p
        }
        None => linalg::sym_pinv_apply(&gram, &rhs),
    };
    Projection::from_matrix(p, ridge)
}

/// Stacks examples into `(X, Y)` design matrices.
pub fn design_matrices(examples: &[Example]) -> Result<(Matrix, Matrix)> {
    let p = examples.first().map_or(0, |e| e.features.len());
    let q = examples.first().map_or(0, |e| e.labels.len());
    let mut xs = Vec::with_capacity(examples.len() * p);
    let mut ys = Vec::with_capacity(examples.len() * q);
    for e in examples {
        if e.features.len() != p || e.labels.len() != q {
            return Err(Error::Shape {
                what: "design matrix row",
                expected: p + q,
                found: e.features.len() + e.labels.len(),
            });
        }
        xs.extend_from_slice(&e.features);
        ys.extend(e.labels.iter().map(|&l| f64::from(l)));
    }
    Ok((
        Matrix::from_vec(examples.len(), p, xs)?,
        Matrix::from_vec(examples.len(), q, ys)?,
    ))
}

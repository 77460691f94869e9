//! Matrix-free conjugate gradient and exact Kronecker-sum solves.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::tensor::mode_product_raw;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOutcome {
    pub iterations: usize,
    /// Final `||b - A x|| / ||b||` (recursive residual).
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` for symmetric positive definite `A` given only
/// `apply(v, out)` computing `out = A v`. `x` holds the initial guess on entry.
pub fn conjugate_gradient(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<CgOutcome> {
    let n = b.len();
    if x.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "CG initial guess has length {}, right-hand side {n}",
            x.len()
        )));
    }
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        x.fill(0.0);
        return Ok(CgOutcome {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut ap = vec![0.0; n];
    apply(x, &mut ap);
    let mut r: Vec<f64> = b.iter().zip(&ap).map(|(bi, ai)| bi - ai).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut rel = rr.sqrt() / b_norm;
    let mut it = 0;
    while rel > tol {
        if it == max_iter {
            return Err(Error::NotConverged {
                what: "conjugate gradient",
                iterations: it,
                residual: rel,
            });
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::NotPositiveDefinite(format!(
                "CG curvature p^T A p = {pap:e} at iteration {it}"
            )));
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
        rel = rr.sqrt() / b_norm;
        it += 1;
    }
    Ok(CgOutcome {
        iterations: it,
        relative_residual: rel,
    })
}

/// Eigendecomposition of a symmetric matrix with ascending eigenvalues.
pub fn sorted_eigen(m: DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let n = order.len();
    let q = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    let l = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    (q, l)
}

/// Joint eigenbasis of a Kronecker sum of symmetric factors.
///
/// With `A_k = Q_k diag(l_k) Q_k^T`, every matrix function of `(+)_k A_k` is
/// diagonal in the basis `(x) Q_k`, with eigenvalue `sum_k l_k[i_k]` at
/// multi-index `i`. Solves and powers therefore cost a handful of mode
/// products (fast diagonalization).
#[derive(Debug, Clone)]
pub struct KronSumEigen {
    dims: Vec<usize>,
    vectors: Vec<DMatrix<f64>>,
    vectors_t: Vec<DMatrix<f64>>,
    values: Vec<Vec<f64>>,
    spectrum: Vec<f64>,
}

impl KronSumEigen {
    pub fn new(factors: &[DMatrix<f64>]) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidParameter("at least one factor is required".into()));
        }
        let mut vectors = Vec::new();
        let mut values = Vec::new();
        for f in factors {
            if !f.is_square() || f.nrows() == 0 {
                return Err(Error::DimensionMismatch(format!(
                    "Kronecker-sum factor must be a non-empty square, got {}x{}",
                    f.nrows(),
                    f.ncols()
                )));
            }
            let sym = (f + f.transpose()) * 0.5;
            let (q, l) = sorted_eigen(sym);
            vectors.push(q);
            values.push(l);
        }
        let dims: Vec<usize> = factors.iter().map(|f| f.nrows()).collect();
        let spectrum = crate::tensor::w_from_diagonals(&values).into_values();
        let vectors_t = vectors.iter().map(|q| q.transpose()).collect();
        Ok(Self {
            dims,
            vectors,
            vectors_t,
            values,
            spectrum,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.spectrum.len()
    }

    /// Per-factor eigenvalues, ascending.
    pub fn factor_eigenvalues(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// Eigenvalues of the Kronecker sum in vec order of the eigenbasis.
    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.values.iter().map(|v| v[0]).sum()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.values.iter().map(|v| v[v.len() - 1]).sum()
    }

    fn transform(&self, x: &mut Vec<f64>, batch: usize, inverse: bool) {
        let mut ext = self.dims.clone();
        ext.push(batch);
        let mut tmp = vec![0.0; x.len()];
        for k in 0..self.dims.len() {
            let q = if inverse { &self.vectors[k] } else { &self.vectors_t[k] };
            mode_product_raw(&ext, x, q, k, 0.0, &mut tmp);
            std::mem::swap(x, &mut tmp);
        }
    }

    /// `out = f((+)_k A_k) x` for `batch` stacked vectors.
    pub fn apply_fn_batch(&self, x: &[f64], batch: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
        let d = self.dim();
        debug_assert_eq!(x.len(), d * batch);
        let mut y = x.to_vec();
        self.transform(&mut y, batch, false);
        let scale: Vec<f64> = self.spectrum.iter().map(|&s| f(s)).collect();
        for chunk in y.chunks_mut(d) {
            for (v, s) in chunk.iter_mut().zip(&scale) {
                *v *= s;
            }
        }
        self.transform(&mut y, batch, true);
        y
    }

    pub fn apply_fn(&self, x: &[f64], f: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "operator of dimension {} applied to a vector of length {}",
                self.dim(),
                x.len()
            )));
        }
        Ok(self.apply_fn_batch(x, 1, f))
    }

    /// Solves `((+)_k A_k)^p x = b`.
    pub fn solve_power(&self, b: &[f64], p: i32) -> Result<Vec<f64>> {
        let lo = self.min_eigenvalue();
        if p != 0 && lo <= 0.0 {
            return Err(Error::NotPositiveDefinite(format!(
                "Kronecker sum has minimum eigenvalue {lo:e}"
            )));
        }
        self.apply_fn(b, |s| s.powi(-p))
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.solve_power(b, 1)
    }
}

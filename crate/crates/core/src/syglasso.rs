//! Nodewise SyGlasso: cyclic coordinate descent on the off-diagonal factor
//! entries, alternating with a closed-form update of the diagonal tensor `W`.
//!
//! The objective is
//! `Q_N = -N sum_i log W_i + 1/2 sum_n ||W o X^n + sum_k X^n x_k Psi_k^off||^2
//!        + sum_k lambda_k sum_{a != b} |(Psi_k)_ab|`.
//! With `W` equal to the Kronecker sum of the factor diagonals this is the
//! SG-PALM objective with an L1 penalty.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gram::SampleSet;
use crate::penalty::soft_threshold;
use crate::sgpalm::{IterationRecord, SolveTrace};
use crate::tensor::{mode_layout, multi_index, w_from_diagonals, DenseTensor, SylvesterFactors};

/// Largest tolerated end-of-sweep gap between the incrementally maintained
/// residual and a fresh recomputation, relative to `max(1, max |R|)`.
pub const DRIFT_TOLERANCE: f64 = 1e-8;

/// How the diagonal tensor is estimated.
#[derive(Debug, Clone, PartialEq)]
pub enum WMode {
    /// Every entry free, each set to its closed-form minimizer.
    Free,
    /// `W` constrained to a Kronecker sum of per-mode diagonals; fitted by
    /// damped Newton on the diagonals.
    KroneckerSum,
    /// Held at the given tensor.
    Fixed(DenseTensor),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyGlassoConfig {
    pub max_iters: usize,
    pub rel_tol: f64,
    /// L1 weight per mode, in objective units.
    pub lambdas: Vec<f64>,
    pub w_mode: WMode,
}

impl SyGlassoConfig {
    pub fn new(lambdas: Vec<f64>) -> Self {
        Self {
            max_iters: 200,
            rel_tol: 1e-6,
            lambdas,
            w_mode: WMode::Free,
        }
    }

    pub fn validate(&self, data: &SampleSet) -> Result<()> {
        if self.lambdas.len() != data.order() {
            return Err(Error::InvalidParameter(format!(
                "{} penalties given for {} modes",
                self.lambdas.len(),
                data.order()
            )));
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(**l >= 0.0)) {
            return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {l}")));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidParameter("relative tolerance must be positive".into()));
        }
        if let WMode::Fixed(w) = &self.w_mode {
            check_w(w, data)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyGlassoFit {
    /// Off-diagonal estimates. Diagonals hold the fitted per-mode diagonals
    /// under [`WMode::KroneckerSum`] and are zero otherwise.
    pub factors: SylvesterFactors,
    pub w: DenseTensor,
    pub trace: SolveTrace,
}

fn check_w(w: &DenseTensor, data: &SampleSet) -> Result<()> {
    if w.dims() != data.dims() {
        return Err(Error::DimensionMismatch(format!(
            "W dims {:?} do not match data dims {:?}",
            w.dims(),
            data.dims()
        )));
    }
    if let Some(i) = w.values().iter().position(|v| !(*v > 0.0)) {
        return Err(Error::DomainViolation {
            index: multi_index(w.dims(), i),
            value: w.values()[i],
            iteration: None,
        });
    }
    Ok(())
}

fn check_factors(factors: &SylvesterFactors, data: &SampleSet) -> Result<()> {
    if factors.dims() != data.dims() {
        return Err(Error::DimensionMismatch(format!(
            "factor dims {:?} do not match data dims {:?}",
            factors.dims(),
            data.dims()
        )));
    }
    Ok(())
}

fn offdiag_parts(factors: &SylvesterFactors) -> Vec<DMatrix<f64>> {
    factors
        .to_dense()
        .into_iter()
        .map(|mut m| {
            m.fill_diagonal(0.0);
            m
        })
        .collect()
}

/// `sum_k X^n x_k Psi_k^off`, stacked over samples.
fn offdiag_response(data: &SampleSet, off: &[DMatrix<f64>]) -> Vec<f64> {
    let mut y = vec![0.0; data.values().len()];
    for (k, m) in off.iter().enumerate() {
        for (acc, v) in y.iter_mut().zip(data.mode_product_all(m, k)) {
            *acc += v;
        }
    }
    y
}

/// Residual `W o X^n + Y^n`, stacked over samples.
fn residual(data: &SampleSet, w: &[f64], off: &[DMatrix<f64>]) -> Vec<f64> {
    let mut r = offdiag_response(data, off);
    let d = data.dim();
    for (i, (ri, xi)) in r.iter_mut().zip(data.values()).enumerate() {
        *ri += w[i % d] * xi;
    }
    r
}

fn penalty_sum(off: &[DMatrix<f64>], lambdas: &[f64]) -> f64 {
    off.iter()
        .zip(lambdas)
        .map(|(m, l)| l * m.iter().map(|v| v.abs()).sum::<f64>())
        .sum()
}

fn q_value(data: &SampleSet, w: &[f64], r: &[f64], off: &[DMatrix<f64>], lambdas: &[f64]) -> f64 {
    let lw: f64 = w.iter().map(|v| v.ln()).sum();
    -(data.n() as f64) * lw + 0.5 * r.iter().map(|v| v * v).sum::<f64>() + penalty_sum(off, lambdas)
}

/// `Q_N` at the off-diagonals of `factors` and the tensor `w`.
pub fn objective(data: &SampleSet, factors: &SylvesterFactors, w: &DenseTensor, lambdas: &[f64]) -> Result<f64> {
    check_factors(factors, data)?;
    check_w(w, data)?;
    if lambdas.len() != data.order() {
        return Err(Error::InvalidParameter(format!(
            "{} penalties given for {} modes",
            lambdas.len(),
            data.order()
        )));
    }
    let off = offdiag_parts(factors);
    let r = residual(data, w.values(), &off);
    Ok(q_value(data, w.values(), &r, &off, lambdas))
}

/// Index bookkeeping for fibres of mode `k` in the stacked data.
#[derive(Clone, Copy)]
struct ModeSlices {
    left: usize,
    dk: usize,
    right: usize,
}

impl ModeSlices {
    fn new(data: &SampleSet, k: usize) -> Self {
        let (left, dk, right) = mode_layout(&data.stacked_dims(), k);
        Self { left, dk, right }
    }

    /// Calls `f(p, q)` for every pair of flat positions with mode-`k` index
    /// `a` and `b` respectively and all other indices shared.
    #[inline]
    fn for_pairs(&self, a: usize, b: usize, mut f: impl FnMut(usize, usize)) {
        for r in 0..self.right {
            let pa = self.left * (a + self.dk * r);
            let pb = self.left * (b + self.dk * r);
            for l in 0..self.left {
                f(pa + l, pb + l);
            }
        }
    }
}

/// Working state of the coordinate descent: off-diagonals, `W`, and the
/// residual `R = W o X + Y`.
struct Sweeper<'a> {
    data: &'a SampleSet,
    off: Vec<DMatrix<f64>>,
    w: Vec<f64>,
    r: Vec<f64>,
    /// `T_k = sum_n X^n_(k) X^n_(k)^T`.
    grams: Vec<DMatrix<f64>>,
}

impl<'a> Sweeper<'a> {
    fn new(data: &'a SampleSet, off: Vec<DMatrix<f64>>, w: Vec<f64>) -> Self {
        let grams = (0..data.order())
            .map(|k| {
                let g = data.cross_with(data.values(), k) * data.n() as f64;
                (&g + g.transpose()) * 0.5
            })
            .collect();
        let r = residual(data, &w, &off);
        Self { data, off, w, r, grams }
    }

    /// Minimizer of `Q_N` over the symmetric pair `(a, b)` of mode `k`.
    fn coordinate(&self, k: usize, a: usize, b: usize, lambda: f64) -> Result<f64> {
        let t = &self.grams[k];
        let curv = t[(a, a)] + t[(b, b)];
        if !(curv > 0.0) {
            return Err(Error::DegenerateData(format!(
                "mode-{k} fibres {a} and {b} are identically zero"
            )));
        }
        // The pair enters the residual as beta * D with D = X^b on slice a
        // and X^a on slice b, so <R, D> = <R_old, D> + beta_old * curv.
        let (x, r) = (self.data.values(), &self.r);
        let mut inner = 0.0;
        ModeSlices::new(self.data, k).for_pairs(a, b, |pa, pb| {
            inner += r[pa] * x[pb] + r[pb] * x[pa];
        });
        let rest = inner - self.off[k][(a, b)] * curv;
        // Both symmetric entries carry the penalty.
        Ok(-soft_threshold(rest, 2.0 * lambda) / curv)
    }

    fn set_pair(&mut self, k: usize, a: usize, b: usize, value: f64) {
        let delta = value - self.off[k][(a, b)];
        if delta == 0.0 {
            return;
        }
        self.off[k][(a, b)] = value;
        self.off[k][(b, a)] = value;
        let x = self.data.values();
        let r = &mut self.r;
        ModeSlices::new(self.data, k).for_pairs(a, b, |pa, pb| {
            r[pa] += delta * x[pb];
            r[pb] += delta * x[pa];
        });
    }

    fn sweep(&mut self, lambdas: &[f64]) -> Result<()> {
        for k in 0..self.off.len() {
            let dk = self.off[k].nrows();
            for a in 0..dk {
                for b in a + 1..dk {
                    let v = self.coordinate(k, a, b, lambdas[k])?;
                    self.set_pair(k, a, b, v);
                }
            }
        }
        Ok(())
    }

    /// Per-entry sums `a_i = sum_n X_in^2` and `b_i = sum_n X_in Y_in`.
    fn quadratic_coefficients(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.data.dim();
        let x = self.data.values();
        let mut a = vec![0.0; d];
        let mut b = vec![0.0; d];
        for (p, (xv, rv)) in x.iter().zip(&self.r).enumerate() {
            let i = p % d;
            let y = rv - self.w[i] * xv;
            a[i] += xv * xv;
            b[i] += xv * y;
        }
        (a, b)
    }

    fn set_w(&mut self, w: Vec<f64>) {
        let d = self.data.dim();
        let x = self.data.values();
        for (p, (rv, xv)) in self.r.iter_mut().zip(x).enumerate() {
            *rv += (w[p % d] - self.w[p % d]) * xv;
        }
        self.w = w;
    }

    fn drift(&self) -> f64 {
        let fresh = residual(self.data, &self.w, &self.off);
        let scale = fresh.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        fresh
            .iter()
            .zip(&self.r)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
            / scale
    }

    fn objective(&self, lambdas: &[f64]) -> f64 {
        q_value(self.data, &self.w, &self.r, &self.off, lambdas)
    }
}

fn free_w(data: &SampleSet, a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let n = data.n() as f64;
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(i, (&a, &b))| {
            if !(a > 0.0) {
                return Err(Error::DegenerateData(format!(
                    "every sample is zero at index {:?}",
                    multi_index(data.dims(), i)
                )));
            }
            let (a, b) = (a / n, b / n);
            Ok((-b + (b * b + 4.0 * a).sqrt()) / (2.0 * a))
        })
        .collect()
}

/// Closed-form `W` update: each entry is the positive root of
/// `a W^2 + b W - 1 = 0` with `a = mean X^2` and `b = mean X Y`.
pub fn diag_update(data: &SampleSet, factors: &SylvesterFactors) -> Result<DenseTensor> {
    check_factors(factors, data)?;
    let s = Sweeper::new(data, offdiag_parts(factors), vec![0.0; data.dim()]);
    let (a, b) = s.quadratic_coefficients();
    DenseTensor::new(data.dims().to_vec(), free_w(data, &a, &b)?)
}

/// Minimizes `sum_i (-N log W_i + a_i W_i^2 / 2 + b_i W_i)` over Kronecker-sum
/// `W`, starting from the diagonals `diags`.
fn kronecker_sum_w(data: &SampleSet, a: &[f64], b: &[f64], mut diags: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>> {
    let n = data.n() as f64;
    let dims = data.dims().to_vec();
    let offsets: Vec<usize> = dims
        .iter()
        .scan(0, |acc, &dk| {
            let o = *acc;
            *acc += dk;
            Some(o)
        })
        .collect();
    let p: usize = dims.iter().sum();
    let f = |w: &[f64]| -> f64 {
        w.iter()
            .zip(a.iter().zip(b))
            .map(|(&w, (&a, &b))| if w > 0.0 { -n * w.ln() + 0.5 * a * w * w + b * w } else { f64::INFINITY })
            .sum()
    };
    let mut w = w_from_diagonals(&diags).into_values();
    let mut fw = f(&w);
    for _ in 0..100 {
        let mut g = DVector::<f64>::zeros(p);
        let mut h = DMatrix::<f64>::zeros(p, p);
        let mut pos = vec![0usize; dims.len()];
        for i in 0..w.len() {
            let gi = -n / w[i] + a[i] * w[i] + b[i];
            let hi = n / (w[i] * w[i]) + a[i];
            for (k, &ik) in pos.iter().enumerate() {
                let u = offsets[k] + ik;
                g[u] += gi;
                for (l, &il) in pos.iter().enumerate() {
                    h[(u, offsets[l] + il)] += hi;
                }
            }
            crate::tensor::increment_index(&mut pos, &dims);
        }
        // The Hessian is singular along trace shifts between modes; the
        // pseudo-inverse picks the minimum-norm Newton step.
        let eps = 1e-12 * h.diagonal().amax();
        let step = h
            .svd(true, true)
            .solve(&g, eps)
            .map_err(|e| Error::InvalidParameter(format!("W Newton step: {e}")))?;
        let decrement = g.dot(&step);
        if decrement <= 1e-13 * fw.abs().max(1.0) {
            break;
        }
        let mut t = 1.0;
        loop {
            let cand: Vec<Vec<f64>> = diags
                .iter()
                .enumerate()
                .map(|(k, dv)| dv.iter().enumerate().map(|(i, v)| v - t * step[offsets[k] + i]).collect())
                .collect();
            let wc = w_from_diagonals(&cand).into_values();
            let fc = f(&wc);
            if fc <= fw - 0.25 * t * decrement {
                diags = cand;
                w = wc;
                fw = fc;
                break;
            }
            t *= 0.5;
            if t < 1e-12 {
                return Ok(diags);
            }
        }
    }
    Ok(diags)
}

/// The closed-form minimizer of `Q_N` over the `(a, b)` entry of mode `k`,
/// all else held fixed. Recomputes the residual from scratch.
pub fn offdiag_update(
    data: &SampleSet,
    factors: &SylvesterFactors,
    w: &DenseTensor,
    k: usize,
    a: usize,
    b: usize,
    lambda: f64,
) -> Result<f64> {
    check_factors(factors, data)?;
    check_w(w, data)?;
    if k >= data.order() {
        return Err(Error::ModeOutOfRange {
            mode: k,
            order: data.order(),
        });
    }
    if !(a < b && b < data.dims()[k]) {
        return Err(Error::InvalidParameter(format!(
            "need a < b < {}, got ({a}, {b})",
            data.dims()[k]
        )));
    }
    let s = Sweeper::new(data, offdiag_parts(factors), w.values().to_vec());
    s.coordinate(k, a, b, lambda)
}

/// Runs the alternating minimization from zero off-diagonals and `W = K`
/// (the identity factors), or from the fixed `W`.
pub fn fit(data: &SampleSet, config: &SyGlassoConfig) -> Result<SyGlassoFit> {
    config.validate(data)?;
    let kk = data.order();
    let dims = data.dims().to_vec();
    let off: Vec<DMatrix<f64>> = dims.iter().map(|&dk| DMatrix::zeros(dk, dk)).collect();
    let mut diags: Vec<Vec<f64>> = dims.iter().map(|&dk| vec![1.0; dk]).collect();
    let w0 = match &config.w_mode {
        WMode::Fixed(w) => w.values().to_vec(),
        _ => w_from_diagonals(&diags).into_values(),
    };
    let mut s = Sweeper::new(data, off, w0);
    let lambdas = &config.lambdas;

    let record = |iter: usize, s: &Sweeper<'_>| IterationRecord {
        iter,
        objective: s.objective(lambdas),
        etas: Vec::new(),
        trials: Vec::new(),
        nnz: s
            .off
            .iter()
            .map(|m| (0..m.ncols()).map(|j| (0..j).filter(|&i| m[(i, j)] != 0.0).count()).sum())
            .collect(),
    };
    let mut trace = SolveTrace::default();
    trace.records.push(record(0, &s));
    let mut obj = trace.records[0].objective;

    for iter in 1..=config.max_iters {
        s.sweep(lambdas)?;
        let drift = s.drift();
        if drift > DRIFT_TOLERANCE {
            return Err(Error::NumericalDrift {
                drift,
                tolerance: DRIFT_TOLERANCE,
            });
        }
        match &config.w_mode {
            WMode::Fixed(_) => {}
            WMode::Free => {
                let (a, b) = s.quadratic_coefficients();
                s.set_w(free_w(data, &a, &b)?);
            }
            WMode::KroneckerSum => {
                let (a, b) = s.quadratic_coefficients();
                if let Some(i) = a.iter().position(|v| !(*v > 0.0)) {
                    return Err(Error::DegenerateData(format!(
                        "every sample is zero at index {:?}",
                        multi_index(&dims, i)
                    )));
                }
                diags = kronecker_sum_w(data, &a, &b, diags)?;
                s.set_w(w_from_diagonals(&diags).into_values());
            }
        }
        let rec = record(iter, &s);
        let new_obj = rec.objective;
        trace.records.push(rec);
        let rel = (obj - new_obj).abs() / obj.abs().max(f64::MIN_POSITIVE);
        obj = new_obj;
        if rel < config.rel_tol {
            trace.converged = true;
            break;
        }
    }

    let mut mats = s.off.clone();
    if config.w_mode == WMode::KroneckerSum {
        for (m, dv) in mats.iter_mut().zip(&diags) {
            m.set_diagonal(&DVector::from_column_slice(dv));
        }
    }
    debug_assert_eq!(mats.len(), kk);
    Ok(SyGlassoFit {
        factors: SylvesterFactors::from_dense(&mats)?,
        w: DenseTensor::new(dims, s.w)?,
        trace,
    })
}

/// `lambda_k = N * c * sqrt(d_k ln(d) / N)`: the per-sample rate expressed in
/// the sample-summed objective.
pub fn scaled_lambdas(c: f64, data: &SampleSet) -> Vec<f64> {
    let n = data.n();
    data.dims()
        .iter()
        .map(|&dk| n as f64 * crate::penalty::scaled_lambda(c, dk, data.dim(), n))
        .collect()
}

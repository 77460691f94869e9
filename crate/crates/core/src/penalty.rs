//! Elementwise off-diagonal penalties: lasso, SCAD and MCP.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor::SymSparseMatrix;

pub const DEFAULT_SCAD_A: f64 = 3.7;
pub const DEFAULT_MCP_A: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyKind {
    L1,
    Scad,
    Mcp,
}

impl PenaltyKind {
    pub fn default_shape(self) -> f64 {
        match self {
            PenaltyKind::L1 => 0.0,
            PenaltyKind::Scad => DEFAULT_SCAD_A,
            PenaltyKind::Mcp => DEFAULT_MCP_A,
        }
    }
}

impl FromStr for PenaltyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" | "lasso" => Ok(PenaltyKind::L1),
            "scad" => Ok(PenaltyKind::Scad),
            "mcp" => Ok(PenaltyKind::Mcp),
            other => Err(Error::InvalidParameter(format!("unknown penalty `{other}`"))),
        }
    }
}

impl fmt::Display for PenaltyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PenaltyKind::L1 => "l1",
            PenaltyKind::Scad => "scad",
            PenaltyKind::Mcp => "mcp",
        })
    }
}

/// A penalty `weight * g_lambda` applied to every off-diagonal entry of one
/// factor.
///
/// `lambda` and `a` live in the units of the factor entries, so the SCAD and
/// MCP breakpoints `lambda` and `a lambda` are comparable to the estimates.
/// `weight` rescales the whole penalty, e.g. by `N` to match an objective
/// summed over samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    pub lambda: f64,
    /// Shape parameter; ignored for L1.
    pub a: f64,
    pub weight: f64,
}

impl PenaltySpec {
    pub fn new(kind: PenaltyKind, lambda: f64, a: f64) -> Result<Self> {
        let spec = Self { kind, lambda, a, weight: 1.0 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn l1(lambda: f64) -> Self {
        Self {
            kind: PenaltyKind::L1,
            lambda,
            a: 0.0,
            weight: 1.0,
        }
    }

    pub fn scad(lambda: f64) -> Self {
        Self {
            kind: PenaltyKind::Scad,
            lambda,
            a: DEFAULT_SCAD_A,
            weight: 1.0,
        }
    }

    pub fn mcp(lambda: f64) -> Self {
        Self {
            kind: PenaltyKind::Mcp,
            lambda,
            a: DEFAULT_MCP_A,
            weight: 1.0,
        }
    }

    pub fn with_weight(self, weight: f64) -> Self {
        Self { weight, ..self }
    }

    /// Soft-threshold level `weight * lambda` of the convex part.
    pub fn l1_level(&self) -> f64 {
        self.weight * self.lambda
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "penalty lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.weight > 0.0) || !self.weight.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "penalty weight must be finite and positive, got {}",
                self.weight
            )));
        }
        match self.kind {
            PenaltyKind::Scad if !(self.a > 2.0) => Err(Error::InvalidParameter(format!(
                "SCAD shape must exceed 2, got {}",
                self.a
            ))),
            PenaltyKind::Mcp if !(self.a > 0.0) => Err(Error::InvalidParameter(format!(
                "MCP shape must be positive, got {}",
                self.a
            ))),
            _ => Ok(()),
        }
    }

    /// `weight * g_lambda(t)`.
    pub fn value(&self, t: f64) -> f64 {
        self.weight * self.unweighted(t)
    }

    fn unweighted(&self, t: f64) -> f64 {
        let (l, a, x) = (self.lambda, self.a, t.abs());
        match self.kind {
            PenaltyKind::L1 => l * x,
            PenaltyKind::Scad => {
                if x <= l {
                    l * x
                } else if x <= a * l {
                    (2.0 * a * l * x - x * x - l * l) / (2.0 * (a - 1.0))
                } else {
                    (a + 1.0) * l * l / 2.0
                }
            }
            PenaltyKind::Mcp => {
                if x <= a * l {
                    l * x - x * x / (2.0 * a)
                } else {
                    a * l * l / 2.0
                }
            }
        }
    }

    /// `weight * q'(t)` with `q(t) = g_lambda(t) - lambda |t|` and `q'(0) = 0`.
    pub fn concave_derivative(&self, t: f64) -> f64 {
        let (l, a, x) = (self.lambda, self.a, t.abs());
        let s = t.signum();
        self.weight * match self.kind {
            PenaltyKind::L1 => 0.0,
            _ if t == 0.0 => 0.0,
            PenaltyKind::Scad => {
                if x <= l {
                    0.0
                } else if x <= a * l {
                    s * ((a * l - x) / (a - 1.0) - l)
                } else {
                    -s * l
                }
            }
            PenaltyKind::Mcp => {
                if x <= a * l {
                    -t / a
                } else {
                    -s * l
                }
            }
        }
    }

    /// Scalar prox `argmin_t (t - x)^2 / 2 + step * weight * g_lambda(t)`.
    ///
    /// Each branch of the piecewise penalty contributes its clipped
    /// stationary point; together with the branch boundaries these include
    /// the global minimizer. Ties go to the smaller magnitude.
    pub fn prox(&self, x: f64, step: f64) -> f64 {
        let step = step * self.weight;
        let u = x.abs();
        let (l, a) = (self.lambda, self.a);
        let t = match self.kind {
            PenaltyKind::L1 => (u - step * l).max(0.0),
            PenaltyKind::Scad => {
                let mut c = vec![0.0, l, a * l, (u - step * l).clamp(0.0, l), u.max(a * l)];
                let curv = 1.0 - step / (a - 1.0);
                if curv > 0.0 {
                    c.push(((u - step * a * l / (a - 1.0)) / curv).clamp(l, a * l));
                }
                self.pick(u, step, c)
            }
            PenaltyKind::Mcp => {
                let mut c = vec![0.0, a * l, u.max(a * l)];
                let curv = 1.0 - step / a;
                if curv > 0.0 {
                    c.push(((u - step * l) / curv).clamp(0.0, a * l));
                }
                self.pick(u, step, c)
            }
        };
        t.copysign(x)
    }

    fn pick(&self, u: f64, step: f64, mut candidates: Vec<f64>) -> f64 {
        candidates.sort_by(f64::total_cmp);
        let f = |t: f64| 0.5 * (t - u) * (t - u) + step * self.unweighted(t);
        let mut best = candidates[0];
        let mut best_f = f(best);
        for &c in &candidates[1..] {
            let fc = f(c);
            if fc < best_f {
                best = c;
                best_f = fc;
            }
        }
        best
    }
}

/// `sign(x) * max(|x| - tau, 0)`.
pub fn soft_threshold(x: f64, tau: f64) -> f64 {
    (x.abs() - tau).max(0.0).copysign(x) + 0.0
}

/// Applies the scalar prox with threshold scale `step` to every off-diagonal
/// entry; the diagonal passes through untouched.
pub fn prox_offdiag(p: &PenaltySpec, m: &SymSparseMatrix, step: f64) -> Result<SymSparseMatrix> {
    p.validate()?;
    if !(step >= 0.0) {
        return Err(Error::InvalidParameter(format!("prox step must be >= 0, got {step}")));
    }
    let mut out = SymSparseMatrix::zeros(m.dim());
    for (i, j, v) in m.iter_upper() {
        out.set(i, j, if i == j { v } else { p.prox(v, step) });
    }
    Ok(out)
}

/// Dense counterpart of [`prox_offdiag`].
pub fn prox_offdiag_dense(p: &PenaltySpec, m: &DMatrix<f64>, step: f64) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| {
        if i == j {
            m[(i, j)]
        } else {
            p.prox(m[(i, j)], step)
        }
    })
}

/// `sum_{i != j} g_lambda(M_ij)`; both symmetric entries count.
pub fn penalty_value(p: &PenaltySpec, m: &SymSparseMatrix) -> f64 {
    m.iter_upper()
        .filter(|(i, j, _)| i != j)
        .map(|(_, _, v)| 2.0 * p.value(v))
        .sum()
}

pub fn penalty_value_dense(p: &PenaltySpec, m: &DMatrix<f64>) -> f64 {
    let mut s = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if i != j {
                s += p.value(m[(i, j)]);
            }
        }
    }
    s
}

/// Elementwise `q'` on the off-diagonal entries, zero diagonal.
pub fn nonconvex_correction(p: &PenaltySpec, m: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| {
        if i == j {
            0.0
        } else {
            p.concave_derivative(m[(i, j)])
        }
    })
}

/// `lambda_k = c * sqrt(d_k * ln(d) / n)`.
pub fn scaled_lambda(c: f64, dk: usize, d: usize, n: usize) -> f64 {
    c * ((dk as f64) * (d as f64).ln().max(0.0) / n as f64).sqrt()
}

//! SG-PALM: cyclic block proximal-gradient minimization of the penalized
//! Sylvester pseudolikelihood
//!
//! ```text
//! L(Psi) = -N sum_i log W_i + 1/2 sum_n ||((+)_k Psi_k) vec(X^n)||^2 + sum_k P_k(Psi_k)
//! ```
//!
//! where `W = (+)_k diag(Psi_k)` entrywise. Each block step is a prox step
//! with backtracking from a Barzilai-Borwein initial step.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gram::SampleSet;
use crate::penalty::{nonconvex_correction, penalty_value_dense, scaled_lambda, PenaltyKind, PenaltySpec};
use crate::tensor::{mode_layout, mode_product_raw, multi_index, w_from_diagonals, KronSumOperator, SylvesterFactors};

/// Smallest step the line search tries before giving up.
pub const MIN_STEP: f64 = 1e-12;

const REFRESH_EVERY: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Stop once `|L_t - L_{t-1}| / |L_{t-1}|` falls below this.
    pub rel_tol: f64,
    /// Backtracking shrink factor `c` in `(0, 1)`.
    pub backtrack_c: f64,
    /// Initial step for the first sweep.
    pub eta0: f64,
    /// One penalty per mode.
    pub penalties: Vec<PenaltySpec>,
}

impl SolverConfig {
    pub fn new(penalties: Vec<PenaltySpec>) -> Self {
        Self {
            max_iters: 200,
            rel_tol: 1e-6,
            backtrack_c: 0.5,
            eta0: 1.0,
            penalties,
        }
    }

    pub fn validate(&self, order: usize) -> Result<()> {
        if !(self.backtrack_c > 0.0 && self.backtrack_c < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "backtracking constant must lie in (0, 1), got {}",
                self.backtrack_c
            )));
        }
        if !(self.eta0 > 0.0) || !(self.rel_tol > 0.0) {
            return Err(Error::InvalidParameter(
                "initial step and relative tolerance must be positive".into(),
            ));
        }
        if self.penalties.len() != order {
            return Err(Error::InvalidParameter(format!(
                "{} penalties given for {order} modes",
                self.penalties.len()
            )));
        }
        self.penalties.iter().try_for_each(PenaltySpec::validate)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub objective: f64,
    /// Accepted step per mode.
    pub etas: Vec<f64>,
    /// Objective evaluations spent in each mode's line search.
    pub trials: Vec<usize>,
    /// Off-diagonal nonzero pairs per factor.
    pub nnz: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolveTrace {
    /// Record 0 describes the starting point.
    pub records: Vec<IterationRecord>,
    pub converged: bool,
}

impl SolveTrace {
    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    pub fn final_objective(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.objective)
    }

    /// Iterations performed, excluding the starting record.
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone)]
pub struct LineSearchResult {
    pub eta: f64,
    pub candidate: DMatrix<f64>,
    /// Smooth objective at the candidate.
    pub h_candidate: f64,
    pub trials: usize,
}

/// Backtracking on `eta in {eta_init * c^j}` until
/// `h(cand) <= h_x + <cand - x, grad> + ||cand - x||^2 / (2 eta)`
/// where `cand = prox(x - eta * grad, eta)`.
///
/// `h` may return `+inf` outside its domain. `block` only labels the error.
pub fn line_search(
    mut h: impl FnMut(&DMatrix<f64>) -> f64,
    prox: impl Fn(&DMatrix<f64>, f64) -> DMatrix<f64>,
    x: &DMatrix<f64>,
    h_x: f64,
    grad: &DMatrix<f64>,
    eta_init: f64,
    c: f64,
    block: usize,
) -> Result<LineSearchResult> {
    let mut eta = eta_init;
    let mut trials = 0;
    // Round-off allowance for comparing two nearly equal large objectives.
    let slack = 1e-13 * h_x.abs().max(1.0);
    loop {
        if eta < MIN_STEP {
            return Err(Error::StepUnderflow { block, step: eta });
        }
        let cand = prox(&(x - grad * eta), eta);
        let delta = &cand - x;
        trials += 1;
        let h_c = h(&cand);
        let model = h_x + delta.dot(grad) + delta.norm_squared() / (2.0 * eta);
        if h_c.is_finite() && h_c <= model + slack {
            return Ok(LineSearchResult {
                eta,
                candidate: cand,
                h_candidate: h_c,
                trials,
            });
        }
        eta *= c;
    }
}

/// Barzilai-Borwein step `||dPsi||^2 / <dPsi, dGrad>`, or `fallback` when
/// the curvature estimate is not positive and finite.
pub fn bb_init_step(
    prev: &DMatrix<f64>,
    cur: &DMatrix<f64>,
    prev_grad: &DMatrix<f64>,
    cur_grad: &DMatrix<f64>,
    fallback: f64,
) -> f64 {
    let dx = cur - prev;
    let dg = cur_grad - prev_grad;
    let den = dx.dot(&dg);
    let eta = dx.norm_squared() / den;
    if den > 0.0 && eta.is_finite() && eta > 0.0 {
        eta
    } else {
        fallback
    }
}

/// Working state: dense blocks plus the stacked products `M x^n`.
struct State<'a> {
    data: &'a SampleSet,
    n: f64,
    psi: Vec<DMatrix<f64>>,
    mx: Vec<f64>,
}

impl<'a> State<'a> {
    fn new(data: &'a SampleSet, psi: Vec<DMatrix<f64>>) -> Self {
        let mut s = Self {
            data,
            n: data.n() as f64,
            psi,
            mx: Vec::new(),
        };
        s.refresh();
        s
    }

    fn refresh(&mut self) {
        let op = KronSumOperator::new(self.psi.clone()).expect("square blocks");
        self.mx = self.data.kron_sum_all(&op);
    }

    fn diags(&self) -> Vec<Vec<f64>> {
        self.psi.iter().map(|p| p.diagonal().as_slice().to_vec()).collect()
    }

    /// Smooth part `H`; `+inf` when some `W_i <= 0`.
    fn h_with(&self, diags: &[Vec<f64>], mx: &[f64]) -> f64 {
        match log_w_sum(diags) {
            Ok(lw) => -self.n * lw + 0.5 * mx.iter().map(|v| v * v).sum::<f64>(),
            Err(_) => f64::INFINITY,
        }
    }

    fn h(&self) -> f64 {
        self.h_with(&self.diags(), &self.mx)
    }

    fn gradient_with(&self, k: usize, diags: &[Vec<f64>], mx: &[f64]) -> DMatrix<f64> {
        let g = self.data.cross_with(mx, k) * self.n;
        let mut g = (&g + g.transpose()) * 0.5;
        let r = reciprocal_slice_sums(diags, k);
        for (a, ra) in r.iter().enumerate() {
            g[(a, a)] -= self.n * ra;
        }
        g
    }

    /// `M x` after replacing block `k` by `cand`.
    fn mx_with(&self, k: usize, cand: &DMatrix<f64>) -> Vec<f64> {
        let delta = cand - &self.psi[k];
        let mut out = self.mx.clone();
        mode_product_raw(&self.data.stacked_dims(), self.data.values(), &delta, k, 1.0, &mut out);
        out
    }
}

/// `sum_n ||M x^n||^2` as a quadratic in block `k` with the other blocks
/// fixed: `||Y||^2 + 2 <Psi, C> + <Psi, Psi T>`, where `Y = M x - X x_k Psi_k`,
/// `C = sum_n Y^n_(k) X^n_(k)^T` and `T = sum_n X^n_(k) X^n_(k)^T`.
struct BlockModel<'g> {
    c: DMatrix<f64>,
    t: &'g DMatrix<f64>,
    y2: f64,
}

impl<'g> BlockModel<'g> {
    fn new(state: &State<'_>, k: usize, t: &'g DMatrix<f64>) -> Self {
        let psi = &state.psi[k];
        let c = state.data.cross_with(&state.mx, k) * state.n - psi * t;
        let mx2: f64 = state.mx.iter().map(|v| v * v).sum();
        let y2 = mx2 - 2.0 * psi.dot(&c) - psi.dot(&(psi * t));
        Self { c, t, y2 }
    }

    fn quad(&self, psi: &DMatrix<f64>) -> f64 {
        self.y2 + 2.0 * psi.dot(&self.c) + psi.dot(&(psi * self.t))
    }

    /// Symmetric gradient of `quad / 2`.
    fn grad(&self, psi: &DMatrix<f64>) -> DMatrix<f64> {
        let g = &self.c + psi * self.t;
        (&g + g.transpose()) * 0.5
    }
}

/// `sum_i log W_i`, or the first offending multi-index.
fn log_w_sum(diags: &[Vec<f64>]) -> Result<f64> {
    let w = w_from_diagonals(diags);
    let mut s = 0.0;
    for (i, &v) in w.values().iter().enumerate() {
        if !(v > 0.0) {
            return Err(Error::DomainViolation {
                index: multi_index(w.dims(), i),
                value: v,
                iteration: None,
            });
        }
        s += v.ln();
    }
    Ok(s)
}

/// `r[a] = sum over i with i_k = a of 1 / W_i`.
fn reciprocal_slice_sums(diags: &[Vec<f64>], k: usize) -> Vec<f64> {
    let w = w_from_diagonals(diags);
    let (left, dk, right) = mode_layout(w.dims(), k);
    let v = w.values();
    let mut r = vec![0.0; dk];
    for rr in 0..right {
        for (a, ra) in r.iter_mut().enumerate() {
            let base = left * (a + dk * rr);
            *ra += v[base..base + left].iter().map(|x| 1.0 / x).sum::<f64>();
        }
    }
    r
}

fn check_data(factors: &SylvesterFactors, data: &SampleSet) -> Result<()> {
    if factors.dims() != data.dims() {
        return Err(Error::DimensionMismatch(format!(
            "factor dims {:?} do not match data dims {:?}",
            factors.dims(),
            data.dims()
        )));
    }
    Ok(())
}

/// Smooth part `H` of the objective. Errors on a nonpositive `W` entry.
pub fn smooth_objective(factors: &SylvesterFactors, data: &SampleSet) -> Result<f64> {
    check_data(factors, data)?;
    let state = State::new(data, factors.to_dense());
    let lw = log_w_sum(&state.diags())?;
    Ok(-state.n * lw + 0.5 * state.mx.iter().map(|v| v * v).sum::<f64>())
}

/// Full penalized objective `L`.
pub fn objective(factors: &SylvesterFactors, data: &SampleSet, penalties: &[PenaltySpec]) -> Result<f64> {
    if penalties.len() != factors.order() {
        return Err(Error::InvalidParameter(format!(
            "{} penalties given for {} modes",
            penalties.len(),
            factors.order()
        )));
    }
    let h = smooth_objective(factors, data)?;
    let p: f64 = factors
        .to_dense()
        .iter()
        .zip(penalties)
        .map(|(m, p)| penalty_value_dense(p, m))
        .sum();
    Ok(h + p)
}

/// Gradient of `H` with respect to block `k`, as a symmetric matrix:
/// `N * (sym((1/N) sum_n (M x^n)_(k) X^n_(k)^T) - diag(r_k))`.
pub fn block_gradient(factors: &SylvesterFactors, data: &SampleSet, k: usize) -> Result<DMatrix<f64>> {
    check_data(factors, data)?;
    if k >= factors.order() {
        return Err(Error::ModeOutOfRange {
            mode: k,
            order: factors.order(),
        });
    }
    let state = State::new(data, factors.to_dense());
    log_w_sum(&state.diags())?;
    Ok(state.gradient_with(k, &state.diags(), &state.mx))
}

fn nnz_offdiag(m: &DMatrix<f64>) -> usize {
    let mut c = 0;
    for j in 0..m.ncols() {
        for i in 0..j {
            if m[(i, j)] != 0.0 {
                c += 1;
            }
        }
    }
    c
}

fn l1_prox(lambda: f64) -> impl Fn(&DMatrix<f64>, f64) -> DMatrix<f64> {
    move |m: &DMatrix<f64>, eta: f64| {
        let p = crate::penalty::prox_offdiag_dense(&PenaltySpec::l1(lambda), m, eta);
        (&p + p.transpose()) * 0.5
    }
}

/// Per-mode penalties `lambda_k = c sqrt(d_k ln(d) / N)` weighted by `N`, as
/// the objective sums over samples.
pub fn theorem_penalties(kind: PenaltyKind, c: f64, shape: f64, data: &SampleSet) -> Result<Vec<PenaltySpec>> {
    let n = data.n();
    data.dims()
        .iter()
        .map(|&dk| Ok(PenaltySpec::new(kind, scaled_lambda(c, dk, data.dim(), n), shape)?.with_weight(n as f64)))
        .collect()
}

/// Fits from identity factors.
pub fn fit(data: &SampleSet, config: &SolverConfig) -> Result<(SylvesterFactors, SolveTrace)> {
    fit_from(data, config, &SylvesterFactors::identities(data.dims())?)
}

/// Fits from a given starting point (warm start along a penalty path).
pub fn fit_from(
    data: &SampleSet,
    config: &SolverConfig,
    init: &SylvesterFactors,
) -> Result<(SylvesterFactors, SolveTrace)> {
    config.validate(data.order())?;
    check_data(init, data)?;
    let kk = data.order();
    let nonconvex: Vec<bool> = config.penalties.iter().map(|p| p.kind != PenaltyKind::L1).collect();

    let mut state = State::new(data, init.to_dense());
    log_w_sum(&state.diags()).map_err(|e| match e {
        Error::DomainViolation { index, value, .. } => Error::DomainViolation {
            index,
            value,
            iteration: Some(0),
        },
        e => e,
    })?;

    // Concave remainder sum_{i != j} (g(t) - lambda |t|) of the nonconvex penalties.
    let concave = |k: usize, m: &DMatrix<f64>| -> f64 {
        if !nonconvex[k] {
            return 0.0;
        }
        let p = &config.penalties[k];
        penalty_value_dense(p, m) - penalty_value_dense(&PenaltySpec { kind: PenaltyKind::L1, ..*p }, m)
    };
    let full_objective = |psi: &[DMatrix<f64>], h: f64| -> f64 {
        h + psi
            .iter()
            .zip(&config.penalties)
            .map(|(m, p)| penalty_value_dense(p, m))
            .sum::<f64>()
    };

    let mut trace = SolveTrace::default();
    let mut obj = full_objective(&state.psi, state.h());
    trace.records.push(IterationRecord {
        iter: 0,
        objective: obj,
        etas: vec![config.eta0; kk],
        trials: vec![0; kk],
        nnz: state.psi.iter().map(nnz_offdiag).collect(),
    });

    // T_k = sum_n X^n_(k) X^n_(k)^T, fixed for the whole run.
    let grams: Vec<DMatrix<f64>> = (0..kk)
        .map(|k| {
            let g = data.cross_with(data.values(), k) * state.n;
            (&g + g.transpose()) * 0.5
        })
        .collect();

    let mut eta_global = config.eta0;
    for iter in 1..=config.max_iters {
        // Incremental updates of M x drift slowly; rebuild it now and then.
        if iter % REFRESH_EVERY == 0 {
            state.refresh();
        }
        let mut etas = vec![0.0; kk];
        let mut trials = vec![0; kk];
        let mut bb = vec![0.0; kk];
        for k in 0..kk {
            let model = BlockModel::new(&state, k, &grams[k]);
            let diags = state.diags();
            let pk = config.penalties[k];
            let h_at = |cand: &DMatrix<f64>, d: &[Vec<f64>]| -> f64 {
                match log_w_sum(d) {
                    Ok(lw) => -state.n * lw + 0.5 * model.quad(cand),
                    Err(_) => f64::INFINITY,
                }
            };
            let grad_at = |cand: &DMatrix<f64>, d: &[Vec<f64>]| -> DMatrix<f64> {
                let mut g = model.grad(cand);
                for (a, ra) in reciprocal_slice_sums(d, k).iter().enumerate() {
                    g[(a, a)] -= state.n * ra;
                }
                if nonconvex[k] {
                    g += nonconvex_correction(&pk, cand);
                }
                g
            };
            let with_diag = |cand: &DMatrix<f64>| {
                let mut d = diags.clone();
                d[k] = cand.diagonal().as_slice().to_vec();
                d
            };
            let psi_k = &state.psi[k];
            let grad = grad_at(psi_k, &diags);
            let h_bar = h_at(psi_k, &diags) + concave(k, psi_k);
            let res = line_search(
                |cand: &DMatrix<f64>| h_at(cand, &with_diag(cand)) + concave(k, cand),
                l1_prox(pk.l1_level()),
                psi_k,
                h_bar,
                &grad,
                eta_global,
                config.backtrack_c,
                k,
            )?;
            // Secant pair for block k with the other blocks held fixed.
            let new_grad = grad_at(&res.candidate, &with_diag(&res.candidate));
            bb[k] = bb_init_step(psi_k, &res.candidate, &grad, &new_grad, res.eta);
            state.mx = state.mx_with(k, &res.candidate);
            state.psi[k] = res.candidate;
            etas[k] = res.eta;
            trials[k] = res.trials;
        }
        eta_global = bb.iter().copied().fold(f64::INFINITY, f64::min);

        let new_obj = full_objective(&state.psi, state.h());
        trace.records.push(IterationRecord {
            iter,
            objective: new_obj,
            etas,
            trials,
            nnz: state.psi.iter().map(nnz_offdiag).collect(),
        });
        let rel = (obj - new_obj).abs() / obj.abs().max(f64::MIN_POSITIVE);
        obj = new_obj;
        if rel < config.rel_tol {
            trace.converged = true;
            break;
        }
    }
    Ok((SylvesterFactors::from_dense(&state.psi)?, trace))
}

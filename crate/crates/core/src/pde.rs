//! Synthetic ground truth: random factor graphs, exact Sylvester-model
//! samples, and PDE-driven spatio-temporal fields on a `d1 x d2` grid.
//!
//! Grid fields are vec-ordered `d1 x d2` matrices (first index fastest).
//! Poisson and convection-diffusion use zero Dirichlet boundaries; the
//! Kuramoto-Sivashinsky model is periodic.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gram::SampleSet;
use crate::linalg::{conjugate_gradient, KronSumEigen};
use crate::metrics::{SupportMask, SUPPORT_THRESHOLD};
use crate::rng::{self, tag};
use crate::tensor::{kron_sum_dense_with_cap, DenseTensor, KronSumOperator, SylvesterFactors, DEFAULT_DENSE_CAP};

/// `tridiag(-1, 2, -1)`.
pub fn laplacian_1d(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| match i.abs_diff(j) {
        0 => 2.0,
        1 => -1.0,
        _ => 0.0,
    })
}

/// Backward first difference: 1 on the diagonal, -1 below it.
pub fn first_difference(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else if i == j + 1 {
            -1.0
        } else {
            0.0
        }
    })
}

/// Periodic second difference `(u_{i+1} - 2 u_i + u_{i-1}) / h^2`.
pub fn periodic_laplacian_1d(n: usize, h: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let s = 1.0 / (h * h);
    for i in 0..n {
        m[(i, i)] -= 2.0 * s;
        m[(i, (i + 1) % n)] += s;
        m[(i, (i + n - 1) % n)] += s;
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub d1: usize,
    pub d2: usize,
    /// Mesh spacing.
    pub h: f64,
    /// Time step.
    pub dt: f64,
    /// Number of time steps.
    pub steps: usize,
}

impl GridSpec {
    pub fn new(d1: usize, d2: usize, steps: usize) -> Self {
        Self {
            d1,
            d2,
            h: 1.0,
            dt: 1.0,
            steps,
        }
    }

    pub fn dims(&self) -> [usize; 2] {
        [self.d1, self.d2]
    }

    pub fn dim(&self) -> usize {
        self.d1 * self.d2
    }

    pub fn validate(&self) -> Result<()> {
        if self.d1 == 0 || self.d2 == 0 || self.steps == 0 {
            return Err(Error::InvalidParameter(format!(
                "grid sizes and step count must be positive, got {}x{} over {} steps",
                self.d1, self.d2, self.steps
            )));
        }
        if !(self.h > 0.0) || !(self.dt > 0.0) {
            return Err(Error::InvalidParameter("mesh spacing and time step must be positive".into()));
        }
        Ok(())
    }
}

/// Default K-S time step for mesh spacing `h`. The linear terms are implicit,
/// so only the explicit transport term `|grad u|^2 / 2` limits the step.
pub fn ks_default_dt(h: f64) -> f64 {
    0.1 * h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    PoissonAr1,
    ConvectionDiffusion,
    KuramotoSivashinsky,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "poisson-ar" | "poisson-ar1" => Ok(ModelKind::PoissonAr1),
            "convection-diffusion" | "cd" => Ok(ModelKind::ConvectionDiffusion),
            "ks" | "kuramoto-sivashinsky" => Ok(ModelKind::KuramotoSivashinsky),
            other => Err(Error::InvalidParameter(format!("unknown model `{other}`"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::PoissonAr1 => "poisson-ar",
            ModelKind::ConvectionDiffusion => "convection-diffusion",
            ModelKind::KuramotoSivashinsky => "ks",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicsModel {
    pub kind: ModelKind,
    /// AR(1) coefficient of the Poisson source, `|a| < 1`.
    pub a: f64,
    /// Standard deviation of the white-noise forcing.
    pub sigma_w: f64,
    /// Diffusivity.
    pub theta: f64,
    /// Convection velocity.
    pub epsilon: f64,
}

impl DynamicsModel {
    pub fn poisson_ar(a: f64, sigma_w: f64) -> Self {
        Self {
            kind: ModelKind::PoissonAr1,
            a,
            sigma_w,
            theta: 1.0,
            epsilon: 0.0,
        }
    }

    pub fn convection_diffusion(theta: f64, epsilon: f64, sigma_w: f64) -> Self {
        Self {
            kind: ModelKind::ConvectionDiffusion,
            a: 0.0,
            sigma_w,
            theta,
            epsilon,
        }
    }

    pub fn kuramoto_sivashinsky(sigma_w: f64) -> Self {
        Self {
            kind: ModelKind::KuramotoSivashinsky,
            a: 0.0,
            sigma_w,
            theta: 1.0,
            epsilon: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a.abs() < 1.0) {
            return Err(Error::InvalidParameter(format!("AR coefficient must satisfy |a| < 1, got {}", self.a)));
        }
        if !(self.sigma_w >= 0.0) {
            return Err(Error::InvalidParameter(format!("noise std must be >= 0, got {}", self.sigma_w)));
        }
        if !(self.theta > 0.0) {
            return Err(Error::InvalidParameter(format!("diffusivity must be positive, got {}", self.theta)));
        }
        if !self.epsilon.is_finite() {
            return Err(Error::InvalidParameter("convection velocity must be finite".into()));
        }
        Ok(())
    }
}

/// Convection-diffusion factor `1/2 I + (dt theta / h^2) A + (dt eps / 2h) sym(D)`.
///
/// `sym(D) = A / 2` for the backward difference `D`, which keeps the factor
/// symmetric tridiagonal.
pub fn convection_diffusion_factor(n: usize, grid: &GridSpec, model: &DynamicsModel) -> DMatrix<f64> {
    let d = first_difference(n);
    let sym_d = (&d + d.transpose()) * 0.5;
    DMatrix::identity(n, n) * 0.5
        + laplacian_1d(n) * (grid.dt * model.theta / (grid.h * grid.h))
        + sym_d * (grid.dt * model.epsilon / (2.0 * grid.h))
}

/// Largest condition number accepted for an implicit step operator.
pub const MAX_CONDITION: f64 = 1e12;

/// One-step state map of a dynamics model on a grid.
#[derive(Debug, Clone)]
pub struct Propagator {
    grid: GridSpec,
    model: DynamicsModel,
    eig: KronSumEigen,
    /// K-S only: periodic Laplacian eigen-structure and spacing.
    ks_dt: f64,
}

impl Propagator {
    pub fn new(grid: &GridSpec, model: &DynamicsModel) -> Result<Self> {
        grid.validate()?;
        model.validate()?;
        let (f1, f2) = match model.kind {
            ModelKind::PoissonAr1 => (laplacian_1d(grid.d1), laplacian_1d(grid.d2)),
            ModelKind::ConvectionDiffusion => (
                convection_diffusion_factor(grid.d1, grid, model),
                convection_diffusion_factor(grid.d2, grid, model),
            ),
            ModelKind::KuramotoSivashinsky => (
                periodic_laplacian_1d(grid.d1, grid.h),
                periodic_laplacian_1d(grid.d2, grid.h),
            ),
        };
        let eig = KronSumEigen::new(&[f1, f2])?;
        let prop = Self {
            grid: *grid,
            model: *model,
            eig,
            ks_dt: grid.dt,
        };
        if model.kind != ModelKind::KuramotoSivashinsky {
            let cond = prop.condition_number();
            if !(cond <= MAX_CONDITION) {
                return Err(Error::IllConditioned(cond));
            }
        }
        Ok(prop)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn model(&self) -> &DynamicsModel {
        &self.model
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    /// Spatial factor pair `(A_{d1}, A_{d2})` of the linear operator.
    pub fn factors(&self) -> Vec<DMatrix<f64>> {
        match self.model.kind {
            ModelKind::PoissonAr1 => vec![laplacian_1d(self.grid.d1), laplacian_1d(self.grid.d2)],
            ModelKind::ConvectionDiffusion => vec![
                convection_diffusion_factor(self.grid.d1, &self.grid, &self.model),
                convection_diffusion_factor(self.grid.d2, &self.grid, &self.model),
            ],
            ModelKind::KuramotoSivashinsky => vec![
                periodic_laplacian_1d(self.grid.d1, self.grid.h),
                periodic_laplacian_1d(self.grid.d2, self.grid.h),
            ],
        }
    }

    /// `max |lambda| / min |lambda|` of the Kronecker-sum operator.
    pub fn condition_number(&self) -> f64 {
        let (lo, hi) = self
            .eig
            .spectrum()
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &s| (lo.min(s.abs()), hi.max(s.abs())));
        hi / lo
    }

    /// Solves `((+) A_k) x = b` exactly.
    pub fn solve_operator(&self, b: &[f64]) -> Vec<f64> {
        self.eig.apply_fn_batch(b, 1, |s| 1.0 / s)
    }

    /// Advances `state` by one step. `forcing` enters the model's noise
    /// channel: the Poisson source, the C-D right-hand side, or an additive
    /// K-S perturbation.
    pub fn step(&self, state: &[f64], forcing: Option<&[f64]>, step_index: usize) -> Result<Vec<f64>> {
        let d = self.dim();
        if state.len() != d || forcing.is_some_and(|f| f.len() != d) {
            return Err(Error::DimensionMismatch(format!(
                "state of length {} (forcing {:?}) on a grid of dimension {d}",
                state.len(),
                forcing.map(<[f64]>::len)
            )));
        }
        match self.model.kind {
            ModelKind::PoissonAr1 => {
                // z' = a z + w with z = L u, so u' = a u + L^{-1} w.
                let mut next: Vec<f64> = state.iter().map(|u| self.model.a * u).collect();
                if let Some(w) = forcing {
                    for (n, s) in next.iter_mut().zip(self.solve_operator(w)) {
                        *n += s;
                    }
                }
                Ok(next)
            }
            ModelKind::ConvectionDiffusion => {
                let rhs: Vec<f64> = match forcing {
                    Some(w) => state.iter().zip(w).map(|(u, w)| u + w).collect(),
                    None => state.to_vec(),
                };
                Ok(self.solve_operator(&rhs))
            }
            ModelKind::KuramotoSivashinsky => {
                let mut next = self.ks_step(state);
                if let Some(w) = forcing {
                    for (n, w) in next.iter_mut().zip(w) {
                        *n += w;
                    }
                }
                if let Some(m) = next.iter().map(|v| v.abs()).find(|m| !(*m <= KS_BLOWUP)) {
                    return Err(Error::BlowUp {
                        step: step_index,
                        magnitude: m,
                    });
                }
                Ok(next)
            }
        }
    }

    /// Semi-implicit K-S step:
    /// `(I + dt (Lap + Lap^2)) u' = u - dt |grad u|^2 / 2`.
    fn ks_step(&self, u: &[f64]) -> Vec<f64> {
        let (d1, d2, h) = (self.grid.d1, self.grid.d2, self.grid.h);
        let dt = self.ks_dt;
        let mut rhs = vec![0.0; d1 * d2];
        for j in 0..d2 {
            let (jp, jm) = ((j + 1) % d2, (j + d2 - 1) % d2);
            for i in 0..d1 {
                let (ip, im) = ((i + 1) % d1, (i + d1 - 1) % d1);
                let ux = (u[ip + d1 * j] - u[im + d1 * j]) / (2.0 * h);
                let uy = (u[i + d1 * jp] - u[i + d1 * jm]) / (2.0 * h);
                rhs[i + d1 * j] = u[i + d1 * j] - dt * 0.5 * (ux * ux + uy * uy);
            }
        }
        self.eig.apply_fn_batch(&rhs, 1, |s| 1.0 / (1.0 + dt * (s + s * s)))
    }
}

/// `|u|` beyond which a K-S run counts as blown up.
pub const KS_BLOWUP: f64 = 1e6;

/// A simulated trajectory: `states[k]` is the field after step `k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: GridSpec,
    pub states: Vec<Vec<f64>>,
    /// Spatial factors of the linear operator, where the model has one.
    pub factors: Vec<DMatrix<f64>>,
}

impl Trajectory {
    /// States as a `(d1, d2, T)` tensor.
    pub fn to_tensor(&self) -> DenseTensor {
        let values = self.states.iter().flatten().copied().collect();
        DenseTensor::new(vec![self.grid.d1, self.grid.d2, self.states.len()], values).expect("consistent trajectory")
    }
}

fn run(
    grid: &GridSpec,
    model: &DynamicsModel,
    seed: u64,
    initial: Vec<f64>,
    noise_std: f64,
) -> Result<Trajectory> {
    let prop = Propagator::new(grid, model)?;
    let d = grid.dim();
    let mut state = initial;
    let mut states = Vec::with_capacity(grid.steps);
    for k in 0..grid.steps {
        let forcing = (noise_std > 0.0).then(|| {
            let mut r = rng::substream(seed, tag::TRUTH, k as u64, 0);
            rng::normal_vec(&mut r, d, noise_std)
        });
        state = prop.step(&state, forcing.as_deref(), k + 1)?;
        states.push(state.clone());
    }
    Ok(Trajectory {
        grid: *grid,
        states,
        factors: prop.factors(),
    })
}

fn require(model: &DynamicsModel, kind: ModelKind) -> Result<()> {
    if model.kind != kind {
        return Err(Error::InvalidParameter(format!("expected a {kind} model, got {}", model.kind)));
    }
    Ok(())
}

/// Poisson-AR(1): `Z^0 = 0`, `Z^k = a Z^{k-1} + W^k`, `(A (+) A) vec(U^k) = vec(Z^k)`.
pub fn simulate_poisson_ar(grid: &GridSpec, model: &DynamicsModel, seed: u64) -> Result<Trajectory> {
    require(model, ModelKind::PoissonAr1)?;
    run(grid, model, seed, vec![0.0; grid.dim()], model.sigma_w)
}

/// Convection-diffusion from `initial` (zeros when `None`) with optional
/// per-step Gaussian forcing of std `noise`.
pub fn simulate_convection_diffusion(
    grid: &GridSpec,
    model: &DynamicsModel,
    seed: u64,
    noise: Option<f64>,
    initial: Option<&[f64]>,
) -> Result<Trajectory> {
    require(model, ModelKind::ConvectionDiffusion)?;
    let init = initial.map_or_else(|| vec![0.0; grid.dim()], <[f64]>::to_vec);
    if init.len() != grid.dim() {
        return Err(Error::DimensionMismatch("initial field does not match the grid".into()));
    }
    run(grid, model, seed, init, noise.unwrap_or(0.0))
}

/// K-S initial field: i.i.d. `N(0, 0.01)` entries.
pub fn ks_initial_field(grid: &GridSpec, seed: u64) -> Vec<f64> {
    let mut r = rng::substream(seed, tag::INITIAL, 0, 0);
    rng::normal_vec(&mut r, grid.dim(), 0.1)
}

/// Kuramoto-Sivashinsky from `initial` (random small field when `None`).
pub fn simulate_ks(grid: &GridSpec, model: &DynamicsModel, seed: u64, initial: Option<&[f64]>) -> Result<Trajectory> {
    require(model, ModelKind::KuramotoSivashinsky)?;
    let init = initial.map_or_else(|| ks_initial_field(grid, seed), <[f64]>::to_vec);
    if init.len() != grid.dim() {
        return Err(Error::DimensionMismatch("initial field does not match the grid".into()));
    }
    let mut t = run(grid, model, seed, init, model.sigma_w)?;
    t.factors.clear();
    Ok(t)
}

/// Dispatches on `model.kind` with each model's default initial field.
pub fn simulate(grid: &GridSpec, model: &DynamicsModel, seed: u64) -> Result<Trajectory> {
    match model.kind {
        ModelKind::PoissonAr1 => simulate_poisson_ar(grid, model, seed),
        ModelKind::ConvectionDiffusion => simulate_convection_diffusion(grid, model, seed, Some(model.sigma_w), None),
        ModelKind::KuramotoSivashinsky => simulate_ks(grid, model, seed, None),
    }
}

/// Covariance of `vec(U^k)` for Poisson-AR(1): `c_k sigma^2 L^{-2}` with
/// `c_k = a^2 c_{k-1} + 1`, `c_0 = 0`. Dense, desk scale.
pub fn poisson_ar_covariance(grid: &GridSpec, model: &DynamicsModel, k: usize) -> Result<DMatrix<f64>> {
    let mut c = 0.0;
    for _ in 0..k {
        c = model.a * model.a * c + 1.0;
    }
    Ok(poisson_inverse_square(grid)? * (c * model.sigma_w * model.sigma_w))
}

/// Stationary limit `sigma^2 / (1 - a^2) L^{-2}`.
pub fn poisson_ar_stationary_covariance(grid: &GridSpec, model: &DynamicsModel) -> Result<DMatrix<f64>> {
    Ok(poisson_inverse_square(grid)? * (model.sigma_w * model.sigma_w / (1.0 - model.a * model.a)))
}

fn poisson_inverse_square(grid: &GridSpec) -> Result<DMatrix<f64>> {
    let f = [laplacian_1d(grid.d1), laplacian_1d(grid.d2)];
    let l = kron_sum_dense_with_cap(&f, DEFAULT_DENSE_CAP)?;
    let l2 = &l * &l;
    l2.cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::NotPositiveDefinite("squared Poisson operator".into()))
}

/// Upper bidiagonal `T x T` matrix with 1 on the diagonal and `-a` above it.
pub fn ar_bidiagonal(t: usize, a: f64) -> DMatrix<f64> {
    DMatrix::from_fn(t, t, |i, j| {
        if i == j {
            1.0
        } else if j == i + 1 {
            -a
        } else {
            0.0
        }
    })
}

/// Precision of the stacked space-time vector `vec([vec(U^1) .. vec(U^T)])`
/// for Poisson-AR(1): `sigma^{-2} M^T M` with `M = B^T (x) (A (+) A)`.
pub fn blocked_precision(model: &DynamicsModel, grid: &GridSpec) -> Result<DMatrix<f64>> {
    require(model, ModelKind::PoissonAr1)?;
    model.validate()?;
    if !(model.sigma_w > 0.0) {
        return Err(Error::InvalidParameter("blocked precision needs sigma_w > 0".into()));
    }
    let total = grid.dim() * grid.steps;
    if total > DEFAULT_DENSE_CAP {
        return Err(Error::DenseCapExceeded {
            dim: total,
            cap: DEFAULT_DENSE_CAP,
        });
    }
    let l = kron_sum_dense_with_cap(&[laplacian_1d(grid.d1), laplacian_1d(grid.d2)], DEFAULT_DENSE_CAP)?;
    let m = ar_bidiagonal(grid.steps, model.a).transpose().kronecker(&l);
    Ok(m.transpose() * &m / (model.sigma_w * model.sigma_w))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FactorKind {
    /// Precision of the AR(1) covariance `rho^|i-j|`.
    Ar1 { rho: f64 },
    /// Block-diagonal star graphs of `block` nodes, the first node of each
    /// block being the hub.
    StarBlock { rho: f64, block: usize },
    /// `edges` random edges on top of `0.25 I`.
    ErdosRenyi { edges: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorGraphSpec {
    pub kind: FactorKind,
    pub dim: usize,
}

impl FactorGraphSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidParameter("factor dimension must be positive".into()));
        }
        match self.kind {
            FactorKind::Ar1 { rho } | FactorKind::StarBlock { rho, .. } if !(rho > 0.0 && rho < 1.0) => {
                Err(Error::InvalidParameter(format!("rho must lie in (0, 1), got {rho}")))
            }
            FactorKind::StarBlock { block: 0, .. } => Err(Error::InvalidParameter("star block size must be positive".into())),
            FactorKind::ErdosRenyi { edges } if edges > self.dim * (self.dim - 1) / 2 => Err(Error::InvalidParameter(format!(
                "{edges} edges exceed the {} available pairs",
                self.dim * (self.dim - 1) / 2
            ))),
            _ => Ok(()),
        }
    }
}

/// Tridiagonal inverse of the AR(1) covariance.
pub fn ar1_precision(n: usize, rho: f64) -> DMatrix<f64> {
    let s = 1.0 / (1.0 - rho * rho);
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            if n == 1 {
                1.0
            } else if i == 0 || i == n - 1 {
                s
            } else {
                (1.0 + rho * rho) * s
            }
        } else if i.abs_diff(j) == 1 {
            -rho * s
        } else {
            0.0
        }
    })
}

/// Block-diagonal star covariance: 1 on the diagonal, `rho` between a hub
/// and its leaves, `rho^2` between leaves of the same block.
pub fn star_block_covariance(n: usize, rho: f64, block: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| {
        let (bi, bj) = (i / block, j / block);
        if i == j {
            1.0
        } else if bi != bj {
            0.0
        } else if i % block == 0 || j % block == 0 {
            rho
        } else {
            rho * rho
        }
    })
}

fn star_block_precision(n: usize, rho: f64, block: usize) -> Result<DMatrix<f64>> {
    let mut p = DMatrix::zeros(n, n);
    let mut start = 0;
    while start < n {
        let len = block.min(n - start);
        let cov = star_block_covariance(len, rho, block);
        let inv = cov
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("star block covariance".into()))?
            .inverse();
        let scale = inv.amax();
        for j in 0..len {
            for i in 0..len {
                let v = inv[(i, j)];
                // leaf-leaf entries are zero up to round-off
                p[(start + i, start + j)] = if v.abs() <= 1e-12 * scale { 0.0 } else { v };
            }
        }
        start += len;
    }
    Ok(p)
}

fn erdos_renyi_precision<R: Rng>(n: usize, edges: usize, rng: &mut R) -> DMatrix<f64> {
    let mut a = DMatrix::identity(n, n) * 0.25;
    let pairs = n * (n.saturating_sub(1)) / 2;
    if edges == 0 {
        return a;
    }
    let mut chosen = sample_indices(rng, pairs, edges).into_vec();
    chosen.sort_unstable();
    for idx in chosen {
        let (i, j) = pair_from_index(idx);
        let psi = rng.random_range(0.6..=0.8);
        a[(i, j)] -= psi;
        a[(j, i)] -= psi;
        a[(i, i)] += psi;
        a[(j, j)] += psi;
    }
    a
}

/// Maps `0..n(n-1)/2` onto pairs `i < j`, column by column.
fn pair_from_index(idx: usize) -> (usize, usize) {
    // column j holds pairs (0..j, j); columns 1..j-1 hold j(j-1)/2 pairs
    let mut j = ((1.0 + (1.0 + 8.0 * idx as f64).sqrt()) / 2.0).floor() as usize;
    while j * (j - 1) / 2 > idx {
        j -= 1;
    }
    while (j + 1) * j / 2 <= idx {
        j += 1;
    }
    (idx - j * (j - 1) / 2, j)
}

/// Builds one factor per spec, checks each is positive definite, and returns
/// the factors with their true off-diagonal supports.
pub fn generate_factors(specs: &[FactorGraphSpec], seed: u64) -> Result<(SylvesterFactors, SupportMask)> {
    let mut mats = Vec::with_capacity(specs.len());
    for (k, spec) in specs.iter().enumerate() {
        spec.validate()?;
        let m = match spec.kind {
            FactorKind::Ar1 { rho } => ar1_precision(spec.dim, rho),
            FactorKind::StarBlock { rho, block } => star_block_precision(spec.dim, rho, block)?,
            FactorKind::ErdosRenyi { edges } => {
                let mut r = rng::substream(seed, tag::FACTORS, k as u64, 0);
                erdos_renyi_precision(spec.dim, edges, &mut r)
            }
        };
        if m.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite(format!("generated factor {k} ({:?})", spec.kind)));
        }
        mats.push(m);
    }
    let mask = SupportMask::from_dense(&mats, SUPPORT_THRESHOLD);
    Ok((SylvesterFactors::from_dense(&mats)?, mask))
}

/// Exact samples of the Sylvester model: `vec(T) ~ N(0, I)` and
/// `((+)_k Psi_k) vec(X) = vec(T)` solved by matrix-free CG.
pub fn sample_sylvester(factors: &SylvesterFactors, n: usize, seed: u64) -> Result<SampleSet> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    // The smallest eigenvalue of a Kronecker sum is the sum of the factors' smallest.
    let lo: f64 = factors
        .to_dense()
        .into_iter()
        .map(|m| crate::linalg::sorted_eigen(m).1[0])
        .sum();
    if !(lo > 0.0) {
        return Err(Error::NotPositiveDefinite(format!(
            "Kronecker sum of the factors has minimum eigenvalue {lo:e}"
        )));
    }
    let op = KronSumOperator::from_factors(factors);
    let d = factors.total_dim();
    let solved: Vec<Result<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::substream(seed, tag::SAMPLES, i as u64, 0);
            let t = rng::normal_vec(&mut r, d, 1.0);
            let mut x = vec![0.0; d];
            conjugate_gradient(|v, out| op.apply_batch(v, 1, out), &t, &mut x, 1e-10, 10 * d)?;
            Ok(x)
        })
        .collect();
    let mut values = Vec::with_capacity(n * d);
    for s in solved {
        values.extend(s?);
    }
    SampleSet::from_stacked(factors.dims(), n, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sorted_eigen;
    use nalgebra::DVector;

    #[test]
    fn laplacian_examples() {
        assert_eq!(laplacian_1d(3), DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 2.0]));
        assert_eq!(laplacian_1d(1), DMatrix::from_element(1, 1, 2.0));
        let n = 9;
        let eig = sorted_eigen(laplacian_1d(n)).1;
        for (j, e) in eig.iter().enumerate() {
            let exact = 2.0 - 2.0 * ((j + 1) as f64 * std::f64::consts::PI / (n + 1) as f64).cos();
            assert!((e - exact).abs() < 1e-10);
        }
    }

    #[test]
    fn poisson_operator_is_spd() {
        let l = kron_sum_dense_with_cap(&[laplacian_1d(4), laplacian_1d(5)], 4096).unwrap();
        assert_eq!(&l, &l.transpose());
        assert!(sorted_eigen(l).1[0] > 0.0);
    }

    #[test]
    fn poisson_ar_zero_noise_is_zero() {
        let g = GridSpec::new(4, 3, 5);
        let t = simulate_poisson_ar(&g, &DynamicsModel::poisson_ar(0.5, 0.0), 1).unwrap();
        assert!(t.states.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(t.to_tensor().dims(), &[4, 3, 5]);
        assert_eq!(t.factors[0], laplacian_1d(4));
    }

    #[test]
    fn poisson_ar_is_deterministic_and_solves_the_operator() {
        let g = GridSpec::new(4, 3, 3);
        let m = DynamicsModel::poisson_ar(0.6, 1.0);
        let a = simulate_poisson_ar(&g, &m, 9).unwrap();
        assert_eq!(a, simulate_poisson_ar(&g, &m, 9).unwrap());
        assert_ne!(a, simulate_poisson_ar(&g, &m, 10).unwrap());
        let l = kron_sum_dense_with_cap(&a.factors, 4096).unwrap();
        // z^k - a z^{k-1} must be the step's white noise
        let z1 = &l * DVector::from_column_slice(&a.states[0]);
        let z2 = &l * DVector::from_column_slice(&a.states[1]);
        let mut r = rng::substream(9, tag::TRUTH, 1, 0);
        let w2 = DVector::from_vec(rng::normal_vec(&mut r, 12, 1.0));
        assert!((z2 - z1 * 0.6 - w2).amax() < 1e-12);
    }

    #[test]
    fn poisson_ar_lag_one_correlation_vanishes_for_a_zero() {
        let g = GridSpec::new(3, 3, 2000);
        let t = simulate_poisson_ar(&g, &DynamicsModel::poisson_ar(0.0, 1.0), 4).unwrap();
        let l = kron_sum_dense_with_cap(&t.factors, 4096).unwrap();
        let z: Vec<DVector<f64>> = t.states.iter().map(|u| &l * DVector::from_column_slice(u)).collect();
        let (mut num, mut den) = (0.0, 0.0);
        for k in 1..z.len() {
            num += z[k].dot(&z[k - 1]);
            den += z[k].norm_squared();
        }
        assert!((num / den).abs() < 0.05);
    }

    #[test]
    fn poisson_ar_variance_growth() {
        // Var(Z^k) = sigma^2 (1 - a^{2k}) / (1 - a^2) per entry
        let g = GridSpec::new(2, 2, 4);
        let m = DynamicsModel::poisson_ar(0.7, 1.5);
        let l = kron_sum_dense_with_cap(&[laplacian_1d(2), laplacian_1d(2)], 4096).unwrap();
        let reps = 10_000;
        let mut acc = vec![0.0; 4];
        for r in 0..reps {
            let t = simulate_poisson_ar(&g, &m, 1000 + r).unwrap();
            for (k, a) in acc.iter_mut().enumerate() {
                let z = &l * DVector::from_column_slice(&t.states[k]);
                *a += z.norm_squared() / 4.0;
            }
        }
        for (k, a) in acc.iter().enumerate() {
            let kk = (k + 1) as i32;
            let exact = 1.5 * 1.5 * (1.0 - 0.49f64.powi(kk)) / (1.0 - 0.49);
            assert!((a / reps as f64 - exact).abs() < 0.05 * exact, "k={kk}");
        }
    }

    #[test]
    fn convection_diffusion_zero_and_contraction() {
        let g = GridSpec { h: 0.5, dt: 0.1, ..GridSpec::new(5, 4, 6) };
        let m = DynamicsModel::convection_diffusion(1.0, 0.0, 0.0);
        let t = simulate_convection_diffusion(&g, &m, 1, None, None).unwrap();
        assert!(t.states.iter().flatten().all(|&v| v == 0.0));
        let f = &t.factors;
        assert_eq!(&f[0], &f[0].transpose());
        let u0 = ks_initial_field(&g, 3);
        let t = simulate_convection_diffusion(&g, &m, 1, None, Some(&u0)).unwrap();
        let mut prev = DVector::from_column_slice(&u0).norm();
        for s in &t.states {
            let e = DVector::from_column_slice(s).norm();
            assert!(e <= prev);
            prev = e;
        }
        // the inverse operator is a contraction
        let prop = Propagator::new(&g, &m).unwrap();
        let max_inv = prop.eig.spectrum().iter().map(|s| 1.0 / s.abs()).fold(0.0, f64::max);
        assert!(max_inv < 1.0);
    }

    #[test]
    fn convection_diffusion_step_matches_dense_solve() {
        let g = GridSpec { h: 0.2, dt: 0.05, ..GridSpec::new(4, 5, 1) };
        let m = DynamicsModel::convection_diffusion(0.8, 1.3, 0.0);
        let u0 = ks_initial_field(&g, 8);
        let t = simulate_convection_diffusion(&g, &m, 1, None, Some(&u0)).unwrap();
        let op = kron_sum_dense_with_cap(&t.factors, 4096).unwrap();
        let x = op.lu().solve(&DVector::from_column_slice(&u0)).unwrap();
        assert!((x - DVector::from_column_slice(&t.states[0])).amax() < 1e-10);
        // factors follow the stated closed form
        let c = 0.05 * 0.8 / 0.04 + 0.05 * 1.3 / (4.0 * 0.2);
        let expect = DMatrix::identity(4, 4) * 0.5 + laplacian_1d(4) * c;
        assert!((&t.factors[0] - expect).amax() < 1e-14);
    }

    #[test]
    fn ill_conditioned_operator_is_rejected() {
        // choose eps so that 1/2 + c * mu vanishes for an eigenvalue mu of A
        let g = GridSpec { h: 1.0, dt: 1.0, ..GridSpec::new(1, 1, 1) };
        // A_1 = [2]; the sum is 1 + 2 * 2c, zero at c = -1/4
        let eps = -4.0 * (0.25 + 1.0);
        let m = DynamicsModel::convection_diffusion(1.0, eps, 0.0);
        assert!(matches!(Propagator::new(&g, &m), Err(Error::IllConditioned(_))));
    }

    #[test]
    fn ks_zero_field_is_an_equilibrium() {
        let g = GridSpec { h: 0.5, dt: 0.05, ..GridSpec::new(8, 8, 10) };
        let t = simulate_ks(&g, &DynamicsModel::kuramoto_sivashinsky(0.0), 1, Some(&[0.0; 64])).unwrap();
        assert!(t.states.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn ks_linear_growth_follows_dispersion() {
        let (n, h, dt) = (64usize, 0.5, 0.01);
        let g = GridSpec { h, dt, ..GridSpec::new(n, n, 20) };
        let len = n as f64 * h;
        for m in [2usize, 3, 4] {
            let q = 2.0 * std::f64::consts::PI * m as f64 / len;
            let u0: Vec<f64> = (0..n * n)
                .map(|idx| 1e-4 * (q * (idx % n) as f64 * h).cos())
                .collect();
            let t = simulate_ks(&g, &DynamicsModel::kuramoto_sivashinsky(0.0), 1, Some(&u0)).unwrap();
            let a0 = u0[0];
            let a1 = t.states[0][0];
            let rate = (a1 / a0).ln() / dt;
            let exact = q * q - q.powi(4);
            assert!((rate - exact).abs() <= 0.05 * exact.abs(), "m={m} rate={rate} exact={exact}");
        }
    }

    #[test]
    fn ks_moderate_run_is_stable() {
        let h = 0.5;
        let g = GridSpec { h, dt: ks_default_dt(h), ..GridSpec::new(64, 64, 500) };
        let len = 64.0 * h;
        let q = 2.0 * std::f64::consts::PI / len;
        let mut u0 = ks_initial_field(&g, 5);
        for (idx, u) in u0.iter_mut().enumerate() {
            let (i, j) = ((idx % 64) as f64, (idx / 64) as f64);
            *u += (q * i * h).sin() + (2.0 * q * j * h).cos();
        }
        let t = simulate_ks(&g, &DynamicsModel::kuramoto_sivashinsky(0.0), 5, Some(&u0)).unwrap();
        let last = t.states.last().unwrap();
        assert!(last.iter().all(|v| v.is_finite() && v.abs() < KS_BLOWUP));
    }

    #[test]
    fn ks_blowup_is_reported() {
        // a large smooth field with an oversized step: the explicit transport term runs away
        let g = GridSpec { h: 1.0, dt: 10.0, ..GridSpec::new(8, 8, 50) };
        let u0: Vec<f64> = (0..64)
            .map(|i| 10.0 * (((i % 8) as f64 * 0.785).sin() + ((i / 8) as f64 * 0.785).cos()))
            .collect();
        let err = simulate_ks(&g, &DynamicsModel::kuramoto_sivashinsky(0.0), 1, Some(&u0));
        assert!(matches!(err, Err(Error::BlowUp { .. })), "{err:?}");
    }

    #[test]
    fn blocked_precision_cases() {
        let g = GridSpec::new(2, 3, 3);
        let l = kron_sum_dense_with_cap(&[laplacian_1d(2), laplacian_1d(3)], 4096).unwrap();
        let block = l.transpose() * &l / 4.0;
        let p0 = blocked_precision(&DynamicsModel::poisson_ar(0.0, 2.0), &g).unwrap();
        for s in 0..3 {
            for t in 0..3 {
                let b = p0.view((6 * s, 6 * t), (6, 6));
                if s == t {
                    assert!((b - &block).amax() < 1e-12);
                } else {
                    assert_eq!(b.amax(), 0.0);
                }
            }
        }
        let g1 = GridSpec::new(2, 3, 1);
        let p1 = blocked_precision(&DynamicsModel::poisson_ar(0.4, 2.0), &g1).unwrap();
        assert!((p1 - &block).amax() < 1e-12);
        // explicit construction from B and the factors
        let m = DynamicsModel::poisson_ar(0.4, 2.0);
        let p = blocked_precision(&m, &g).unwrap();
        let b = ar_bidiagonal(3, 0.4);
        let mm = b.transpose().kronecker(&l);
        assert!((p - mm.transpose() * mm / 4.0).amax() < 1e-12);
        assert!(blocked_precision(&m, &GridSpec::new(40, 40, 3)).is_err());
    }

    #[test]
    fn factor_generators() {
        // AR1 precision is the inverse of rho^|i-j|
        let rho: f64 = 0.6;
        let cov = DMatrix::from_fn(3, 3, |i, j| rho.powi(i.abs_diff(j) as i32));
        let inv = cov.try_inverse().unwrap();
        assert!((ar1_precision(3, rho) - inv).amax() < 1e-12);
        let (f, mask) = generate_factors(
            &[
                FactorGraphSpec { kind: FactorKind::ErdosRenyi { edges: 0 }, dim: 4 },
                FactorGraphSpec { kind: FactorKind::Ar1 { rho }, dim: 5 },
                FactorGraphSpec { kind: FactorKind::StarBlock { rho: 0.5, block: 4 }, dim: 10 },
            ],
            3,
        )
        .unwrap();
        assert_eq!(f.factors()[0].to_dense(), DMatrix::identity(4, 4) * 0.25);
        assert_eq!(mask.masks()[1].iter().filter(|&&b| b).count(), 8);
        // star blocks: hub-leaf edges only
        let sb = f.factors()[2].to_dense();
        let sb_inv = sb.try_inverse().unwrap();
        let cov = star_block_covariance(10, 0.5, 4);
        assert!((sb_inv - &cov).amax() < 1e-10);
        assert_eq!(cov[(0, 1)], 0.5);
        assert_eq!(cov[(1, 2)], 0.25);
        assert_eq!(cov[(0, 4)], 0.0);
        let edges = mask.masks()[2].iter().filter(|&&b| b).count() / 2;
        assert_eq!(edges, 3 + 3 + 1);
        assert!(mask.masks()[2][(4, 5)] && !mask.masks()[2][(5, 6)]);
    }

    #[test]
    fn erdos_renyi_recipe() {
        let spec = FactorGraphSpec { kind: FactorKind::ErdosRenyi { edges: 16 }, dim: 16 };
        let (f, mask) = generate_factors(&[spec], 11).unwrap();
        assert_eq!(mask.edge_count(), 16);
        let m = f.factors()[0].to_dense();
        for i in 0..16 {
            let off: f64 = (0..16).filter(|&j| j != i).map(|j| m[(i, j)]).sum();
            // each edge moves psi from the pair onto both diagonals
            assert!((m[(i, i)] - 0.25 + off).abs() < 1e-12);
            for j in 0..16 {
                if i != j && m[(i, j)] != 0.0 {
                    assert!((-0.8..=-0.6).contains(&m[(i, j)]));
                }
            }
        }
        assert_eq!(generate_factors(&[spec], 11).unwrap().0, f);
        let bad = FactorGraphSpec { kind: FactorKind::ErdosRenyi { edges: 200 }, dim: 16 };
        assert!(generate_factors(&[bad], 1).is_err());
    }

    #[test]
    fn pair_indexing_is_a_bijection() {
        let n = 7;
        let mut seen = std::collections::BTreeSet::new();
        for idx in 0..n * (n - 1) / 2 {
            let (i, j) = pair_from_index(idx);
            assert!(i < j && j < n);
            assert!(seen.insert((i, j)));
        }
    }

    #[test]
    fn identity_samples_are_scaled_normals() {
        let f = SylvesterFactors::identities(&[4, 4]).unwrap();
        let s = sample_sylvester(&f, 4000, 1).unwrap();
        let var = s.values().iter().map(|v| v * v).sum::<f64>() / s.values().len() as f64;
        assert!((var - 0.25).abs() < 0.01);
        assert_eq!(s, sample_sylvester(&f, 4000, 1).unwrap());
    }

    #[test]
    fn sylvester_samples_match_precision() {
        let (f, _) = generate_factors(
            &[
                FactorGraphSpec { kind: FactorKind::ErdosRenyi { edges: 3 }, dim: 4 },
                FactorGraphSpec { kind: FactorKind::Ar1 { rho: 0.5 }, dim: 4 },
            ],
            2,
        )
        .unwrap();
        let s = sample_sylvester(&f, 100_000, 7).unwrap();
        let cov = crate::gram::sample_covariance(&s).unwrap();
        let emp = cov.try_inverse().unwrap();
        let l = crate::tensor::kron_sum_dense(&f).unwrap();
        let omega = &l * &l;
        let rel = (emp - &omega).norm() / omega.norm();
        assert!(rel < 0.1, "rel = {rel}");
    }

    #[test]
    fn sample_sylvester_rejects_indefinite() {
        let f = SylvesterFactors::from_dense(&[DMatrix::identity(2, 2) * -1.0, DMatrix::identity(2, 2) * 0.5]).unwrap();
        assert!(matches!(sample_sylvester(&f, 2, 1), Err(Error::NotPositiveDefinite(_))));
    }
}

//! Stochastic (perturbed-observation) ensemble Kalman filter with a pluggable
//! covariance or precision estimator in the gain.
//!
//! Each cycle evolves every member through the model, estimates the forecast
//! (inverse) covariance from the anomaly ensemble, forms the gain, and nudges
//! each member toward its own perturbed copy of the observation.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gram::{sample_covariance, SampleSet};
use crate::linalg::conjugate_gradient;
use crate::pde::{simulate, DynamicsModel, GridSpec, Propagator, Trajectory};
use crate::penalty::PenaltyKind;
use crate::rng::{self, tag};
use crate::sgpalm::{self, theorem_penalties, SolverConfig};
use crate::syglasso::{self, SyGlassoConfig, WMode};
use crate::tensor::{KronSumOperator, DEFAULT_DENSE_CAP};

/// Relative residual of the CG solve inside the precision-form gain.
pub const GAIN_CG_TOL: f64 = 1e-12;

/// One-step state map with additive process noise entering through the
/// model's forcing channel.
pub trait Dynamics: Sync {
    /// Tensor layout of the state, used to reshape anomalies for multiway
    /// estimators.
    fn dims(&self) -> Vec<usize>;

    fn dim(&self) -> usize {
        self.dims().iter().product()
    }

    fn step(&self, state: &[f64], noise: &[f64], step: usize) -> Result<Vec<f64>>;
}

impl Dynamics for Propagator {
    fn dims(&self) -> Vec<usize> {
        self.grid().dims().to_vec()
    }

    fn step(&self, state: &[f64], noise: &[f64], step: usize) -> Result<Vec<f64>> {
        Propagator::step(self, state, Some(noise), step)
    }
}

/// `x' = Phi x + w`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDynamics {
    pub phi: DMatrix<f64>,
    pub dims: Vec<usize>,
}

impl LinearDynamics {
    pub fn new(phi: DMatrix<f64>, dims: Vec<usize>) -> Result<Self> {
        let d: usize = dims.iter().product();
        if phi.nrows() != d || phi.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} transition for a state of dimension {d}",
                phi.nrows(),
                phi.ncols()
            )));
        }
        Ok(Self { phi, dims })
    }

    pub fn scalar(phi: f64) -> Self {
        Self {
            phi: DMatrix::from_element(1, 1, phi),
            dims: vec![1],
        }
    }
}

impl Dynamics for LinearDynamics {
    fn dims(&self) -> Vec<usize> {
        self.dims.clone()
    }

    fn step(&self, state: &[f64], noise: &[f64], _step: usize) -> Result<Vec<f64>> {
        let x = &self.phi * DVector::from_column_slice(state) + DVector::from_column_slice(noise);
        Ok(x.data.into())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ObservationOperator {
    /// Observes the listed state entries (strictly increasing).
    Mask { indices: Vec<usize>, dim: usize },
    /// General `r x d` matrix, desk scale only.
    Dense(DMatrix<f64>),
}

impl ObservationOperator {
    pub fn full(dim: usize) -> Self {
        ObservationOperator::Mask {
            indices: (0..dim).collect(),
            dim,
        }
    }

    /// Observes a uniformly random `round(frac * dim)`-subset of entries.
    pub fn random_mask(dim: usize, frac: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&frac) {
            return Err(Error::InvalidParameter(format!("observed fraction must lie in [0, 1], got {frac}")));
        }
        let r = (frac * dim as f64).round() as usize;
        let mut rng = rng::substream(seed, tag::OBS_MASK, 0, 0);
        let mut indices = sample_indices(&mut rng, dim, r).into_vec();
        indices.sort_unstable();
        Ok(ObservationOperator::Mask { indices, dim })
    }

    pub fn dim(&self) -> usize {
        match self {
            ObservationOperator::Mask { dim, .. } => *dim,
            ObservationOperator::Dense(h) => h.ncols(),
        }
    }

    pub fn rows(&self) -> usize {
        match self {
            ObservationOperator::Mask { indices, .. } => indices.len(),
            ObservationOperator::Dense(h) => h.nrows(),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            ObservationOperator::Mask { indices, .. } => indices.iter().map(|&i| x[i]).collect(),
            ObservationOperator::Dense(h) => (h * DVector::from_column_slice(x)).data.into(),
        }
    }

    /// `H^T y`.
    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        match self {
            ObservationOperator::Mask { indices, dim } => {
                let mut x = vec![0.0; *dim];
                for (&i, v) in indices.iter().zip(y) {
                    x[i] = *v;
                }
                x
            }
            ObservationOperator::Dense(h) => (h.transpose() * DVector::from_column_slice(y)).data.into(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            ObservationOperator::Mask { indices, dim } => {
                let mut h = DMatrix::zeros(indices.len(), *dim);
                for (row, &i) in indices.iter().enumerate() {
                    h[(row, i)] = 1.0;
                }
                h
            }
            ObservationOperator::Dense(h) => h.clone(),
        }
    }
}

/// Time-invariant observation operator with diagonal noise covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationModel {
    pub h: ObservationOperator,
    /// Diagonal of `R`, length `r`.
    pub r_diag: Vec<f64>,
    /// Diagonal of `Q`, length `d`.
    pub q_diag: Vec<f64>,
}

impl ObservationModel {
    pub fn new(h: ObservationOperator, r_diag: Vec<f64>, q_diag: Vec<f64>) -> Result<Self> {
        let m = Self { h, r_diag, q_diag };
        m.validate()?;
        Ok(m)
    }

    /// `R = r_var I` and `Q = q_var I`.
    pub fn isotropic(h: ObservationOperator, r_var: f64, q_var: f64) -> Result<Self> {
        let (r, d) = (h.rows(), h.dim());
        Self::new(h, vec![r_var; r], vec![q_var; d])
    }

    pub fn dim(&self) -> usize {
        self.h.dim()
    }

    pub fn rows(&self) -> usize {
        self.h.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let (r, d) = (self.h.rows(), self.h.dim());
        if r > d {
            return Err(Error::DimensionMismatch(format!("{r} observations of a {d}-dimensional state")));
        }
        if let ObservationOperator::Mask { indices, dim } = &self.h {
            if indices.windows(2).any(|w| w[0] >= w[1]) || indices.last().is_some_and(|&i| i >= *dim) {
                return Err(Error::InvalidParameter("mask indices must be strictly increasing and in range".into()));
            }
        }
        if self.r_diag.len() != r || self.q_diag.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "R has {} entries for {r} observations, Q has {} for dimension {d}",
                self.r_diag.len(),
                self.q_diag.len()
            )));
        }
        if self.r_diag.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidParameter("observation noise variances must be positive".into()));
        }
        if self.q_diag.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidParameter("process noise variances must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleState {
    pub members: Vec<Vec<f64>>,
    pub t: usize,
}

impl EnsembleState {
    pub fn new(members: Vec<Vec<f64>>, t: usize) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::InvalidParameter(format!("an ensemble needs at least 2 members, got {}", members.len())));
        }
        let d = members[0].len();
        if members.iter().any(|m| m.len() != d) {
            return Err(Error::DimensionMismatch("ensemble members differ in length".into()));
        }
        Ok(Self { members, t })
    }

    pub fn zeros(n: usize, d: usize) -> Result<Self> {
        Self::new(vec![vec![0.0; d]; n], 0)
    }

    /// Members drawn from `N(mean, diag(std^2))`.
    pub fn gaussian(mean: &[f64], std: &[f64], n: usize, seed: u64) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::DimensionMismatch("mean and std lengths differ".into()));
        }
        let members = (0..n)
            .map(|i| {
                let mut r = rng::substream(seed, tag::INITIAL, i as u64, 0);
                let z = rng::normal_vec(&mut r, mean.len(), 1.0);
                mean.iter().zip(std).zip(z).map(|((m, s), z)| m + s * z).collect()
            })
            .collect();
        Self::new(members, 0)
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn dim(&self) -> usize {
        self.members[0].len()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for x in &self.members {
            for (a, v) in m.iter_mut().zip(x) {
                *a += v;
            }
        }
        let n = self.size() as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Anomalies `sqrt(N / (N - 1)) (x_i - mean)` laid out as tensors of
    /// shape `dims`, so that their `1/N` second moment is the unbiased
    /// sample covariance.
    pub fn anomalies(&self, dims: &[usize]) -> Result<SampleSet> {
        let mean = self.mean();
        let n = self.size();
        let s = (n as f64 / (n as f64 - 1.0)).sqrt();
        let values = self
            .members
            .iter()
            .flat_map(|x| x.iter().zip(&mean).map(move |(v, m)| s * (v - m)))
            .collect();
        SampleSet::from_stacked(dims.to_vec(), n, values)
    }
}

/// Precision `M^2` with `M = diag(w) + (+)_k F_k` applied matrix-free, or a
/// dense precision.
#[derive(Debug, Clone)]
pub enum PrecisionOperator {
    Dense(DMatrix<f64>),
    SquaredSum { diag: Option<Vec<f64>>, op: KronSumOperator },
}

impl PrecisionOperator {
    pub fn dim(&self) -> usize {
        match self {
            PrecisionOperator::Dense(m) => m.nrows(),
            PrecisionOperator::SquaredSum { op, .. } => op.dim(),
        }
    }

    fn apply_root(diag: &Option<Vec<f64>>, op: &KronSumOperator, x: &[f64], out: &mut [f64]) {
        op.apply_batch(x, 1, out);
        if let Some(w) = diag {
            for ((o, w), x) in out.iter_mut().zip(w).zip(x) {
                *o += w * x;
            }
        }
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            PrecisionOperator::Dense(m) => {
                out.copy_from_slice((m * DVector::from_column_slice(x)).as_slice());
            }
            PrecisionOperator::SquaredSum { diag, op } => {
                let mut tmp = vec![0.0; x.len()];
                Self::apply_root(diag, op, x, &mut tmp);
                Self::apply_root(diag, op, &tmp, out);
            }
        }
    }

    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        let d = self.dim();
        if d > DEFAULT_DENSE_CAP {
            return Err(Error::DenseCapExceeded { dim: d, cap: DEFAULT_DENSE_CAP });
        }
        let mut m = DMatrix::zeros(d, d);
        let mut e = vec![0.0; d];
        let mut col = vec![0.0; d];
        for j in 0..d {
            e[j] = 1.0;
            self.apply_into(&e, &mut col);
            m.column_mut(j).copy_from_slice(&col);
            e[j] = 0.0;
        }
        Ok(m)
    }
}

/// What an estimator hands to the gain.
#[derive(Debug, Clone)]
pub enum CovarianceEstimate {
    Covariance(DMatrix<f64>),
    Precision(PrecisionOperator),
}

/// Maps the anomaly ensemble to a forecast covariance or precision.
pub trait CovarianceEstimator: Sync {
    fn name(&self) -> &str;
    fn estimate(&self, anomalies: &SampleSet) -> Result<CovarianceEstimate>;
}

/// `Sigma = I`.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityEstimator;

impl CovarianceEstimator for IdentityEstimator {
    fn name(&self) -> &str {
        "identity"
    }

    fn estimate(&self, anomalies: &SampleSet) -> Result<CovarianceEstimate> {
        let d = anomalies.dim();
        if d > DEFAULT_DENSE_CAP {
            return Err(Error::DenseCapExceeded { dim: d, cap: DEFAULT_DENSE_CAP });
        }
        Ok(CovarianceEstimate::Covariance(DMatrix::identity(d, d)))
    }
}

/// Sample covariance plus `delta I` with `delta = ridge * trace(S) / d`.
#[derive(Debug, Clone, Copy)]
pub struct SampleRidgeEstimator {
    pub ridge: f64,
}

impl Default for SampleRidgeEstimator {
    fn default() -> Self {
        Self { ridge: 1e-3 }
    }
}

impl CovarianceEstimator for SampleRidgeEstimator {
    fn name(&self) -> &str {
        "sample"
    }

    fn estimate(&self, anomalies: &SampleSet) -> Result<CovarianceEstimate> {
        let mut s = sample_covariance(anomalies)?;
        let delta = self.ridge * s.trace() / s.nrows() as f64;
        for i in 0..s.nrows() {
            s[(i, i)] += delta;
        }
        Ok(CovarianceEstimate::Covariance(s))
    }
}

/// SG-PALM fit of the Sylvester precision, rescaled per call from `c`.
#[derive(Debug, Clone)]
pub struct SgPalmEstimator {
    pub kind: PenaltyKind,
    pub lambda_scale: f64,
    pub shape: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl SgPalmEstimator {
    pub fn new(kind: PenaltyKind, lambda_scale: f64) -> Self {
        Self {
            kind,
            lambda_scale,
            shape: kind.default_shape(),
            max_iters: 200,
            rel_tol: 1e-6,
        }
    }
}

impl CovarianceEstimator for SgPalmEstimator {
    fn name(&self) -> &str {
        "sgpalm"
    }

    fn estimate(&self, anomalies: &SampleSet) -> Result<CovarianceEstimate> {
        let pens = theorem_penalties(self.kind, self.lambda_scale, self.shape, anomalies)?;
        let cfg = SolverConfig {
            max_iters: self.max_iters,
            rel_tol: self.rel_tol,
            ..SolverConfig::new(pens)
        };
        let (f, _) = sgpalm::fit(anomalies, &cfg)?;
        Ok(CovarianceEstimate::Precision(PrecisionOperator::SquaredSum {
            diag: None,
            op: KronSumOperator::from_factors(&f),
        }))
    }
}

/// SyGlasso fit; the precision is `(diag(W) + (+)_k Psi_k^off)^2`.
#[derive(Debug, Clone)]
pub struct SyGlassoEstimator {
    pub lambda_scale: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl SyGlassoEstimator {
    pub fn new(lambda_scale: f64) -> Self {
        Self {
            lambda_scale,
            max_iters: 200,
            rel_tol: 1e-6,
        }
    }
}

impl CovarianceEstimator for SyGlassoEstimator {
    fn name(&self) -> &str {
        "syglasso"
    }

    fn estimate(&self, anomalies: &SampleSet) -> Result<CovarianceEstimate> {
        let cfg = SyGlassoConfig {
            max_iters: self.max_iters,
            rel_tol: self.rel_tol,
            w_mode: WMode::Free,
            ..SyGlassoConfig::new(syglasso::scaled_lambdas(self.lambda_scale, anomalies))
        };
        let fit = syglasso::fit(anomalies, &cfg)?;
        let mut off = fit.factors.to_dense();
        off.iter_mut().for_each(|m| m.fill_diagonal(0.0));
        Ok(CovarianceEstimate::Precision(PrecisionOperator::SquaredSum {
            diag: Some(fit.w.into_values()),
            op: KronSumOperator::new(off)?,
        }))
    }
}

/// A `d x r` Kalman gain.
#[derive(Debug, Clone)]
pub enum Gain {
    /// `Sigma H^T (H Sigma H^T + R)^{-1}`, materialized.
    Dense(DMatrix<f64>),
    /// `(Omega + H^T R^{-1} H)^{-1} H^T R^{-1}`, applied by CG.
    Precision {
        omega: PrecisionOperator,
        h: ObservationOperator,
        r_diag: Vec<f64>,
    },
}

impl Gain {
    pub fn dim(&self) -> usize {
        match self {
            Gain::Dense(k) => k.nrows(),
            Gain::Precision { omega, .. } => omega.dim(),
        }
    }

    pub fn rows(&self) -> usize {
        match self {
            Gain::Dense(k) => k.ncols(),
            Gain::Precision { r_diag, .. } => r_diag.len(),
        }
    }

    /// `K e` for an innovation `e` of length `r`.
    pub fn apply(&self, e: &[f64]) -> Result<Vec<f64>> {
        if e.len() != self.rows() {
            return Err(Error::DimensionMismatch(format!(
                "innovation of length {} for a gain with {} columns",
                e.len(),
                self.rows()
            )));
        }
        match self {
            Gain::Dense(k) => Ok((k * DVector::from_column_slice(e)).data.into()),
            Gain::Precision { omega, h, r_diag } => {
                let scaled: Vec<f64> = e.iter().zip(r_diag).map(|(v, r)| v / r).collect();
                let rhs = h.apply_transpose(&scaled);
                let d = rhs.len();
                let mut x = vec![0.0; d];
                let mut tmp = vec![0.0; d];
                conjugate_gradient(
                    |v, out| {
                        omega.apply_into(v, &mut tmp);
                        let hv: Vec<f64> = h.apply(v).iter().zip(r_diag).map(|(a, r)| a / r).collect();
                        let back = h.apply_transpose(&hv);
                        for ((o, t), b) in out.iter_mut().zip(&tmp).zip(back) {
                            *o = t + b;
                        }
                    },
                    &rhs,
                    &mut x,
                    GAIN_CG_TOL,
                    20 * d + 100,
                )
                .map_err(|e| match e {
                    Error::NotConverged { iterations, residual, .. } => Error::NotConverged {
                        what: "precision-form gain solve (estimator may be ill-conditioned)",
                        iterations,
                        residual,
                    },
                    e => e,
                })?;
                Ok(x)
            }
        }
    }

    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        match self {
            Gain::Dense(k) => Ok(k.clone()),
            Gain::Precision { .. } => {
                let (d, r) = (self.dim(), self.rows());
                let mut k = DMatrix::zeros(d, r);
                let mut e = vec![0.0; r];
                for j in 0..r {
                    e[j] = 1.0;
                    k.column_mut(j).copy_from_slice(&self.apply(&e)?);
                    e[j] = 0.0;
                }
                Ok(k)
            }
        }
    }
}

pub fn kalman_gain(estimate: &CovarianceEstimate, obs: &ObservationModel) -> Result<Gain> {
    obs.validate()?;
    let d = obs.dim();
    match estimate {
        CovarianceEstimate::Covariance(sigma) => {
            if sigma.nrows() != d || sigma.ncols() != d {
                return Err(Error::DimensionMismatch(format!("{}x{} covariance for dimension {d}", sigma.nrows(), sigma.ncols())));
            }
            let h = obs.h.to_dense();
            let hs = &h * sigma;
            let mut s = &hs * h.transpose();
            for (i, r) in obs.r_diag.iter().enumerate() {
                s[(i, i)] += r;
            }
            let s = (&s + s.transpose()) * 0.5;
            let chol = s
                .cholesky()
                .ok_or_else(|| Error::NotPositiveDefinite("innovation covariance H Sigma H^T + R".into()))?;
            Ok(Gain::Dense(chol.solve(&hs).transpose()))
        }
        CovarianceEstimate::Precision(omega) => {
            if omega.dim() != d {
                return Err(Error::DimensionMismatch(format!("precision of dimension {} for state dimension {d}", omega.dim())));
            }
            Ok(Gain::Precision {
                omega: omega.clone(),
                h: obs.h.clone(),
                r_diag: obs.r_diag.clone(),
            })
        }
    }
}

/// Evolves every member one step with independent `N(0, Q)` forcing drawn
/// per `(seed, step, member)`.
pub fn forecast(ens: &EnsembleState, dynamics: &dyn Dynamics, q_diag: &[f64], seed: u64) -> Result<EnsembleState> {
    let d = ens.dim();
    if dynamics.dim() != d || q_diag.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "ensemble of dimension {d}, dynamics {}, Q {}",
            dynamics.dim(),
            q_diag.len()
        )));
    }
    let t = ens.t + 1;
    let q_std: Vec<f64> = q_diag.iter().map(|q| q.sqrt()).collect();
    let members = ens
        .members
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut r = rng::substream(seed, tag::FORECAST, t as u64, i as u64);
            let noise: Vec<f64> = rng::normal_vec(&mut r, d, 1.0).iter().zip(&q_std).map(|(z, s)| z * s).collect();
            dynamics.step(x, &noise, t)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EnsembleState { members, t })
}

/// `x_i + K (y + v_i - H x_i)` with `v_i ~ N(0, R)` drawn per
/// `(seed, step, member)`; `seed = None` disables the perturbations.
pub fn analysis_update(
    ens: &EnsembleState,
    gain: &Gain,
    y: &[f64],
    obs: &ObservationModel,
    seed: Option<u64>,
) -> Result<EnsembleState> {
    let r = obs.rows();
    if y.len() != r || gain.rows() != r || gain.dim() != ens.dim() || obs.dim() != ens.dim() {
        return Err(Error::DimensionMismatch(format!(
            "{} observations, gain {}x{}, ensemble dimension {}",
            y.len(),
            gain.dim(),
            gain.rows(),
            ens.dim()
        )));
    }
    let r_std: Vec<f64> = obs.r_diag.iter().map(|v| v.sqrt()).collect();
    let members = ens
        .members
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut innov: Vec<f64> = y.iter().zip(obs.h.apply(x)).map(|(y, hx)| y - hx).collect();
            if let Some(s) = seed {
                let mut rr = rng::substream(s, tag::ANALYSIS, ens.t as u64, i as u64);
                for (e, (z, sd)) in innov.iter_mut().zip(rng::normal_vec(&mut rr, r, 1.0).iter().zip(&r_std)) {
                    *e += z * sd;
                }
            }
            if r == 0 {
                return Ok(x.clone());
            }
            let dx = gain.apply(&innov)?;
            Ok(x.iter().zip(dx).map(|(a, b)| a + b).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EnsembleState { members, t: ens.t })
}

/// What one assimilation cycle did besides moving the ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleInfo {
    pub estimator_seconds: f64,
    /// `||H mean - y||` before and after the analysis.
    pub forecast_residual: f64,
    pub analysis_residual: f64,
}

fn residual_norm(obs: &ObservationModel, x: &[f64], y: &[f64]) -> f64 {
    obs.h.apply(x).iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// One forecast, estimate, gain and update cycle. `reuse` holds the last
/// estimate and is refreshed when `refit` is set or it is empty.
#[allow(clippy::too_many_arguments)]
pub fn assimilate(
    ens: &EnsembleState,
    dynamics: &dyn Dynamics,
    obs: &ObservationModel,
    estimator: &dyn CovarianceEstimator,
    y: &[f64],
    seed: u64,
    reuse: &mut Option<CovarianceEstimate>,
    refit: bool,
) -> Result<(EnsembleState, CycleInfo)> {
    let fc = forecast(ens, dynamics, &obs.q_diag, seed)?;
    let mut secs = 0.0;
    if refit || reuse.is_none() {
        let start = Instant::now();
        let anomalies = fc.anomalies(&dynamics.dims())?;
        *reuse = Some(estimator.estimate(&anomalies)?);
        secs = start.elapsed().as_secs_f64();
    }
    let gain = kalman_gain(reuse.as_ref().expect("estimate present"), obs)?;
    let an = analysis_update(&fc, &gain, y, obs, Some(seed))?;
    let info = CycleInfo {
        estimator_seconds: secs,
        forecast_residual: residual_norm(obs, &fc.mean(), y),
        analysis_residual: residual_norm(obs, &an.mean(), y),
    };
    Ok((an, info))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub rmse_mean: f64,
    pub rmse_member_p05: f64,
    pub rmse_member_p95: f64,
    pub estimator_seconds: f64,
    pub forecast_residual: f64,
    pub analysis_residual: f64,
}

pub const METRICS_HEADER: &str = "step,rmse_mean,rmse_member_p05,rmse_member_p95,estimator_seconds";

/// Metrics CSV with the five public columns.
pub fn metrics_csv(rows: &[StepMetrics]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for m in rows {
        let _ = writeln!(
            s,
            "{},{:.16e},{:.16e},{:.16e},{:.16e}",
            m.step, m.rmse_mean, m.rmse_member_p05, m.rmse_member_p95, m.estimator_seconds
        );
    }
    s
}

fn rmse(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64).sqrt()
}

/// Linear-interpolation percentile of `v`, `p` in `[0, 1]`.
pub fn percentile(v: &[f64], p: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = p * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub grid: GridSpec,
    pub model: DynamicsModel,
    pub members: usize,
    /// Fraction of grid points observed.
    pub obs_frac: f64,
    pub obs_noise_std: f64,
    pub seed: u64,
    /// Re-estimate every this many steps.
    pub refit_every: usize,
    /// Record estimator wall time; off gives byte-reproducible metrics.
    pub timing: bool,
    pub keep_ensembles: bool,
}

impl FilterConfig {
    pub fn new(grid: GridSpec, model: DynamicsModel, members: usize, seed: u64) -> Self {
        Self {
            grid,
            model,
            members,
            obs_frac: 0.5,
            obs_noise_std: 0.1,
            seed,
            refit_every: 1,
            timing: true,
            keep_ensembles: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FilterReport {
    pub metrics: Vec<StepMetrics>,
    pub truth: Trajectory,
    pub observations: Vec<Vec<f64>>,
    pub obs: ObservationModel,
    /// Analysis ensembles per step when requested.
    pub ensembles: Vec<EnsembleState>,
}

/// Simulates truth and observations, then tracks them from an all-zero
/// ensemble (the truth starts from the zero field).
pub fn run_filter(config: &FilterConfig, estimator: &dyn CovarianceEstimator) -> Result<FilterReport> {
    if config.refit_every == 0 {
        return Err(Error::InvalidParameter("refit interval must be positive".into()));
    }
    if !(config.obs_noise_std > 0.0) {
        return Err(Error::InvalidParameter("observation noise std must be positive".into()));
    }
    let truth = simulate(&config.grid, &config.model, config.seed)?;
    let prop = Propagator::new(&config.grid, &config.model)?;
    let d = config.grid.dim();
    let h = ObservationOperator::random_mask(d, config.obs_frac, config.seed)?;
    let obs = ObservationModel::isotropic(h, config.obs_noise_std.powi(2), config.model.sigma_w.powi(2))?;
    let observations: Vec<Vec<f64>> = truth
        .states
        .iter()
        .enumerate()
        .map(|(t, u)| {
            let mut r = rng::substream(config.seed, tag::OBSERVATION, (t + 1) as u64, 0);
            obs.h
                .apply(u)
                .iter()
                .zip(rng::normal_vec(&mut r, obs.rows(), config.obs_noise_std))
                .map(|(a, v)| a + v)
                .collect()
        })
        .collect();

    let mut ens = EnsembleState::zeros(config.members, d)?;
    let mut reuse = None;
    let mut metrics = Vec::with_capacity(truth.states.len());
    let mut ensembles = Vec::new();
    for (t, (u, y)) in truth.states.iter().zip(&observations).enumerate() {
        let refit = t % config.refit_every == 0;
        let (next, info) = assimilate(&ens, &prop, &obs, estimator, y, config.seed, &mut reuse, refit)?;
        ens = next;
        let member_rmse: Vec<f64> = ens.members.iter().map(|x| rmse(x, u)).collect();
        metrics.push(StepMetrics {
            step: t + 1,
            rmse_mean: rmse(&ens.mean(), u),
            rmse_member_p05: percentile(&member_rmse, 0.05),
            rmse_member_p95: percentile(&member_rmse, 0.95),
            estimator_seconds: if config.timing { info.estimator_seconds } else { 0.0 },
            forecast_residual: info.forecast_residual,
            analysis_residual: info.analysis_residual,
        });
        if config.keep_ensembles {
            ensembles.push(ens.clone());
        }
    }
    Ok(FilterReport {
        metrics,
        truth,
        observations,
        obs,
        ensembles,
    })
}

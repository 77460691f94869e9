//! Sample sets and the Gram statistics consumed by the solvers.
//!
//! Samples are stored stacked: a set of `N` tensors with dims `(d_1..d_K)`
//! is one buffer laid out as a `(d_1, .., d_K, N)` tensor, so every batched
//! mode product runs as a few large GEMMs instead of `N` small ones.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor::{
    mode_product_raw, unfold_cross_raw, DenseTensor, KronSumOperator, SylvesterFactors,
    DEFAULT_DENSE_CAP,
};

/// `N >= 1` tensors sharing dims.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    dims: Vec<usize>,
    n: usize,
    values: Vec<f64>,
}

impl SampleSet {
    pub fn new(samples: &[DenseTensor]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidParameter("a sample set needs N >= 1".into()))?;
        let dims = first.dims().to_vec();
        let mut values = Vec::with_capacity(first.len() * samples.len());
        for (i, s) in samples.iter().enumerate() {
            if s.dims() != dims.as_slice() {
                return Err(Error::DimensionMismatch(format!(
                    "sample {i} has dims {:?}, expected {dims:?}",
                    s.dims()
                )));
            }
            values.extend_from_slice(s.values());
        }
        Ok(Self {
            dims,
            n: samples.len(),
            values,
        })
    }

    /// Builds a set from `n` vec-ordered samples laid end to end.
    pub fn from_stacked(dims: Vec<usize>, n: usize, values: Vec<f64>) -> Result<Self> {
        // validates dims
        DenseTensor::zeros(dims.clone())?;
        if n == 0 {
            return Err(Error::InvalidParameter("a sample set needs N >= 1".into()));
        }
        let d: usize = dims.iter().product();
        if values.len() != d * n {
            return Err(Error::DimensionMismatch(format!(
                "{n} samples of dims {dims:?} need {} values, got {}",
                d * n,
                values.len()
            )));
        }
        Ok(Self { dims, n, values })
    }

    /// Treats the last mode of `t` as the sample index.
    pub fn from_tensor_last_mode(t: &DenseTensor) -> Result<Self> {
        if t.order() < 2 {
            return Err(Error::InvalidParameter(
                "a stacked sample tensor needs at least two modes".into(),
            ));
        }
        let (n, dims) = t.dims().split_last().expect("order >= 2");
        Self::from_stacked(dims.to_vec(), *n, t.values().to_vec())
    }

    /// Inverse of [`SampleSet::from_tensor_last_mode`].
    pub fn to_tensor(&self) -> DenseTensor {
        let mut dims = self.dims.clone();
        dims.push(self.n);
        DenseTensor::new(dims, self.values.clone()).expect("consistent sample set")
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Dimension `d` of one vectorized sample.
    pub fn dim(&self) -> usize {
        self.values.len() / self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sample_values(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn sample(&self, i: usize) -> DenseTensor {
        DenseTensor::new(self.dims.clone(), self.sample_values(i).to_vec()).expect("consistent")
    }

    /// Dims with the sample mode appended.
    pub(crate) fn stacked_dims(&self) -> Vec<usize> {
        let mut ext = self.dims.clone();
        ext.push(self.n);
        ext
    }

    /// Copy with the per-entry sample mean removed.
    pub fn centered(&self) -> Self {
        let d = self.dim();
        let mut mean = vec![0.0; d];
        for chunk in self.values.chunks(d) {
            for (m, v) in mean.iter_mut().zip(chunk) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= self.n as f64;
        }
        let mut values = self.values.clone();
        for chunk in values.chunks_mut(d) {
            for (v, m) in chunk.iter_mut().zip(&mean) {
                *v -= m;
            }
        }
        Self {
            dims: self.dims.clone(),
            n: self.n,
            values,
        }
    }

    fn check_mode(&self, k: usize) -> Result<()> {
        if k >= self.order() {
            return Err(Error::ModeOutOfRange {
                mode: k,
                order: self.order(),
            });
        }
        Ok(())
    }

    fn check_factors(&self, factors: &SylvesterFactors) -> Result<()> {
        if factors.dims() != self.dims {
            return Err(Error::DimensionMismatch(format!(
                "factor dims {:?} do not match data dims {:?}",
                factors.dims(),
                self.dims
            )));
        }
        Ok(())
    }

    /// `X^i x_k A` for every sample, stacked.
    pub(crate) fn mode_product_all(&self, a: &DMatrix<f64>, k: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.values.len() / self.dims[k] * a.nrows()];
        mode_product_raw(&self.stacked_dims(), &self.values, a, k, 0.0, &mut out);
        out
    }

    /// `(+)_k Psi_k vec(X^i)` for every sample, stacked.
    pub(crate) fn kron_sum_all(&self, op: &KronSumOperator) -> Vec<f64> {
        let mut out = vec![0.0; self.values.len()];
        op.apply_batch(&self.values, self.n, &mut out);
        out
    }

    /// `(1/N) sum_i Y^i_(k) X^i_(k)^T` for a stacked `Y` shaped like the data.
    pub(crate) fn cross_with(&self, y: &[f64], k: usize) -> DMatrix<f64> {
        unfold_cross_raw(&self.stacked_dims(), y, &self.values, k) / self.n as f64
    }
}

/// `S_k = (1/N) sum_i X^i_(k) X^i_(k)^T`.
pub fn mode_gram(data: &SampleSet, k: usize) -> Result<DMatrix<f64>> {
    data.check_mode(k)?;
    let g = data.cross_with(&data.values, k);
    // Exact symmetry regardless of GEMM summation order.
    Ok((&g + g.transpose()) * 0.5)
}

/// `S_{j,k} = (1/N) sum_i (X^i x_j Psi_j)_(k) X^i_(k)^T`, linear in `Psi_j`.
pub fn cross_gram(data: &SampleSet, factors: &SylvesterFactors, j: usize, k: usize) -> Result<DMatrix<f64>> {
    data.check_mode(j)?;
    data.check_mode(k)?;
    data.check_factors(factors)?;
    if j == k {
        return Err(Error::InvalidParameter(format!(
            "cross Gram needs distinct modes, got j = k = {j}"
        )));
    }
    let y = data.mode_product_all(&factors.factors()[j].to_dense(), j);
    Ok(data.cross_with(&y, k))
}

/// `S = (1/N) sum_i vec(X^i) vec(X^i)^T`, capped at [`DEFAULT_DENSE_CAP`].
pub fn sample_covariance(data: &SampleSet) -> Result<DMatrix<f64>> {
    let d = data.dim();
    if d > DEFAULT_DENSE_CAP {
        return Err(Error::DenseCapExceeded {
            dim: d,
            cap: DEFAULT_DENSE_CAP,
        });
    }
    let x = DMatrix::from_column_slice(d, data.n(), data.values());
    let s = &x * x.transpose() / data.n() as f64;
    Ok((&s + s.transpose()) * 0.5)
}

/// Data statistics shared by the solvers: the factor-independent mode Grams,
/// plus access to the samples for the factor-dependent cross terms.
#[derive(Debug, Clone)]
pub struct GramSet<'a> {
    data: &'a SampleSet,
    mode_grams: Vec<DMatrix<f64>>,
}

impl<'a> GramSet<'a> {
    pub fn new(data: &'a SampleSet) -> Self {
        let mode_grams = (0..data.order())
            .map(|k| mode_gram(data, k).expect("mode in range"))
            .collect();
        Self { data, mode_grams }
    }

    pub fn data(&self) -> &'a SampleSet {
        self.data
    }

    pub fn mode_grams(&self) -> &[DMatrix<f64>] {
        &self.mode_grams
    }

    pub fn mode_gram(&self, k: usize) -> &DMatrix<f64> {
        &self.mode_grams[k]
    }

    pub fn cross_gram(&self, factors: &SylvesterFactors, j: usize, k: usize) -> Result<DMatrix<f64>> {
        cross_gram(self.data, factors, j, k)
    }
}

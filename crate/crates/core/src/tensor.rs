//! K-way dense tensors, symmetric sparse factors and the Kronecker algebra
//! shared by every estimator.
//!
//! Storage order is fixed: the first mode varies fastest, so the flat value
//! array of a tensor *is* its vectorization and a `d1 x d2` tensor is a
//! column-major matrix. Mode indices are zero-based throughout the crate.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest dimension `d` for which Kronecker structures may be materialized
/// densely. Dense forms exist for test oracles and desk-scale diagnostics.
pub const DEFAULT_DENSE_CAP: usize = 4096;

/// Splits `dims` around mode `k` into `(left, d_k, right)` extents.
pub(crate) fn mode_layout(dims: &[usize], k: usize) -> (usize, usize, usize) {
    let left = dims[..k].iter().product();
    let right = dims[k + 1..].iter().product();
    (left, dims[k], right)
}

/// Raw strided GEMM: `c = alpha * a * b + beta * c`.
///
/// # Safety contract
/// Callers pass slices long enough for the stated extents and strides; the
/// extents are checked with debug assertions only.
#[allow(clippy::too_many_arguments)]
fn gemm_strided(
    m: usize,
    k: usize,
    n: usize,
    a: (&[f64], isize, isize),
    b: (&[f64], isize, isize),
    beta: f64,
    c: (&mut [f64], isize, isize),
) {
    let span = |rows: usize, cols: usize, rs: isize, cs: isize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) as isize * rs + (cols - 1) as isize * cs + 1
        }
    };
    assert!(span(m, k, a.1, a.2) as usize <= a.0.len());
    assert!(span(k, n, b.1, b.2) as usize <= b.0.len());
    assert!(span(m, n, c.1, c.2) as usize <= c.0.len());
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above guarantee every addressed element lies inside
    // the corresponding slice; `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1,
            a.2,
            b.0.as_ptr(),
            b.1,
            b.2,
            beta,
            c.0.as_mut_ptr(),
            c.1,
            c.2,
        );
    }
}

/// `out = beta * out + X x_k A` on raw vec-ordered storage.
///
/// `A` is `J x d_k`; `out` has the shape of `X` with `d_k` replaced by `J`.
pub(crate) fn mode_product_raw(
    dims: &[usize],
    x: &[f64],
    a: &DMatrix<f64>,
    k: usize,
    beta: f64,
    out: &mut [f64],
) {
    let (left, dk, right) = mode_layout(dims, k);
    let j = a.nrows();
    debug_assert_eq!(a.ncols(), dk);
    debug_assert_eq!(x.len(), left * dk * right);
    debug_assert_eq!(out.len(), left * j * right);
    let a_data = a.as_slice();
    if left <= right {
        // One (J x d_k) * (d_k x right) product per leading index.
        for l in 0..left {
            gemm_strided(
                j,
                dk,
                right,
                (a_data, 1, j as isize),
                (&x[l..], left as isize, (left * dk) as isize),
                beta,
                (&mut out[l..], left as isize, (left * j) as isize),
            );
        }
    } else {
        // One (left x d_k) * (d_k x J) product per trailing index.
        for r in 0..right {
            gemm_strided(
                left,
                dk,
                j,
                (&x[r * left * dk..], 1, left as isize),
                (a_data, j as isize, 1),
                beta,
                (&mut out[r * left * j..], 1, left as isize),
            );
        }
    }
}

/// Mode-`k` cross product `Y_(k) X_(k)^T` of two equally shaped tensors.
pub(crate) fn unfold_cross_raw(dims: &[usize], y: &[f64], x: &[f64], k: usize) -> DMatrix<f64> {
    let (left, dk, right) = mode_layout(dims, k);
    debug_assert_eq!(x.len(), left * dk * right);
    debug_assert_eq!(y.len(), x.len());
    let mut g = DMatrix::<f64>::zeros(dk, dk);
    let g_data = g.as_mut_slice();
    if left <= right {
        for l in 0..left {
            gemm_strided(
                dk,
                right,
                dk,
                (&y[l..], left as isize, (left * dk) as isize),
                (&x[l..], (left * dk) as isize, left as isize),
                1.0,
                (&mut *g_data, 1, dk as isize),
            );
        }
    } else {
        for r in 0..right {
            let off = r * left * dk;
            gemm_strided(
                dk,
                left,
                dk,
                (&y[off..], left as isize, 1),
                (&x[off..], 1, left as isize),
                1.0,
                (&mut *g_data, 1, dk as isize),
            );
        }
    }
    g
}

/// A K-way array of reals stored in vectorization order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    values: Vec<f64>,
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        validate_dims(&dims)?;
        let d: usize = dims.iter().product();
        if values.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "tensor of dims {dims:?} needs {d} values, got {}",
                values.len()
            )));
        }
        Ok(Self { dims, values })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        validate_dims(&dims)?;
        let d = dims.iter().product();
        Ok(Self {
            dims,
            values: vec![0.0; d],
        })
    }

    /// Builds a tensor by evaluating `f` at every multi-index.
    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        validate_dims(&dims)?;
        let d: usize = dims.iter().product();
        let mut idx = vec![0usize; dims.len()];
        let mut values = Vec::with_capacity(d);
        for _ in 0..d {
            values.push(f(&idx));
            increment_index(&mut idx, &dims);
        }
        Ok(Self { dims, values })
    }

    /// Inverse of [`DenseTensor::vec`].
    pub fn devec(dims: Vec<usize>, v: &[f64]) -> Result<Self> {
        Self::new(dims, v.to_vec())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// `vec(t)`: element `(i1, .., iK)` lands at `i1 + d1*i2 + d1*d2*i3 + ..`.
    pub fn vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        flat_index(&self.dims, idx)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.values[self.flat_index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let i = self.flat_index(idx);
        self.values[i] = value;
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

    /// Mode-`k` unfolding: a `d_k x (d / d_k)` matrix whose columns are the
    /// mode-`k` fibers, ordered so that `vec(matricize(t, 0)) == vec(t)`.
    pub fn matricize(&self, k: usize) -> Result<DMatrix<f64>> {
        self.check_mode(k)?;
        let (left, dk, right) = mode_layout(&self.dims, k);
        Ok(DMatrix::from_fn(dk, left * right, |i, col| {
            let (l, r) = (col % left, col / left);
            self.values[l + left * (i + dk * r)]
        }))
    }

    /// Inverse of [`DenseTensor::matricize`].
    pub fn fold(m: &DMatrix<f64>, dims: Vec<usize>, k: usize) -> Result<Self> {
        validate_dims(&dims)?;
        if k >= dims.len() {
            return Err(Error::ModeOutOfRange {
                mode: k,
                order: dims.len(),
            });
        }
        let (left, dk, right) = mode_layout(&dims, k);
        if m.nrows() != dk || m.ncols() != left * right {
            return Err(Error::DimensionMismatch(format!(
                "cannot fold a {}x{} matrix into dims {dims:?} along mode {k}",
                m.nrows(),
                m.ncols()
            )));
        }
        let mut values = vec![0.0; left * dk * right];
        for col in 0..left * right {
            let (l, r) = (col % left, col / left);
            for i in 0..dk {
                values[l + left * (i + dk * r)] = m[(i, col)];
            }
        }
        Ok(Self { dims, values })
    }

    /// `t x_k A` for `A` of shape `J x d_k`.
    pub fn kmode_product(&self, a: &DMatrix<f64>, k: usize) -> Result<Self> {
        self.check_mode(k)?;
        if a.ncols() != self.dims[k] {
            return Err(Error::DimensionMismatch(format!(
                "mode-{k} product needs a matrix with {} columns, got {}",
                self.dims[k],
                a.ncols()
            )));
        }
        let mut dims = self.dims.clone();
        dims[k] = a.nrows();
        if dims[k] == 0 {
            return Err(Error::DimensionMismatch(
                "mode product with an empty matrix".into(),
            ));
        }
        let mut values = vec![0.0; dims.iter().product()];
        mode_product_raw(&self.dims, &self.values, a, k, 0.0, &mut values);
        Ok(Self { dims, values })
    }
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.is_empty() {
        return Err(Error::InvalidParameter("a tensor needs at least one mode".into()));
    }
    if dims.contains(&0) {
        return Err(Error::InvalidParameter(format!(
            "every tensor dimension must be positive, got {dims:?}"
        )));
    }
    Ok(())
}

pub(crate) fn flat_index(dims: &[usize], idx: &[usize]) -> usize {
    debug_assert_eq!(dims.len(), idx.len());
    let mut flat = 0;
    let mut stride = 1;
    for (&i, &d) in idx.iter().zip(dims) {
        debug_assert!(i < d);
        flat += i * stride;
        stride *= d;
    }
    flat
}

/// Multi-index of a flat vec-order position.
pub fn multi_index(dims: &[usize], mut flat: usize) -> Vec<usize> {
    dims.iter()
        .map(|&d| {
            let i = flat % d;
            flat /= d;
            i
        })
        .collect()
}

pub(crate) fn increment_index(idx: &mut [usize], dims: &[usize]) {
    for (i, &d) in idx.iter_mut().zip(dims) {
        *i += 1;
        if *i < d {
            return;
        }
        *i = 0;
    }
}

/// Symmetric sparse matrix storing the upper triangle and diagonal only.
#[derive(Debug, Clone, PartialEq)]
pub struct SymSparseMatrix {
    dim: usize,
    upper: BTreeMap<(usize, usize), f64>,
}

impl SymSparseMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            upper: BTreeMap::new(),
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Stores the symmetric part `(M + M^T) / 2`, dropping exact zeros.
    pub fn from_dense_symmetrized(m: &DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let mut out = Self::zeros(m.nrows());
        for j in 0..m.ncols() {
            for i in 0..=j {
                out.set(i, j, 0.5 * (m[(i, j)] + m[(j, i)]));
            }
        }
        Ok(out)
    }

    /// Like [`Self::from_dense_symmetrized`] but rejects inputs whose
    /// asymmetry exceeds `tol`.
    pub fn from_dense(m: &DMatrix<f64>, tol: f64) -> Result<Self> {
        if m.is_square() {
            for j in 0..m.ncols() {
                for i in 0..j {
                    if (m[(i, j)] - m[(j, i)]).abs() > tol {
                        return Err(Error::InvalidParameter(format!(
                            "matrix is not symmetric at ({i},{j}): {} vs {}",
                            m[(i, j)],
                            m[(j, i)]
                        )));
                    }
                }
            }
        }
        Self::from_dense_symmetrized(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let key = if i <= j { (i, j) } else { (j, i) };
        self.upper.get(&key).copied().unwrap_or(0.0)
    }

    /// Sets both `(i, j)` and `(j, i)`.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        assert!(i < self.dim && j < self.dim, "index out of bounds");
        let key = if i <= j { (i, j) } else { (j, i) };
        if value == 0.0 {
            self.upper.remove(&key);
        } else {
            self.upper.insert(key, value);
        }
    }

    /// Stored `(i, j, value)` triples with `i <= j`.
    pub fn iter_upper(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.upper.iter().map(|(&(i, j), &v)| (i, j, v))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    /// Number of structurally nonzero off-diagonal pairs `i < j`.
    pub fn nnz_offdiag(&self) -> usize {
        self.upper.keys().filter(|(i, j)| i != j).count()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (i, j, v) in self.iter_upper() {
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        m
    }

    /// Copy with the diagonal removed.
    pub fn offdiag(&self) -> Self {
        Self {
            dim: self.dim,
            upper: self
                .upper
                .iter()
                .filter(|((i, j), _)| i != j)
                .map(|(&k, &v)| (k, v))
                .collect(),
        }
    }
}

/// The ordered factors `Psi_1 .. Psi_K` of a Sylvester model, with
/// precision `Omega = (Psi_1 (+) .. (+) Psi_K)^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SylvesterFactors {
    factors: Vec<SymSparseMatrix>,
}

impl SylvesterFactors {
    pub fn new(factors: Vec<SymSparseMatrix>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidParameter("at least one factor is required".into()));
        }
        if factors.iter().any(|f| f.dim() == 0) {
            return Err(Error::InvalidParameter("factor dimensions must be positive".into()));
        }
        Ok(Self { factors })
    }

    pub fn identities(dims: &[usize]) -> Result<Self> {
        Self::new(dims.iter().map(|&d| SymSparseMatrix::identity(d)).collect())
    }

    /// Builds factors from dense matrices, symmetrizing each.
    pub fn from_dense(mats: &[DMatrix<f64>]) -> Result<Self> {
        Self::new(
            mats.iter()
                .map(SymSparseMatrix::from_dense_symmetrized)
                .collect::<Result<_>>()?,
        )
    }

    pub fn factors(&self) -> &[SymSparseMatrix] {
        &self.factors
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.dim()).collect()
    }

    pub fn total_dim(&self) -> usize {
        self.factors.iter().map(|f| f.dim()).product()
    }

    pub fn to_dense(&self) -> Vec<DMatrix<f64>> {
        self.factors.iter().map(|f| f.to_dense()).collect()
    }

    /// The diagonal Kronecker sum `W_{i1..iK} = sum_k (Psi_k)_{ik,ik}`.
    pub fn w_tensor(&self) -> DenseTensor {
        let diags: Vec<Vec<f64>> = self.factors.iter().map(|f| f.diagonal()).collect();
        w_from_diagonals(&diags)
    }
}

/// Tensor of sums of per-mode diagonal entries.
pub(crate) fn w_from_diagonals(diags: &[Vec<f64>]) -> DenseTensor {
    let dims: Vec<usize> = diags.iter().map(|d| d.len()).collect();
    DenseTensor::from_fn(dims, |idx| {
        idx.iter().zip(diags).map(|(&i, d)| d[i]).sum()
    })
    .expect("factor dimensions are positive")
}

/// Matrix-free application of a Kronecker sum `(+)_k Psi_k`.
///
/// Works on single vectors and on stacks of vectors laid out as a tensor
/// with one extra trailing (sample) mode.
#[derive(Debug, Clone)]
pub struct KronSumOperator {
    factors: Vec<DMatrix<f64>>,
    dims: Vec<usize>,
}

impl KronSumOperator {
    pub fn new(factors: Vec<DMatrix<f64>>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidParameter("at least one factor is required".into()));
        }
        for f in &factors {
            if !f.is_square() || f.nrows() == 0 {
                return Err(Error::DimensionMismatch(format!(
                    "Kronecker-sum factors must be non-empty squares, got {}x{}",
                    f.nrows(),
                    f.ncols()
                )));
            }
        }
        let dims = factors.iter().map(|f| f.nrows()).collect();
        Ok(Self { factors, dims })
    }

    pub fn from_factors(factors: &SylvesterFactors) -> Self {
        Self::new(factors.to_dense()).expect("validated factors")
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn factors(&self) -> &[DMatrix<f64>] {
        &self.factors
    }

    /// `out = (+)_k Psi_k x` for `x` holding `batch` stacked vectors.
    pub fn apply_batch(&self, x: &[f64], batch: usize, out: &mut [f64]) {
        let mut ext = self.dims.clone();
        ext.push(batch);
        debug_assert_eq!(x.len(), self.dim() * batch);
        for (k, f) in self.factors.iter().enumerate() {
            mode_product_raw(&ext, x, f, k, if k == 0 { 0.0 } else { 1.0 }, out);
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "Kronecker sum of dimension {} applied to a vector of length {}",
                self.dim(),
                x.len()
            )));
        }
        let mut out = vec![0.0; x.len()];
        self.apply_batch(x, 1, &mut out);
        Ok(out)
    }
}

/// `(+)_k Psi_k x`, computed as `vec(sum_k X x_k Psi_k)` without forming
/// the `d x d` matrix.
pub fn kron_sum_apply(factors: &SylvesterFactors, x: &[f64]) -> Result<Vec<f64>> {
    KronSumOperator::from_factors(factors).apply(x)
}

/// Dense Kronecker sum `sum_k I_[d_{k+1:K}] (x) Psi_k (x) I_[d_{1:k-1}]`,
/// refused above [`DEFAULT_DENSE_CAP`].
pub fn kron_sum_dense(factors: &SylvesterFactors) -> Result<DMatrix<f64>> {
    kron_sum_dense_with_cap(&factors.to_dense(), DEFAULT_DENSE_CAP)
}

pub fn kron_sum_dense_with_cap(factors: &[DMatrix<f64>], cap: usize) -> Result<DMatrix<f64>> {
    let d: usize = factors.iter().map(|f| f.nrows()).product();
    if d > cap {
        return Err(Error::DenseCapExceeded { dim: d, cap });
    }
    let mut sum = DMatrix::zeros(d, d);
    for k in 0..factors.len() {
        // Later modes sit on the left of the Kronecker chain.
        let mut term = DMatrix::<f64>::identity(1, 1);
        for (m, f) in factors.iter().enumerate().rev() {
            let block = if m == k {
                f.clone()
            } else {
                DMatrix::identity(f.nrows(), f.nrows())
            };
            term = term.kronecker(&block);
        }
        sum += term;
    }
    Ok(sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(dims: Vec<usize>, rng: &mut ChaCha8Rng) -> DenseTensor {
        let d = dims.iter().product();
        DenseTensor::new(dims, (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn vec_of_two_by_two() {
        // columns are mode-1 fibers: [[1,3],[2,4]]
        let t = DenseTensor::from_fn(vec![2, 2], |i| [[1.0, 3.0], [2.0, 4.0]][i[0]][i[1]]).unwrap();
        assert_eq!(t.vec().as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(
            t.matricize(0).unwrap(),
            DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 2.0, 4.0])
        );
        assert_eq!(
            t.matricize(1).unwrap(),
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0])
        );
    }

    #[test]
    fn vec_matches_index_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_tensor(vec![3, 4, 2], &mut rng);
        let v = t.vec();
        for i1 in 0..3 {
            for i2 in 0..4 {
                for i3 in 0..2 {
                    assert_eq!(v[i1 + 3 * i2 + 12 * i3], t.get(&[i1, i2, i3]));
                }
            }
        }
        assert_eq!(multi_index(&[3, 4, 2], 1 + 3 * 2 + 12), vec![1, 2, 1]);
    }

    #[test]
    fn matricize_columns_are_fibers() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = random_tensor(vec![3, 4, 2], &mut rng);
        let dims = [3usize, 4, 2];
        for k in 0..3 {
            let m = t.matricize(k).unwrap();
            // enumerate the other modes, first fastest
            let others: Vec<usize> = (0..3).filter(|&m| m != k).collect();
            let mut col = 0;
            for b in 0..dims[others[1]] {
                for a in 0..dims[others[0]] {
                    for i in 0..dims[k] {
                        let mut idx = [0usize; 3];
                        idx[others[0]] = a;
                        idx[others[1]] = b;
                        idx[k] = i;
                        assert_eq!(m[(i, col)], t.get(&idx));
                    }
                    col += 1;
                }
            }
        }
        assert!(matches!(t.matricize(3), Err(Error::ModeOutOfRange { .. })));
    }

    #[test]
    fn kmode_product_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_tensor(vec![3, 3, 3], &mut rng);
        for k in 0..3 {
            let a = random_matrix(2, 3, &mut rng);
            let p = t.kmode_product(&a, k).unwrap();
            let mut dims = vec![3, 3, 3];
            dims[k] = 2;
            assert_eq!(p.dims(), &dims[..]);
            for flat in 0..p.len() {
                let idx = multi_index(&dims, flat);
                let mut expect = 0.0;
                for ik in 0..3 {
                    let mut src = idx.clone();
                    src[k] = ik;
                    expect += t.get(&src) * a[(idx[k], ik)];
                }
                assert!((p.get(&idx) - expect).abs() < 1e-14);
            }
            let unfolded = p.matricize(k).unwrap();
            assert!((unfolded - &a * t.matricize(k).unwrap()).amax() < 1e-14);
        }
    }

    #[test]
    fn kmode_product_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = random_tensor(vec![4, 3], &mut rng);
        assert_eq!(t.kmode_product(&DMatrix::identity(3, 3), 1).unwrap(), t);
        let a = random_matrix(3, 3, &mut rng);
        assert!(matches!(
            t.kmode_product(&a, 0),
            Err(Error::DimensionMismatch(_))
        ));
        // K = 1 is a matrix-vector product
        let v = random_tensor(vec![5], &mut rng);
        let b = random_matrix(2, 5, &mut rng);
        let p = v.kmode_product(&b, 0).unwrap();
        let mv = &b * v.vec();
        assert!((p.vec() - mv).amax() < 1e-14);
    }

    #[test]
    fn kron_sum_dense_small_cases() {
        let f = SylvesterFactors::identities(&[2, 2]).unwrap();
        assert_eq!(kron_sum_dense(&f).unwrap(), DMatrix::identity(4, 4) * 2.0);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_matrix(2, 2, &mut rng);
        let b = random_matrix(3, 3, &mut rng);
        let dense = kron_sum_dense_with_cap(&[a.clone(), b.clone()], 4096).unwrap();
        let expect = DMatrix::<f64>::identity(3, 3).kronecker(&a)
            + b.kronecker(&DMatrix::<f64>::identity(2, 2));
        assert!((dense - expect).amax() < 1e-15);
    }

    #[test]
    fn kron_sum_dense_three_modes_term_by_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (a, b, c) = (
            random_matrix(2, 2, &mut rng),
            random_matrix(3, 3, &mut rng),
            random_matrix(2, 2, &mut rng),
        );
        let i2 = DMatrix::<f64>::identity(2, 2);
        let i3 = DMatrix::<f64>::identity(3, 3);
        let expect = i2.kronecker(&i3).kronecker(&a)
            + i2.kronecker(&b).kronecker(&i2)
            + c.kronecker(&i3).kronecker(&i2);
        let dense = kron_sum_dense_with_cap(&[a, b, c], 4096).unwrap();
        assert!((dense - expect).amax() < 1e-14);
    }

    #[test]
    fn kron_sum_dense_cap_is_enforced() {
        let f = SylvesterFactors::identities(&[8, 8, 8]).unwrap();
        assert!(kron_sum_dense_with_cap(&f.to_dense(), 100).is_err());
    }

    #[test]
    fn kron_sum_apply_trivial_factors() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x: Vec<f64> = (0..24).map(|_| rng.random_range(-1.0..1.0)).collect();
        let zeros = SylvesterFactors::new(vec![SymSparseMatrix::zeros(2), SymSparseMatrix::zeros(3), SymSparseMatrix::zeros(4)]).unwrap();
        assert!(kron_sum_apply(&zeros, &x).unwrap().iter().all(|&v| v == 0.0));
        let ids = SylvesterFactors::identities(&[2, 3, 4]).unwrap();
        let y = kron_sum_apply(&ids, &x).unwrap();
        for (a, b) in y.iter().zip(&x) {
            assert!((a - 3.0 * b).abs() < 1e-15);
        }
        assert!(kron_sum_apply(&ids, &x[..5]).is_err());
    }

    #[test]
    fn sym_sparse_storage() {
        let mut m = SymSparseMatrix::zeros(3);
        m.set(2, 0, 1.5);
        m.set(1, 1, 2.0);
        assert_eq!(m.get(0, 2), 1.5);
        assert_eq!(m.nnz_offdiag(), 1);
        assert_eq!(m.to_dense(), m.to_dense().transpose());
        m.set(0, 2, 0.0);
        assert_eq!(m.nnz_offdiag(), 0);
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.5, 1.0]);
        assert!(SymSparseMatrix::from_dense(&asym, 1e-12).is_err());
    }

    fn small_dims() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(1usize..5, 1..4)
    }

    proptest! {
        #[test]
        fn devec_inverts_vec(dims in small_dims(), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_tensor(dims.clone(), &mut rng);
            let back = DenseTensor::devec(dims, t.vec().as_slice()).unwrap();
            prop_assert_eq!(back, t);
        }

        #[test]
        fn fold_inverts_matricize(dims in small_dims(), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_tensor(dims.clone(), &mut rng);
            for k in 0..dims.len() {
                let m = t.matricize(k).unwrap();
                prop_assert_eq!(&DenseTensor::fold(&m, dims.clone(), k).unwrap(), &t);
            }
        }

        #[test]
        fn kron_sum_apply_matches_dense(dims in small_dims(), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mats: Vec<_> = dims.iter().map(|&d| {
                let a = random_matrix(d, d, &mut rng);
                &a + a.transpose()
            }).collect();
            let f = SylvesterFactors::from_dense(&mats).unwrap();
            let d: usize = dims.iter().product();
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let dense = kron_sum_dense(&f).unwrap();
            prop_assert!((&dense - dense.transpose()).amax() == 0.0);
            let expect = &dense * DVector::from_column_slice(&x);
            let got = kron_sum_apply(&f, &x).unwrap();
            for (g, e) in got.iter().zip(expect.iter()) {
                prop_assert!((g - e).abs() <= 1e-12);
            }
        }
    }
}

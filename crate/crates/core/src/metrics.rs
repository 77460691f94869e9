//! Support-recovery and error metrics.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor::SylvesterFactors;

/// Entries with `|value| > SUPPORT_THRESHOLD` count as edges.
pub const SUPPORT_THRESHOLD: f64 = 1e-8;

/// Floor applied to `log10` relative errors of exact matches.
pub const LOG_ERROR_FLOOR: f64 = -16.0;

/// Per-factor off-diagonal edge masks. Masks are symmetric with a false
/// diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportMask {
    masks: Vec<DMatrix<bool>>,
}

impl SupportMask {
    pub fn new(masks: Vec<DMatrix<bool>>) -> Result<Self> {
        for (k, m) in masks.iter().enumerate() {
            if !m.is_square() {
                return Err(Error::DimensionMismatch(format!("mask {k} is not square")));
            }
            for j in 0..m.ncols() {
                if m[(j, j)] {
                    return Err(Error::InvalidParameter(format!("mask {k} marks diagonal entry {j}")));
                }
                for i in 0..j {
                    if m[(i, j)] != m[(j, i)] {
                        return Err(Error::InvalidParameter(format!("mask {k} is not symmetric at ({i},{j})")));
                    }
                }
            }
        }
        Ok(Self { masks })
    }

    pub fn from_dense(factors: &[DMatrix<f64>], threshold: f64) -> Self {
        Self {
            masks: factors
                .iter()
                .map(|f| DMatrix::from_fn(f.nrows(), f.ncols(), |i, j| i != j && f[(i, j)].abs() > threshold))
                .collect(),
        }
    }

    pub fn from_factors(factors: &SylvesterFactors, threshold: f64) -> Self {
        Self::from_dense(&factors.to_dense(), threshold)
    }

    pub fn masks(&self) -> &[DMatrix<bool>] {
        &self.masks
    }

    pub fn dims(&self) -> Vec<usize> {
        self.masks.iter().map(|m| m.nrows()).collect()
    }

    pub fn edge_count(&self) -> usize {
        self.masks.iter().map(|m| upper(m).filter(|&b| b).count()).sum()
    }

    fn check(&self, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch(format!(
                "support masks have dims {:?} and {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }
}

fn upper(m: &DMatrix<bool>) -> impl Iterator<Item = bool> + '_ {
    (0..m.ncols()).flat_map(move |j| (0..j).map(move |i| m[(i, j)]))
}

/// Edge-recovery confusion counts over upper off-diagonal entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Confusion {
    fn add(&mut self, est: bool, truth: bool) {
        match (est, truth) {
            (true, true) => self.tp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    /// Matthews correlation; 0 when any marginal count is 0.
    pub fn mcc(&self) -> f64 {
        let (tp, tn, fp, fn_) = (self.tp as f64, self.tn as f64, self.fp as f64, self.fn_ as f64);
        let den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
        if den == 0.0 {
            0.0
        } else {
            (tp * tn - fp * fn_) / den.sqrt()
        }
    }

    /// `(FP / (FP + TN), FN / (FN + TP))` with `0/0 = 0`.
    pub fn fpr_fnr(&self) -> (f64, f64) {
        let ratio = |a: u64, b: u64| if a + b == 0 { 0.0 } else { a as f64 / (a + b) as f64 };
        (ratio(self.fp, self.tn), ratio(self.fn_, self.tp))
    }
}

fn confusion_of(est: &DMatrix<bool>, truth: &DMatrix<bool>) -> Confusion {
    let mut c = Confusion::default();
    for (e, t) in upper(est).zip(upper(truth)) {
        c.add(e, t);
    }
    c
}

pub fn per_factor_confusion(est: &SupportMask, truth: &SupportMask) -> Result<Vec<Confusion>> {
    est.check(truth)?;
    Ok(est.masks.iter().zip(&truth.masks).map(|(e, t)| confusion_of(e, t)).collect())
}

/// Counts pooled over all factors.
pub fn confusion(est: &SupportMask, truth: &SupportMask) -> Result<Confusion> {
    Ok(per_factor_confusion(est, truth)?.iter().fold(Confusion::default(), |mut acc, c| {
        acc.tp += c.tp;
        acc.tn += c.tn;
        acc.fp += c.fp;
        acc.fn_ += c.fn_;
        acc
    }))
}

/// Pooled MCC, the headline recovery number.
pub fn mcc(est: &SupportMask, truth: &SupportMask) -> Result<f64> {
    Ok(confusion(est, truth)?.mcc())
}

pub fn mcc_per_factor(est: &SupportMask, truth: &SupportMask) -> Result<Vec<f64>> {
    Ok(per_factor_confusion(est, truth)?.iter().map(Confusion::mcc).collect())
}

pub fn fpr_fnr(est: &SupportMask, truth: &SupportMask) -> Result<(f64, f64)> {
    Ok(confusion(est, truth)?.fpr_fnr())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Nrmse {
    /// RMSE over samples per entry, divided by the truth range.
    pub per_entry: Vec<f64>,
    pub mean: f64,
}

/// NRMSE of `pred` against `truth`, both given as equally shaped samples.
pub fn nrmse(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<Nrmse> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "nrmse needs matching non-empty sample lists, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let d = truth[0].len();
    if pred.iter().chain(truth).any(|v| v.len() != d) {
        return Err(Error::DimensionMismatch("nrmse samples differ in length".into()));
    }
    let (lo, hi) = truth
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        return Err(Error::InvalidParameter("nrmse is undefined for a constant truth field".into()));
    }
    let n = truth.len() as f64;
    let per_entry: Vec<f64> = (0..d)
        .map(|e| {
            let mse = pred.iter().zip(truth).map(|(p, t)| (p[e] - t[e]).powi(2)).sum::<f64>() / n;
            mse.sqrt() / (hi - lo)
        })
        .collect();
    let mean = per_entry.iter().sum::<f64>() / d as f64;
    Ok(Nrmse { per_entry, mean })
}

/// `||est - truth||_F / ||truth||_F`, optionally as `log10` floored at
/// [`LOG_ERROR_FLOOR`].
pub fn fnorm_rel_error(est: &DMatrix<f64>, truth: &DMatrix<f64>, log_scale: bool) -> Result<f64> {
    if est.shape() != truth.shape() {
        return Err(Error::DimensionMismatch(format!(
            "matrices of shape {:?} and {:?}",
            est.shape(),
            truth.shape()
        )));
    }
    let tn = truth.norm();
    if tn == 0.0 {
        return Err(Error::InvalidParameter("relative error against a zero matrix".into()));
    }
    let r = (est - truth).norm() / tn;
    Ok(if log_scale { r.log10().max(LOG_ERROR_FLOOR) } else { r })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask_from_pairs(d: usize, pairs: &[(usize, usize)]) -> DMatrix<bool> {
        let mut m = DMatrix::from_element(d, d, false);
        for &(i, j) in pairs {
            m[(i, j)] = true;
            m[(j, i)] = true;
        }
        m
    }

    fn random_mask(dims: &[usize], p: f64, rng: &mut ChaCha8Rng) -> SupportMask {
        let masks = dims
            .iter()
            .map(|&d| {
                let mut m = DMatrix::from_element(d, d, false);
                for j in 0..d {
                    for i in 0..j {
                        let b = rng.random_bool(p);
                        m[(i, j)] = b;
                        m[(j, i)] = b;
                    }
                }
                m
            })
            .collect();
        SupportMask::new(masks).unwrap()
    }

    #[test]
    fn perfect_recovery() {
        let t = SupportMask::new(vec![mask_from_pairs(4, &[(0, 1), (2, 3)]), mask_from_pairs(3, &[(0, 2)])]).unwrap();
        assert_eq!(mcc(&t, &t).unwrap(), 1.0);
        assert_eq!(fpr_fnr(&t, &t).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn mcc_counts_example() {
        // 6 upper pairs of a 4x4 mask: TP=2, TN=2, FP=1, FN=1
        let truth = mask_from_pairs(4, &[(0, 1), (0, 2), (0, 3)]);
        let est = mask_from_pairs(4, &[(0, 1), (0, 2), (1, 2)]);
        let c = confusion(&SupportMask::new(vec![est]).unwrap(), &SupportMask::new(vec![truth]).unwrap()).unwrap();
        assert_eq!(c, Confusion { tp: 2, tn: 2, fp: 1, fn_: 1 });
        assert!((c.mcc() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn all_positive_prediction() {
        let truth = SupportMask::new(vec![mask_from_pairs(4, &[(0, 1)])]).unwrap();
        let all = SupportMask::new(vec![DMatrix::from_fn(4, 4, |i, j| i != j)]).unwrap();
        assert_eq!(fpr_fnr(&all, &truth).unwrap(), (1.0, 0.0));
        // a constant prediction has a zero marginal
        assert_eq!(mcc(&all, &truth).unwrap(), 0.0);
    }

    #[test]
    fn random_masks_are_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_mask(&[200], 0.3, &mut rng);
        let b = random_mask(&[200], 0.3, &mut rng);
        assert!(mcc(&a, &b).unwrap().abs() < 0.03);
    }

    #[test]
    fn confusion_matches_oracle_on_ten_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let truth = random_mask(&[6], 0.6, &mut rng);
        let est = random_mask(&[6], 0.5, &mut rng);
        let (t, e) = (&truth.masks()[0], &est.masks()[0]);
        let (mut fp, mut tn, mut fn_, mut tp) = (0, 0, 0, 0);
        for i in 0..6 {
            for j in i + 1..6 {
                match (e[(i, j)], t[(i, j)]) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => tn += 1,
                }
            }
        }
        let (fpr, fnr) = fpr_fnr(&est, &truth).unwrap();
        assert_eq!(fpr, if fp + tn == 0 { 0.0 } else { fp as f64 / (fp + tn) as f64 });
        assert_eq!(fnr, if fn_ + tp == 0 { 0.0 } else { fn_ as f64 / (fn_ + tp) as f64 });
    }

    #[test]
    fn masks_validate_and_threshold() {
        assert!(SupportMask::new(vec![DMatrix::from_element(2, 2, true)]).is_err());
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 1e-9, 0.2, 1e-9, 1.0, 0.0, 0.2, 0.0, 1.0]);
        let s = SupportMask::from_dense(&[m], SUPPORT_THRESHOLD);
        assert_eq!(s.edge_count(), 1);
        assert!(s.masks()[0][(0, 2)]);
        let other = SupportMask::new(vec![DMatrix::from_element(2, 2, false)]).unwrap();
        assert!(mcc(&s, &other).is_err());
    }

    #[test]
    fn nrmse_cases() {
        let truth = vec![vec![0.0, 1.0, 2.0], vec![4.0, 3.0, 1.0]];
        assert_eq!(nrmse(&truth, &truth).unwrap().mean, 0.0);
        let shifted: Vec<Vec<f64>> = truth.iter().map(|v| v.iter().map(|x| x + 0.25 * 4.0).collect()).collect();
        let r = nrmse(&shifted, &truth).unwrap();
        assert!((r.mean - 0.25).abs() < 1e-15);
        assert!(nrmse(&[vec![1.0]], &[vec![1.0]]).is_err());
        // two-pass reference
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t: Vec<Vec<f64>> = (0..4).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let p: Vec<Vec<f64>> = (0..4).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let flat: Vec<f64> = t.iter().flatten().copied().collect();
        let range = flat.iter().cloned().fold(f64::MIN, f64::max) - flat.iter().cloned().fold(f64::MAX, f64::min);
        let r = nrmse(&p, &t).unwrap();
        for e in 0..5 {
            let mut s = 0.0;
            for i in 0..4 {
                s += (p[i][e] - t[i][e]) * (p[i][e] - t[i][e]);
            }
            assert!((r.per_entry[e] - (s / 4.0).sqrt() / range).abs() < 1e-15);
        }
    }

    #[test]
    fn fnorm_cases() {
        let t = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(fnorm_rel_error(&t, &t, false).unwrap(), 0.0);
        assert_eq!(fnorm_rel_error(&t, &t, true).unwrap(), LOG_ERROR_FLOOR);
        assert!((fnorm_rel_error(&(&t * 2.0), &t, false).unwrap() - 1.0).abs() < 1e-15);
        assert!(fnorm_rel_error(&t, &DMatrix::zeros(2, 2), false).is_err());
        let e = DMatrix::from_row_slice(2, 2, &[1.5, 2.0, 2.0, 4.0]);
        let manual = ((0.5f64 * 0.5 + 1.0) / 30.0).sqrt();
        assert!((fnorm_rel_error(&e, &t, false).unwrap() - manual).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn mcc_symmetry_and_relabeling(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_mask(&[5, 4, 6], 0.4, &mut rng);
            let b = random_mask(&[5, 4, 6], 0.4, &mut rng);
            let m = mcc(&a, &b).unwrap();
            prop_assert!((m - mcc(&b, &a).unwrap()).abs() < 1e-15);
            prop_assert!((-1.0..=1.0).contains(&m));
            let perm = |s: &SupportMask| SupportMask::new(vec![s.masks()[2].clone(), s.masks()[0].clone(), s.masks()[1].clone()]).unwrap();
            prop_assert!((m - mcc(&perm(&a), &perm(&b)).unwrap()).abs() < 1e-15);
        }
    }
}

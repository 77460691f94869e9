//! Plugging a user estimator into the filter.
//!
//! `Oracle` ignores the ensemble and returns the exact stationary
//! precision of the Poisson-AR state in its squared Kronecker-sum form,
//! a lower bound of sorts for what the sparse estimators can reach.
//!
//!     cargo run --release --example custom_estimator

use kronsolve::enkf::{
    run_filter, CovarianceEstimate, CovarianceEstimator, FilterConfig, PrecisionOperator, SgPalmEstimator,
};
use kronsolve::pde::{laplacian_1d, DynamicsModel, GridSpec};
use kronsolve::{KronSumOperator, PenaltyKind, SampleSet};

struct Oracle {
    op: KronSumOperator,
}

impl CovarianceEstimator for Oracle {
    fn name(&self) -> &str {
        "oracle"
    }

    fn estimate(&self, _anomalies: &SampleSet) -> kronsolve::Result<CovarianceEstimate> {
        Ok(CovarianceEstimate::Precision(PrecisionOperator::SquaredSum { diag: None, op: self.op.clone() }))
    }
}

fn main() -> kronsolve::Result<()> {
    let (a, sigma) = (0.8, 1.0);
    let grid = GridSpec::new(8, 8, 50);
    // Stationary precision (1 - a^2) / sigma^2 * L^2, split evenly over the two factors.
    let s = ((1.0f64 - a * a).sqrt()) / sigma;
    let oracle = Oracle { op: KronSumOperator::new(vec![laplacian_1d(8) * s, laplacian_1d(8) * s])? };
    let cfg = FilterConfig::new(grid, DynamicsModel::poisson_ar(a, sigma), 15, 2);
    for est in [&oracle as &dyn CovarianceEstimator, &SgPalmEstimator::new(PenaltyKind::L1, 0.5)] {
        let r = run_filter(&cfg, est)?;
        let tail = r.metrics[40..].iter().map(|m| m.rmse_mean).sum::<f64>() / 10.0;
        println!("{:>7}: mean RMSE over the final 10 steps {tail:.4}", est.name());
    }
    Ok(())
}

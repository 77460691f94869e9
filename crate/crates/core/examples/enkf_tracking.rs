//! Track an 8x8 Poisson-AR(1) field with every built-in estimator.
//!
//!     cargo run --release --example enkf_tracking

use kronsolve::enkf::{
    run_filter, CovarianceEstimator, FilterConfig, IdentityEstimator, SampleRidgeEstimator, SgPalmEstimator,
    SyGlassoEstimator,
};
use kronsolve::pde::{DynamicsModel, GridSpec};
use kronsolve::PenaltyKind;

fn main() -> kronsolve::Result<()> {
    let cfg = FilterConfig::new(GridSpec::new(8, 8, 50), DynamicsModel::poisson_ar(0.8, 1.0), 15, 1);
    let estimators: Vec<Box<dyn CovarianceEstimator>> = vec![
        Box::new(SgPalmEstimator::new(PenaltyKind::L1, 0.5)),
        Box::new(SyGlassoEstimator::new(0.5)),
        Box::new(SampleRidgeEstimator::default()),
        Box::new(IdentityEstimator),
    ];
    println!("{:>9} {:>12} {:>14} {:>12}", "estimator", "final10 rmse", "member p05-p95", "est. time");
    for est in &estimators {
        let report = run_filter(&cfg, est.as_ref())?;
        let tail = &report.metrics[40..];
        let mean = tail.iter().map(|m| m.rmse_mean).sum::<f64>() / 10.0;
        let last = report.metrics.last().unwrap();
        let secs: f64 = report.metrics.iter().map(|m| m.estimator_seconds).sum();
        println!(
            "{:>9} {mean:>12.4} {:>6.3}-{:<7.3} {secs:>10.3} s",
            est.name(),
            last.rmse_member_p05,
            last.rmse_member_p95
        );
    }
    Ok(())
}

//! Recover sparse Kronecker-sum factors from exact-model samples.
//!
//! Draws three 16x16 Erdos-Renyi factors, samples 100 tensors from the
//! Sylvester model, and fits SG-PALM across a sweep of penalty scales.
//!
//!     cargo run --release --example recover_sylvester

use kronsolve::metrics::{mcc, mcc_per_factor, SupportMask, SUPPORT_THRESHOLD};
use kronsolve::pde::{generate_factors, sample_sylvester, FactorGraphSpec, FactorKind};
use kronsolve::sgpalm::{fit, theorem_penalties, SolverConfig};
use kronsolve::PenaltyKind;

fn main() -> kronsolve::Result<()> {
    let spec = FactorGraphSpec { kind: FactorKind::ErdosRenyi { edges: 16 }, dim: 16 };
    let (truth, mask) = generate_factors(&[spec; 3], 1)?;
    let data = sample_sylvester(&truth, 100, 2)?;
    println!("{:>6} {:>6} {:>8} {:>6}", "C", "iters", "MCC", "edges");
    for i in 0..8 {
        let c = 0.5 * 2f64.powf(i as f64 / 2.0);
        let cfg = SolverConfig::new(theorem_penalties(PenaltyKind::L1, c, 0.0, &data)?);
        let (est, trace) = fit(&data, &cfg)?;
        let found = SupportMask::from_factors(&est, SUPPORT_THRESHOLD);
        println!(
            "{c:>6.3} {:>6} {:>8.4} {:>6}   per factor {:.3?}",
            trace.iterations(),
            mcc(&found, &mask)?,
            found.edge_count(),
            mcc_per_factor(&found, &mask)?
        );
    }
    println!("true edges: {}", mask.edge_count());
    Ok(())
}

//! FPR + FNR along a penalty path, the sort of curve used to pick a
//! penalty when the truth is known.
//!
//!     cargo run --release --example fpr_fnr_path

use kronsolve::metrics::{fpr_fnr, SupportMask, SUPPORT_THRESHOLD};
use kronsolve::pde::{generate_factors, sample_sylvester, FactorGraphSpec, FactorKind};
use kronsolve::sgpalm::{fit_from, theorem_penalties, SolverConfig};
use kronsolve::{PenaltyKind, SylvesterFactors};

fn main() -> kronsolve::Result<()> {
    let specs = [
        FactorGraphSpec { kind: FactorKind::StarBlock { rho: 0.5, block: 4 }, dim: 12 },
        FactorGraphSpec { kind: FactorKind::ErdosRenyi { edges: 10 }, dim: 10 },
    ];
    let (truth, mask) = generate_factors(&specs, 3)?;
    let data = sample_sylvester(&truth, 30, 4)?;

    println!("C,fpr,fnr,fpr_plus_fnr");
    // Walk from heavy to light penalties, warm-starting each fit.
    let mut start = SylvesterFactors::identities(data.dims())?;
    for i in (0..15).rev() {
        let c = 0.25 * 1.3f64.powi(i);
        let cfg = SolverConfig::new(theorem_penalties(PenaltyKind::L1, c, 0.0, &data)?);
        let (est, _) = fit_from(&data, &cfg, &start)?;
        let (fpr, fnr) = fpr_fnr(&SupportMask::from_factors(&est, SUPPORT_THRESHOLD), &mask)?;
        println!("{c:.4},{fpr:.4},{fnr:.4},{:.4}", fpr + fnr);
        start = est;
    }
    Ok(())
}

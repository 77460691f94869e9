//! L1 versus SCAD and MCP on the same data.
//!
//! The folded-concave penalties stop shrinking entries beyond `a lambda`, so
//! at a penalty heavy enough to recover the support they carry less bias
//! than the lasso. At light penalties their concavity costs accuracy.
//!
//!     cargo run --release --example nonconvex_penalties

use kronsolve::metrics::{fnorm_rel_error, mcc, SupportMask, SUPPORT_THRESHOLD};
use kronsolve::pde::{generate_factors, sample_sylvester, FactorGraphSpec, FactorKind};
use kronsolve::sgpalm::{fit, theorem_penalties, SolverConfig};
use kronsolve::tensor::kron_sum_dense;
use kronsolve::PenaltyKind;

fn main() -> kronsolve::Result<()> {
    let spec = FactorGraphSpec { kind: FactorKind::Ar1 { rho: 0.7 }, dim: 12 };
    let (truth, mask) = generate_factors(&[spec; 2], 5)?;
    let data = sample_sylvester(&truth, 40, 6)?;
    let lt = kron_sum_dense(&truth)?;
    let omega = &lt * &lt;

    for kind in [PenaltyKind::L1, PenaltyKind::Scad, PenaltyKind::Mcp] {
        for c in [0.25, 0.5, 1.0] {
            let cfg = SolverConfig::new(theorem_penalties(kind, c, kind.default_shape(), &data)?);
            let (est, _) = fit(&data, &cfg)?;
            let le = kron_sum_dense(&est)?;
            let err = fnorm_rel_error(&(&le * &le), &omega, false)?;
            let m = mcc(&SupportMask::from_factors(&est, SUPPORT_THRESHOLD), &mask)?;
            println!("{kind:>5} C={c:<4} rel. Frobenius error {err:.4}  MCC {m:.3}");
        }
    }
    Ok(())
}

//! Writing and reading KTEN files: a sample tensor and a factor set.
//!
//!     cargo run --example kten_io

use kronsolve::kten::{decode, encode, read_factors, read_kten, write_factors, write_kten};
use kronsolve::pde::{generate_factors, sample_sylvester, FactorGraphSpec, FactorKind};

fn main() -> kronsolve::Result<()> {
    let dir = std::env::temp_dir().join(format!("kten-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let spec = FactorGraphSpec { kind: FactorKind::Ar1 { rho: 0.4 }, dim: 5 };
    let (factors, _) = generate_factors(&[spec; 2], 0)?;
    let samples = sample_sylvester(&factors, 8, 1)?.to_tensor();

    write_kten(&samples, &dir.join("samples.kten"))?;
    write_factors(&factors, &dir.join("factors.kten"))?;
    assert_eq!(read_kten(&dir.join("samples.kten"))?, samples);
    assert_eq!(read_factors(&dir.join("factors.kten"))?, factors);
    println!("samples {:?} and {} factors round-tripped through {}", samples.dims(), factors.order(), dir.display());

    let mut bytes = encode(&samples);
    bytes.truncate(bytes.len() - 5);
    println!("a truncated record fails with: {}", decode(&bytes).unwrap_err());
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

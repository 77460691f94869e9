//! The three spatio-temporal generators side by side, plus the analytic
//! Poisson-AR stationary covariance checked against a long run.
//!
//!     cargo run --release --example pde_generators

use kronsolve::pde::{
    ks_default_dt, poisson_ar_stationary_covariance, simulate, DynamicsModel, GridSpec,
};
use nalgebra::{DMatrix, DVector};

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

fn main() -> kronsolve::Result<()> {
    let grid = GridSpec::new(16, 16, 60);
    let runs = [
        ("poisson-ar", grid, DynamicsModel::poisson_ar(0.8, 1.0)),
        ("convection-diffusion", GridSpec { h: 0.5, dt: 0.1, ..grid }, DynamicsModel::convection_diffusion(1.0, 2.0, 0.1)),
        ("ks", GridSpec { h: 0.8, dt: ks_default_dt(0.8), d1: 32, d2: 32, steps: 400 }, DynamicsModel::kuramoto_sivashinsky(0.0)),
    ];
    for (name, g, model) in runs {
        let traj = simulate(&g, &model, 7)?;
        let t = &traj.states;
        println!(
            "{name:>20}: rms at steps 1, T/2, T = {:.3e} {:.3e} {:.3e}",
            rms(&t[0]),
            rms(&t[t.len() / 2]),
            rms(&t[t.len() - 1])
        );
    }

    // Poisson-AR marginal covariance after many steps vs. the fixed point.
    let small = GridSpec::new(4, 4, 200);
    let model = DynamicsModel::poisson_ar(0.8, 1.0);
    let traj = simulate(&small, &model, 11)?;
    let d = small.dim();
    let mut emp = DMatrix::zeros(d, d);
    let burn = 50;
    for u in &traj.states[burn..] {
        let v = DVector::from_column_slice(u);
        emp += &v * v.transpose();
    }
    emp /= (traj.states.len() - burn) as f64;
    let exact = poisson_ar_stationary_covariance(&small, &model)?;
    println!(
        "single-run time average vs stationary covariance: relative Frobenius error {:.3} (autocorrelated, so loose)",
        (&emp - &exact).norm() / exact.norm()
    );
    Ok(())
}

//! Noise-free linear evolution of a Gaussian packet against the closed form.

use snls::solver::free_gaussian;
use snls::*;

fn main() -> Result<()> {
    let grid = Grid2D::new(16.0, 256)?;
    let u0 = ComplexField::from_fn(&grid, free_gaussian(1.0, 0.0));
    let traj = evolve(&u0, &NoiseBundle::quiet(&grid), &ModelParams::linear(), 0.5, 1e-3, 100)?;
    for s in &traj.snapshots {
        let exact = ComplexField::from_fn(&grid, free_gaussian(1.0, s.t));
        let err = s.u.sub(&exact)?.l2_norm() / exact.l2_norm();
        println!("t = {:.2}  L2 relative error {err:.3e}", s.t);
    }
    Ok(())
}

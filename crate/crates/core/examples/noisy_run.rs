//! Defocusing run with noise: conserved quantities along the trajectory,
//! drift report, and persistence of the trajectory.
//!
//! cargo run --example noisy_run -- [out_dir]

use snls::diagnostics::drift;
use snls::noise::build_bundle;
use snls::solver::transform_to_u;
use snls::*;

fn main() -> Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out/noisy_run".into());
    let grid = Grid2D::new(8.0, 128)?;
    let kernel = build_greens_kernel(&grid)?;
    let bundle = build_bundle(&sample_white_noise(&grid, 7), &kernel, 0.25)?;
    let params = ModelParams::new(-1.0, 0.4);
    let v0 = ComplexField::from_fn(&grid, |x, y| num_complex::Complex64::new((-(x * x + y * y) / 2.0).exp(), 0.0));
    let traj = evolve(&transform_to_u(&v0, &bundle)?, &bundle, &params, 0.5, 1e-3, 50)?;

    println!("{:>6} {:>14} {:>14} {:>10} {:>10}", "t", "mass", "energy", "sup|u|", "boundary");
    for r in &traj.records {
        println!(
            "{:>6.3} {:>14.10} {:>14.10} {:>10.5} {:>10.2e}",
            r.t, r.conserved.mass, r.conserved.energy, r.sup_u, r.boundary_fraction
        );
    }
    let d = drift(&traj);
    println!("mass drift {:.2e}, energy drift {:.2e}, identity residual {:.2e}", d.mass_drift, d.energy_drift, d.identity_residual);
    traj.save(std::path::Path::new(&out))?;
    println!("trajectory written to {out}");
    Ok(())
}

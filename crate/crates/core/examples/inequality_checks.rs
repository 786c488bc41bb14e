//! Inequalities along one noisy trajectory: moment localization, the H^1
//! bound with the energy identity, Gronwall growth of dv/dt, and the
//! Brezis-Gallouet bound, each with a constant frozen on t <= T/2.

use snls::besov::build_partition;
use snls::diagnostics::{brezis_gallouet_check, h1_bound_check, h2_growth_check, localization_check, InequalityRecord};
use snls::noise::build_bundle;
use snls::solver::transform_to_u;
use snls::*;

fn show(r: &InequalityRecord) {
    let c = r.frozen.as_ref().map(|f| format!("C* {:.3}, verified {:.3}", f.constant, f.verified));
    println!("{:<16} pass {:<5} measured {:.3}  {}  {:?}", r.check, r.pass, r.measured_constant, c.unwrap_or_default(), r.notes);
}

fn main() -> Result<()> {
    let grid = Grid2D::new(8.0, 128)?;
    let kernel = build_greens_kernel(&grid)?;
    let part = build_partition(&grid)?;
    let b = build_bundle(&sample_white_noise(&grid, 3), &kernel, 0.25)?;
    let v0 = ComplexField::from_fn(&grid, |x, y| num_complex::Complex64::new((-(x * x + y * y) / 2.0).exp(), 0.0));
    let traj = evolve(&transform_to_u(&v0, &b)?, &b, &ModelParams::new(-1.0, 0.4), 0.5, 1e-3, 25)?;

    show(&localization_check(&traj, &b, 0.1, 0.5)?);
    show(&h1_bound_check(&traj, &b, 0.05, 1e-4)?);
    show(&h2_growth_check(&traj, &b, 0.05)?);
    show(&brezis_gallouet_check(&traj, &part, 1.2, 0.05)?);
    Ok(())
}

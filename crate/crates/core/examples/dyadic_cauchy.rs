//! Dyadic Cauchy study: increments of v between eps = 2^-k and 2^-(k+1)
//! for a shared noise seed. Small and short so it runs in about a minute;
//! see the acceptance suite for the full configuration.

use snls::diagnostics::{dyadic_cauchy_study, DyadicSetup};
use snls::solver::Scheme;
use snls::*;

fn main() -> Result<()> {
    let grid = Grid2D::new(2.0, 128)?;
    let kernel = build_greens_kernel(&grid)?;
    let v0 = ComplexField::from_fn(&grid, |x, y| num_complex::Complex64::new((-(x * x + y * y) / 0.5).exp(), 0.0));
    let setup = DyadicSetup {
        seed: 11,
        ks: vec![1, 2, 3, 4],
        params: ModelParams::new(-1.0, 0.4),
        t_final: 0.05,
        dt: 2.5e-5,
        snapshot_every: 200,
        gamma: 1.2,
        delta: 0.05,
        scheme: Scheme::Strang,
    };
    let study = dyadic_cauchy_study(&kernel, &v0, &setup, 0.9)?;
    for p in &study.points {
        println!("k = {}: sup_t ||v_k - v_k+1||_H^1.2 = {:.5}", p.scale, p.mean);
    }
    println!("ratios {:?}, geometric rate {:.3}, pass {:?}", study.successive_ratios(), study.fit.exponent(), study.pass);
    Ok(())
}

//! Renormalization constant: deterministic c_eps against |log eps| and a
//! Monte-Carlo check of E|grad Y_eps|^2 at the box centre.

use snls::cli::renorm_study;
use snls::diagnostics::renorm_monte_carlo;
use snls::noise::renorm_constant;
use snls::*;

fn main() -> Result<()> {
    let grid = Grid2D::new(2.0, 256)?;
    let kernel = build_greens_kernel(&grid)?;
    let eps: Vec<f64> = (2..=5).map(|k| 2f64.powi(-k)).collect();
    let (study, _) = renorm_study(&kernel, &eps, 0)?;
    for p in &study.points {
        println!("eps = {:<9} c_eps = {:.6}", p.scale, p.mean);
    }
    println!(
        "fit c_eps = {:.4} |log eps| + {:.4}, R^2 = {:.5}, 1/(2 pi) = {:.4}",
        study.fit.slope,
        study.fit.intercept,
        study.fit.r_squared,
        1.0 / (2.0 * std::f64::consts::PI)
    );

    let seeds: Vec<u64> = (0..2000).collect();
    let (mean, se) = renorm_monte_carlo(&kernel, 0.125, &seeds)?;
    println!("Monte-Carlo at eps = 0.125: {mean:.5} +- {se:.5} vs c_eps = {:.5}", renorm_constant(&kernel, 0.125, &grid)?);
    Ok(())
}

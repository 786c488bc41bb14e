//! Samples white noise, builds the bundle at a few scales and persists one.
//!
//! cargo run --example sample_noise -- [out_dir]

use snls::noise::{build_bundle, renorm_constant};
use snls::*;

fn main() -> Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out/sample_noise".into());
    let grid = Grid2D::new(4.0, 256)?;
    let kernel = build_greens_kernel(&grid)?;
    let xi = sample_white_noise(&grid, 42);

    println!("{:>10} {:>10} {:>12} {:>12}", "eps", "c_eps", "max|Y_eps|", "mean wick");
    for k in 2..=4 {
        let eps = 2f64.powi(-k);
        let b = build_bundle(&xi, &kernel, eps)?;
        println!(
            "{eps:>10.5} {:>10.5} {:>12.5} {:>12.3e}",
            renorm_constant(&kernel, eps, &grid)?,
            b.y().max_abs(),
            b.wick().mean()
        );
    }

    let b = build_bundle(&xi, &kernel, 0.125)?;
    b.save(std::path::Path::new(&out))?;
    println!("bundle at eps = 0.125 written to {out}");
    Ok(())
}

//! Monte-Carlo scaling studies of the mollified noise: the L^p log blow-up
//! of grad Y_eps, uniformity of e^(aY_eps), and the rate of Y_eps - Y_eps/2.
//! Study tables go to `out/noise_scaling/csv`.

use snls::besov::{build_partition, NormRequest};
use snls::diagnostics::{noise_scaling_study, rate_study, NoiseStatistic, RatePair};
use snls::*;

fn main() -> Result<()> {
    let grid = Grid2D::new(2.0, 256)?;
    let kernel = build_greens_kernel(&grid)?;
    let part = build_partition(&grid)?;
    let eps: Vec<f64> = (2..=5).map(|k| 2f64.powi(-k)).collect();
    let seeds: Vec<u64> = (0..20).collect();
    let dir = std::path::Path::new("out/noise_scaling/csv");

    let lp = noise_scaling_study(NoiseStatistic::GradYLp { p: 8.0, delta: 0.5 }, &kernel, &part, &eps, &seeds)?;
    lp.write(dir, "grad_y_lp")?;
    println!("grad_y_lp: slope {:.4} per |log eps|, R^2 {:.4}", lp.fit.slope, lp.fit.r_squared);

    let ey = noise_scaling_study(NoiseStatistic::EyBound { a: -1.0, alpha: 0.5, delta: 0.5 }, &kernel, &part, &eps, &seeds)?;
    ey.write(dir, "ey_bound")?;
    for p in &ey.points {
        println!("  ey_bound eps = {:<8} mean {:.4} +- {:.4}", p.scale, p.mean, p.stderr);
    }

    let rate = rate_study(RatePair::YEpsVsY, &kernel, &part, &eps[..3], &seeds, &NormRequest::holder(0.5, -0.5), 0.35)?;
    rate.write(dir, "y_rate")?;
    println!("y_rate: kappa {:.3} (target >= 0.35), pass {:?}", rate.fit.exponent(), rate.pass);
    Ok(())
}

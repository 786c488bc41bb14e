//! Littlewood-Paley blocks and weighted Besov, Sobolev and Hoelder norms of
//! a smooth bump, plus the frozen-calibration property suite.

use snls::besov::{build_partition, lp_block, norm, property_suite, NormRequest};
use snls::*;

fn main() -> Result<()> {
    let grid = Grid2D::new(8.0, 128)?;
    let part = build_partition(&grid)?;
    println!("k0 = {:.4}, J_max = {}", part.k0(), part.j_max());

    let f = RealField::from_fn(&grid, |x, y| (-(x * x + y * y)).exp() * (3.0 * x).cos());
    for j in part.indices() {
        println!("  block {j:>2}: sup |Delta_j f| = {:.3e}", lp_block(&f, j, &part)?.iter().map(|z| z.norm()).fold(0.0, f64::max));
    }

    let inf = f64::INFINITY;
    for req in [
        NormRequest::besov(0.5, 2.0, 2.0, 0.0),
        NormRequest::besov(1.0, 4.0, inf, 0.5),
        NormRequest::sobolev(1.0, -0.5),
        NormRequest::holder(0.5, -0.5),
        NormRequest::holder_chunked(0.5, -0.5),
        NormRequest::lp(8.0, -0.5),
    ] {
        println!("{:<16?} alpha={:<4} p={:<4} q={:<4} mu={:<5} -> {:.6}", req.family, req.alpha, req.p, req.q, req.mu, norm(&f, &req, &part)?.value);
    }

    for r in property_suite(&part, 20, 1, 2.0)? {
        println!("{:<15} {:<80} C* = {:.3} {}", r.property, r.parameters, r.check.constant, if r.check.pass { "ok" } else { "VIOLATED" });
    }
    Ok(())
}

//! White noise, its mollifications and the Wick-renormalized objects built
//! from a truncated Green's function.
//!
//! All objects of one realization share the spectrum of the raw sample `xi`;
//! every derived field is a spectral multiplier applied to it, so identities
//! such as `Delta Y_eps = xi_eps + phi * xi_eps` hold to round-off.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{apply_multiplier, kernel_symbol, Grid2D, GridField, RealField};

/// Radius below which the truncated Green's function equals `log|x| / 2 pi`.
pub const GREEN_INNER_RADIUS: f64 = 0.25;
/// Radius beyond which the truncated Green's function vanishes.
pub const GREEN_OUTER_RADIUS: f64 = 1.0;

/// Largest admissible `|a Y|` before `exp(a Y)` is treated as an overflow.
pub const EXP_LIMIT: f64 = 700.0;

/// Average of `log|x|` over the unit square centred at the origin.
const LOG_CELL_AVERAGE: f64 = -0.368_028_246_322_579 - std::f64::consts::LN_2;

/// One sample of spatial white noise on a grid.
#[derive(Debug, Clone)]
pub struct NoiseRealization {
    seed: u64,
    xi: RealField,
}

impl NoiseRealization {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn xi(&self) -> &RealField {
        &self.xi
    }

    pub fn grid(&self) -> &Grid2D {
        self.xi.grid()
    }
}

/// Draws i.i.d. `N(0, 1/h^2)` samples so that `h^2 sum xi_i f_i` has variance
/// close to `||f||_2^2`. The stream depends only on `seed`.
pub fn sample_white_noise(grid: &Grid2D, seed: u64) -> NoiseRealization {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inv_h = 1.0 / grid.spacing();
    let values = (0..grid.len())
        .map(|_| rng.sample::<f64, _>(StandardNormal) * inv_h)
        .collect();
    NoiseRealization {
        seed,
        xi: RealField::from_vec_unchecked(grid, values),
    }
}

/// Standard radial bump `exp(-1/(1 - r^2))` on the unit disc, unnormalized.
pub fn bump(r: f64) -> f64 {
    if r < 1.0 {
        (-1.0 / (1.0 - r * r)).exp()
    } else {
        0.0
    }
}

/// C^3 smoothstep cutoff: 1 on `[0, r0]`, 0 on `[r1, inf)`.
pub fn green_cutoff(r: f64) -> f64 {
    let s = ((r - GREEN_INNER_RADIUS) / (GREEN_OUTER_RADIUS - GREEN_INNER_RADIUS)).clamp(0.0, 1.0);
    let s4 = s * s * s * s;
    1.0 - s4 * (35.0 - 84.0 * s + 70.0 * s * s - 20.0 * s * s * s)
}

fn check_eps(grid: &Grid2D, eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::InvalidEps(eps));
    }
    let min = 2.0 * grid.spacing();
    if eps < min * (1.0 - 1e-12) {
        return Err(Error::Unresolved { eps, min });
    }
    Ok(())
}

/// Rescaled bump `rho_eps = eps^-2 rho(x / eps)`, normalized on the grid to
/// unit mass.
#[derive(Debug, Clone)]
pub struct Mollifier {
    eps: f64,
    profile: RealField,
    symbol: Vec<f64>,
}

impl Mollifier {
    pub fn new(grid: &Grid2D, eps: f64) -> Result<Self> {
        check_eps(grid, eps)?;
        let raw = RealField::from_fn(grid, |x, y| bump((x * x + y * y).sqrt() / eps));
        let mass: f64 = raw.values().iter().sum::<f64>() * grid.cell_area();
        let profile = raw.map(|v| v / mass);
        let symbol = kernel_symbol(&profile);
        Ok(Self {
            eps,
            profile,
            symbol,
        })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn profile(&self) -> &RealField {
        &self.profile
    }

    /// Continuum-normalized Fourier symbol `rho_eps^(k)`.
    pub fn symbol(&self) -> &[f64] {
        &self.symbol
    }
}

/// Truncated Green's function `G = eta(|x|) log|x| / 2 pi` with the smooth
/// correction `phi = Delta G - delta`, stored through its symbol.
#[derive(Debug, Clone)]
pub struct GreensKernel {
    g: RealField,
    g_hat: Vec<f64>,
    phi_hat: Vec<f64>,
}

impl GreensKernel {
    pub fn field(&self) -> &RealField {
        &self.g
    }

    pub fn grid(&self) -> &Grid2D {
        self.g.grid()
    }

    pub fn symbol(&self) -> &[f64] {
        &self.g_hat
    }

    /// `phi^(k) = -|k|^2 G^(k) - 1`.
    pub fn phi_symbol(&self) -> &[f64] {
        &self.phi_hat
    }

    /// `phi` in physical space.
    pub fn phi_field(&self) -> RealField {
        let grid = self.grid();
        let spec: Vec<Complex64> = self
            .phi_hat
            .iter()
            .enumerate()
            .map(|(idx, &p)| Complex64::new(p * grid.centering_sign(idx) / grid.cell_area(), 0.0))
            .collect();
        RealField::from_spectrum(grid, spec)
    }
}

/// Builds the truncated Green's function. The origin node carries the cell
/// average of the log kernel.
pub fn build_greens_kernel(grid: &Grid2D) -> Result<GreensKernel> {
    if grid.half_width() < 2.0 {
        return Err(Error::BoxTooSmall(grid.half_width()));
    }
    let h = grid.spacing();
    let origin = (h.ln() + LOG_CELL_AVERAGE) / (2.0 * PI);
    let g = RealField::from_fn(grid, |x, y| {
        let r = (x * x + y * y).sqrt();
        if r == 0.0 {
            origin
        } else {
            green_cutoff(r) * r.ln() / (2.0 * PI)
        }
    });
    let g_hat = kernel_symbol(&g);
    let phi_hat = g_hat
        .iter()
        .zip(grid.k_squared())
        .map(|(&gh, k2)| -k2 * gh - 1.0)
        .collect();
    Ok(GreensKernel { g, g_hat, phi_hat })
}

/// `xi_eps = rho_eps * xi`.
pub fn mollify(xi: &NoiseRealization, eps: f64) -> Result<RealField> {
    let m = Mollifier::new(xi.grid(), eps)?;
    crate::grid::convolve(m.profile(), xi.xi())
}

/// All noise objects of one realization at scale `eps`.
#[derive(Debug, Clone)]
pub struct NoiseBundle {
    seed: Option<u64>,
    eps: f64,
    xi_eps: RealField,
    y: RealField,
    grad_y: [RealField; 2],
    wick: RealField,
    phi_conv: RealField,
    c_eps: f64,
    pot: RealField,
}

impl NoiseBundle {
    /// The noise-free bundle: every field zero and `c_eps = 0`.
    pub fn quiet(grid: &Grid2D) -> Self {
        let z = RealField::zeros(grid);
        Self {
            seed: None,
            eps: 1.0,
            xi_eps: z.clone(),
            y: z.clone(),
            grad_y: [z.clone(), z.clone()],
            wick: z.clone(),
            phi_conv: z.clone(),
            c_eps: 0.0,
            pot: z,
        }
    }

    pub fn is_quiet(&self) -> bool {
        self.seed.is_none()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn grid(&self) -> &Grid2D {
        self.y.grid()
    }

    pub fn xi_eps(&self) -> &RealField {
        &self.xi_eps
    }

    pub fn y(&self) -> &RealField {
        &self.y
    }

    pub fn grad_y(&self) -> &[RealField; 2] {
        &self.grad_y
    }

    /// `:|grad Y_eps|^2: = |grad Y_eps|^2 - c_eps`.
    pub fn wick(&self) -> &RealField {
        &self.wick
    }

    /// `phi * xi_eps`.
    pub fn phi_conv(&self) -> &RealField {
        &self.phi_conv
    }

    pub fn c_eps(&self) -> f64 {
        self.c_eps
    }

    /// Transformed potential `wick - phi * xi_eps`.
    pub fn pot(&self) -> &RealField {
        &self.pot
    }

    /// Renormalized potential `xi_eps - c_eps` of the untransformed equation.
    pub fn potential(&self) -> RealField {
        let c = self.c_eps;
        self.xi_eps.map(|v| v - c)
    }

    /// Fields in persistence order, with their file labels.
    pub fn labelled_fields(&self) -> Vec<(&'static str, &RealField)> {
        vec![
            ("xi_eps", &self.xi_eps),
            ("y_eps", &self.y),
            ("grad_y_x", &self.grad_y[0]),
            ("grad_y_y", &self.grad_y[1]),
            ("wick", &self.wick),
            ("phi_conv", &self.phi_conv),
        ]
    }

    /// Writes the six fields and `bundle.json` into `dir`.
    pub fn save(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let labels = self
            .labelled_fields()
            .into_iter()
            .map(|(label, f)| {
                crate::io::write_real(&dir.join(label), f, label)?;
                Ok(label.to_string())
            })
            .collect::<Result<Vec<_>>>()?;
        let g = self.grid();
        let m = BundleManifest {
            seed: self.seed,
            eps: self.eps,
            c_eps: self.c_eps,
            n: g.n(),
            half_width: g.half_width(),
            fields: labels,
        };
        std::fs::write(dir.join("bundle.json"), serde_json::to_string_pretty(&m)?)?;
        Ok(())
    }

    pub fn load(dir: &std::path::Path) -> Result<Self> {
        let m: BundleManifest = serde_json::from_str(&std::fs::read_to_string(dir.join("bundle.json"))?)?;
        let read = |label: &str| -> Result<RealField> {
            let (f, h) = crate::io::read_real(&dir.join(label))?;
            if h.n != m.n || h.half_width != m.half_width {
                return Err(Error::Format(format!("{label}: grid differs from bundle manifest")));
            }
            Ok(f)
        };
        let xi_eps = read("xi_eps")?;
        let wick = read("wick")?;
        let phi_conv = read("phi_conv")?;
        let pot = wick.zip_map(&phi_conv, |w, p| w - p)?;
        Ok(Self {
            seed: m.seed,
            eps: m.eps,
            y: read("y_eps")?,
            grad_y: [read("grad_y_x")?, read("grad_y_y")?],
            xi_eps,
            wick,
            phi_conv,
            c_eps: m.c_eps,
            pot,
        })
    }
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct BundleManifest {
    seed: Option<u64>,
    eps: f64,
    c_eps: f64,
    n: usize,
    half_width: f64,
    fields: Vec<String>,
}

/// Builds the bundle at scale `eps`; `c_eps` comes from [`renorm_constant`].
pub fn build_bundle(xi: &NoiseRealization, kernel: &GreensKernel, eps: f64) -> Result<NoiseBundle> {
    let m = Mollifier::new(xi.grid(), eps)?;
    build_bundle_with(xi, kernel, &m)
}

/// As [`build_bundle`] with a prebuilt mollifier, for sweeps over seeds.
pub fn build_bundle_with(
    xi: &NoiseRealization,
    kernel: &GreensKernel,
    mollifier: &Mollifier,
) -> Result<NoiseBundle> {
    let grid = xi.grid();
    grid.check_same(kernel.grid())?;
    grid.check_same(mollifier.profile().grid())?;
    let n = grid.n();

    let mut xi_hat = xi.xi().spectrum();
    xi_hat
        .par_iter_mut()
        .zip(mollifier.symbol().par_iter())
        .for_each(|(v, &r)| *v *= r);

    let real = |mult: &[f64]| {
        let out = apply_multiplier(grid, &xi_hat, mult);
        RealField::from_vec_unchecked(grid, out.into_iter().map(|c| c.re).collect())
    };
    let xi_eps = RealField::from_spectrum(grid, xi_hat.clone());
    let y = real(kernel.symbol());
    let phi_conv = real(kernel.phi_symbol());

    let k = grid.odd_wavenumbers();
    let grad = |axis: usize| {
        let mut spec: Vec<Complex64> = xi_hat
            .iter()
            .zip(kernel.symbol())
            .map(|(&s, &g)| s * g)
            .collect();
        spec.par_chunks_mut(n).enumerate().for_each(|(a, row)| {
            for (b, v) in row.iter_mut().enumerate() {
                let kk = if axis == 0 { k[a] } else { k[b] };
                *v *= Complex64::new(0.0, kk);
            }
        });
        RealField::from_spectrum(grid, spec)
    };
    let gx = grad(0);
    let gy = grad(1);

    let c_eps = renorm_from_symbols(grid, kernel.symbol(), mollifier.symbol());
    let wick = gx.zip_map(&gy, |a, b| a * a + b * b - c_eps)?;
    let pot = wick.zip_map(&phi_conv, |w, p| w - p)?;

    Ok(NoiseBundle {
        seed: Some(xi.seed()),
        eps: mollifier.eps(),
        xi_eps,
        y,
        grad_y: [gx, gy],
        wick,
        phi_conv,
        c_eps,
        pot,
    })
}

/// Exact grid-level variance `E|grad Y_eps(x)|^2`, i.e.
/// `sum_k |i k G^(k) rho_eps^(k)|^2 / (2L)^2` with the odd-order Nyquist
/// convention of the gradient.
pub fn renorm_constant(kernel: &GreensKernel, eps: f64, grid: &Grid2D) -> Result<f64> {
    grid.check_same(kernel.grid())?;
    let m = Mollifier::new(grid, eps)?;
    Ok(renorm_from_symbols(grid, kernel.symbol(), m.symbol()))
}

fn renorm_from_symbols(grid: &Grid2D, g_hat: &[f64], rho_hat: &[f64]) -> f64 {
    let n = grid.n();
    let k = grid.odd_wavenumbers();
    let sum: f64 = g_hat
        .par_chunks(n)
        .zip(rho_hat.par_chunks(n))
        .enumerate()
        .map(|(a, (gr, rr))| {
            let mut s = 0.0;
            for b in 0..n {
                let amp = gr[b] * rr[b];
                s += (k[a] * k[a] + k[b] * k[b]) * amp * amp;
            }
            s
        })
        .sum();
    sum / grid.box_area()
}

/// Pointwise `exp(a Y)`; fails if any `|a Y|` exceeds [`EXP_LIMIT`].
pub fn exp_y(y: &RealField, a: f64) -> Result<RealField> {
    let worst = y.max_abs() * a.abs();
    if worst > EXP_LIMIT || !worst.is_finite() {
        return Err(Error::Overflow(worst));
    }
    Ok(y.map(|v| (a * v).exp()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{integrate, laplacian};

    fn grid() -> Grid2D {
        Grid2D::new(2.0, 64).unwrap()
    }

    fn center(grid: &Grid2D) -> usize {
        let c = grid.n() / 2;
        c * grid.n() + c
    }

    #[test]
    fn log_cell_average_matches_quadrature() {
        // Midpoint rule over a fine sub-grid of the unit cell.
        let m = 2000;
        let mut s = 0.0;
        for i in 0..m {
            for j in 0..m {
                let x = (i as f64 + 0.5) / m as f64 - 0.5;
                let y = (j as f64 + 0.5) / m as f64 - 0.5;
                s += (x * x + y * y).sqrt().ln();
            }
        }
        let avg = s / (m * m) as f64;
        assert!((avg - LOG_CELL_AVERAGE).abs() < 1e-5, "{avg}");
    }

    #[test]
    fn same_seed_same_noise() {
        let g = grid();
        let a = sample_white_noise(&g, 42);
        let b = sample_white_noise(&g, 42);
        let c = sample_white_noise(&g, 43);
        assert_eq!(a.xi().values(), b.xi().values());
        assert_ne!(a.xi().values(), c.xi().values());
    }

    #[test]
    fn greens_kernel_profile() {
        let g = Grid2D::new(2.0, 128).unwrap();
        let k = build_greens_kernel(&g).unwrap();
        let n = g.n();
        let c = n / 2;
        let h = g.spacing();
        // |x| = 1/8 is 4 cells on this grid.
        let steps = (0.125 / h).round() as usize;
        let v = k.field().values()[(c + steps) * n + c];
        assert!((v - (0.125f64).ln() / (2.0 * PI)).abs() < 1e-14);
        let steps = (1.25 / h).round() as usize;
        assert_eq!(k.field().values()[(c + steps) * n + c], 0.0);
        assert_eq!(k.field().values()[c * n + c + (1.0 / h) as usize], 0.0);
        assert!(matches!(
            build_greens_kernel(&Grid2D::new(1.5, 64).unwrap()),
            Err(Error::BoxTooSmall(_))
        ));
    }

    #[test]
    fn greens_kernel_is_supported_in_unit_ball_and_radial() {
        let g = Grid2D::new(2.0, 64).unwrap();
        let k = build_greens_kernel(&g).unwrap();
        let n = g.n();
        for (idx, &v) in k.field().values().iter().enumerate() {
            let (x, y) = g.point(idx);
            if x * x + y * y >= 1.0 {
                assert_eq!(v, 0.0);
            }
            // reflection x -> -x stays on the grid away from the boundary row
            let (a, b) = (idx / n, idx % n);
            if a > 0 && b > 0 {
                let w = k.field().values()[(n - a) * n + (n - b)];
                assert!((v - w).abs() < 1e-15);
                let t = k.field().values()[b * n + a];
                assert!((v - t).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn greens_identity_is_spectrally_exact() {
        let g = grid();
        let k = build_greens_kernel(&g).unwrap();
        // Delta_h G - delta_h - phi, measured against ||delta_h||.
        let lap = laplacian(&k.field().to_complex());
        let phi = k.phi_field();
        let c = center(&g);
        let inv_area = 1.0 / g.cell_area();
        let mut res = 0.0;
        for idx in 0..g.len() {
            let delta = if idx == c { inv_area } else { 0.0 };
            res += (lap.values()[idx].re - delta - phi.values()[idx]).powi(2);
        }
        let rel = (res / (inv_area * inv_area)).sqrt();
        assert!(rel < 1e-10, "{rel}");
        assert!((k.phi_symbol()[0] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn mollifier_has_unit_mass_and_support_eps() {
        let g = grid();
        let m = Mollifier::new(&g, 0.25).unwrap();
        assert!((integrate(m.profile(), 0.0) - 1.0).abs() < 1e-10);
        for (idx, &v) in m.profile().values().iter().enumerate() {
            let (x, y) = g.point(idx);
            if (x * x + y * y).sqrt() >= 0.25 {
                assert_eq!(v, 0.0);
            }
        }
        assert!(matches!(Mollifier::new(&g, 0.05), Err(Error::Unresolved { .. })));
        assert!(matches!(Mollifier::new(&g, 1.5), Err(Error::InvalidEps(_))));
        assert!(matches!(Mollifier::new(&g, 0.0), Err(Error::InvalidEps(_))));
    }

    #[test]
    fn mollify_preserves_mean_and_is_deterministic() {
        let g = grid();
        let xi = sample_white_noise(&g, 5);
        let a = mollify(&xi, 0.125).unwrap();
        let b = mollify(&xi, 0.125).unwrap();
        assert_eq!(a.values(), b.values());
        let lhs = integrate(&a, 0.0);
        let rhs = integrate(xi.xi(), 0.0);
        assert!((lhs - rhs).abs() < 1e-10 * (1.0 + rhs.abs()));
    }

    #[test]
    fn bundle_identities() {
        let g = grid();
        let k = build_greens_kernel(&g).unwrap();
        let xi = sample_white_noise(&g, 9);
        let b = build_bundle(&xi, &k, 0.125).unwrap();
        // Delta Y_eps - xi_eps - phi * xi_eps
        let lap = laplacian(&b.y().to_complex());
        let mut num = 0.0;
        let mut den = 0.0;
        for idx in 0..g.len() {
            let r = lap.values()[idx].re - b.xi_eps().values()[idx] - b.phi_conv().values()[idx];
            num += r * r;
            den += b.xi_eps().values()[idx].powi(2);
        }
        assert!((num / den).sqrt() < 1e-8);
        let c = b.c_eps();
        for idx in 0..g.len() {
            let gx = b.grad_y()[0].values()[idx];
            let gy = b.grad_y()[1].values()[idx];
            assert!((b.wick().values()[idx] - (gx * gx + gy * gy - c)).abs() < 1e-12);
            assert!((b.pot().values()[idx] - (b.wick().values()[idx] - b.phi_conv().values()[idx])).abs() < 1e-12);
        }
        // Spectral path agrees with the convolution route.
        let direct = crate::grid::convolve(k.field(), b.xi_eps()).unwrap();
        for (a, d) in b.y().values().iter().zip(direct.values()) {
            assert!((a - d).abs() < 1e-10);
        }
        let again = build_bundle(&xi, &k, 0.125).unwrap();
        assert_eq!(again.y().values(), b.y().values());
    }

    #[test]
    fn renorm_constant_grows_as_eps_shrinks() {
        let g = Grid2D::new(2.0, 256).unwrap();
        let k = build_greens_kernel(&g).unwrap();
        let cs: Vec<f64> = [0.25, 0.125, 0.0625, 0.03125]
            .iter()
            .map(|&e| renorm_constant(&k, e, &g).unwrap())
            .collect();
        assert!(cs.windows(2).all(|w| w[1] > w[0]), "{cs:?}");
    }

    #[test]
    fn exp_y_behaviour() {
        let g = grid();
        let y = RealField::from_fn(&g, |x, y| (x * y).sin() * 3.0);
        let one = exp_y(&y, 0.0).unwrap();
        assert!(one.values().iter().all(|&v| v == 1.0));
        let p = exp_y(&y, 1.7).unwrap();
        let m = exp_y(&y, -1.7).unwrap();
        let prod = p.zip_map(&m, |a, b| a * b).unwrap();
        assert!(prod.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(matches!(exp_y(&y, 300.0), Err(Error::Overflow(_))));
    }

    #[test]
    fn quiet_bundle_is_zero() {
        let g = grid();
        let b = NoiseBundle::quiet(&g);
        assert!(b.is_quiet());
        assert_eq!(b.c_eps(), 0.0);
        assert_eq!(b.potential().max_abs(), 0.0);
    }

    #[test]
    fn bundle_save_load_round_trip() {
        let g = grid();
        let k = build_greens_kernel(&g).unwrap();
        let b = build_bundle(&sample_white_noise(&g, 4), &k, 0.25).unwrap();
        let dir = tempfile::tempdir().unwrap();
        b.save(dir.path()).unwrap();
        let back = NoiseBundle::load(dir.path()).unwrap();
        assert_eq!(back.seed(), Some(4));
        assert_eq!(back.c_eps(), b.c_eps());
        assert_eq!(back.pot().values(), b.pot().values());
        assert_eq!(back.grad_y()[1].values(), b.grad_y()[1].values());
    }

    #[test]
    fn white_noise_pairing_has_l2_variance() {
        let g = Grid2D::new(2.0, 32).unwrap();
        let f = RealField::from_fn(&g, |x, y| (-(x * x + 2.0 * y * y)).exp());
        let norm2 = integrate(&f.map(|v| v * v), 0.0);
        let n = 2000;
        let samples: Vec<f64> = (0..n)
            .map(|s| integrate(&sample_white_noise(&g, s).xi().zip_map(&f, |a, b| a * b).unwrap(), 0.0))
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 4.0 * (norm2 / n as f64).sqrt(), "{mean}");
        assert!((var / norm2 - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt(), "{var} vs {norm2}");
    }

    #[test]
    fn mollified_field_covariance_is_stationary() {
        let g = Grid2D::new(2.0, 32).unwrap();
        let kernel = build_greens_kernel(&g).unwrap();
        let n = g.n();
        let at = |i: usize, j: usize| i * n + j;
        let pairs = [(at(16, 16), at(16, 19)), (at(5, 27), at(5, 30))];
        let seeds = 1000;
        let mut prod = [0.0; 2];
        let mut sq = [0.0; 2];
        let mut var = 0.0;
        for s in 0..seeds {
            let b = build_bundle(&sample_white_noise(&g, s), &kernel, 0.25).unwrap();
            let y = b.y().values();
            for (k, &(a, c)) in pairs.iter().enumerate() {
                prod[k] += y[a] * y[c];
                sq[k] += (y[a] * y[c]).powi(2);
            }
            var += y[pairs[0].0].powi(2);
        }
        let m = seeds as f64;
        let cov = prod.map(|p| p / m);
        let se = [0, 1].map(|k| ((sq[k] / m - cov[k].powi(2)) / m).sqrt());
        assert!(cov[0] > 0.1 * var / m, "pairs should be correlated");
        assert!((cov[0] - cov[1]).abs() < 4.0 * (se[0].powi(2) + se[1].powi(2)).sqrt(), "{cov:?} {se:?}");
    }
}

//! Periodic square grid on `[-L, L)^2` standing in for the plane.
//!
//! Transform convention, used by every module: the forward DFT is
//! unnormalized, the inverse carries `1/N^2`, and physical-space quadrature
//! carries the cell area `h^2`. Point `(i, j)` sits at `(-L + i h, -L + j h)`
//! and is stored at `values[i * N + j]`; spectra use the same layout with
//! FFT frequency ordering along each axis.

use std::borrow::Cow;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Rows handed to one rayon task during the row pass of a 2-D transform.
const ROWS_PER_TASK: usize = 16;

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

/// Periodic grid with `N` points per axis on a box of half-width `L`.
///
/// Cloning is cheap: FFT plans are shared behind an `Arc` and are safe to
/// use from several threads at once.
#[derive(Clone)]
pub struct Grid2D {
    n: usize,
    half_width: f64,
    plans: Arc<Plans>,
}

impl fmt::Debug for Grid2D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid2D")
            .field("n", &self.n)
            .field("half_width", &self.half_width)
            .finish()
    }
}

impl PartialEq for Grid2D {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.half_width == other.half_width
    }
}

impl Grid2D {
    /// Builds a grid; `n` must be a power of two with `n >= 16`.
    pub fn new(half_width: f64, n: usize) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "half-width must be positive, got {half_width}"
            )));
        }
        if n < 16 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "N must be a power of two >= 16, got {n}"
            )));
        }
        let mut planner = FftPlanner::new();
        let plans = Plans {
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        };
        Ok(Self {
            n,
            half_width,
            plans: Arc::new(plans),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// Number of samples, `N^2`.
    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Grid spacing `h = 2L/N`.
    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn cell_area(&self) -> f64 {
        let h = self.spacing();
        h * h
    }

    /// Area `(2L)^2` of the periodic box.
    pub fn box_area(&self) -> f64 {
        let side = 2.0 * self.half_width;
        side * side
    }

    /// Physical coordinate of index `i` along either axis.
    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.spacing()
    }

    pub fn point(&self, idx: usize) -> (f64, f64) {
        (self.coord(idx / self.n), self.coord(idx % self.n))
    }

    /// Index of the Nyquist frequency along an axis.
    pub fn nyquist_index(&self) -> usize {
        self.n / 2
    }

    /// Nyquist wavenumber `pi N / (2L)`.
    pub fn k_max(&self) -> f64 {
        PI * self.n as f64 / (2.0 * self.half_width)
    }

    /// Integer frequency of FFT index `m`, in `[-N/2, N/2)`.
    pub fn frequency(&self, m: usize) -> i64 {
        let n = self.n as i64;
        let m = m as i64;
        if m < n / 2 {
            m
        } else {
            m - n
        }
    }

    /// Wavenumber `(pi/L) * frequency(m)`.
    pub fn wavenumber(&self, m: usize) -> f64 {
        PI / self.half_width * self.frequency(m) as f64
    }

    /// Per-axis wavenumbers in FFT order.
    pub fn wavenumbers(&self) -> Vec<f64> {
        (0..self.n).map(|m| self.wavenumber(m)).collect()
    }

    /// Per-axis wavenumbers with the Nyquist entry zeroed, for odd-order
    /// derivatives.
    pub fn odd_wavenumbers(&self) -> Vec<f64> {
        let mut k = self.wavenumbers();
        k[self.nyquist_index()] = 0.0;
        k
    }

    /// `|k|^2` over the whole spectrum, Nyquist modes kept.
    pub fn k_squared(&self) -> Vec<f64> {
        let k = self.wavenumbers();
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for (a, row) in out.chunks_mut(n).enumerate() {
            for (b, v) in row.iter_mut().enumerate() {
                *v = k[a] * k[a] + k[b] * k[b];
            }
        }
        out
    }

    /// Spectral sign pattern `(-1)^(mx + my)`, the phase that re-centres a
    /// kernel sampled around the box centre on the origin.
    pub fn centering_sign(&self, idx: usize) -> f64 {
        let (a, b) = (idx / self.n, idx % self.n);
        if (a + b) % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// In-place unnormalized forward 2-D DFT.
    pub fn fft_forward(&self, data: &mut [Complex64]) {
        self.transform(data, &self.plans.forward);
    }

    /// In-place inverse 2-D DFT including the `1/N^2` factor.
    pub fn fft_inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &self.plans.inverse);
        let scale = 1.0 / self.len() as f64;
        data.par_iter_mut().for_each(|v| *v *= scale);
    }

    /// Forward transform reusing a caller-owned buffer of grid length.
    pub(crate) fn fft_forward_with(&self, data: &mut [Complex64], scratch: &mut [Complex64]) {
        self.transform_with(data, scratch, &self.plans.forward);
    }

    /// Inverse transform without the `1/N^2` factor, reusing `scratch`.
    pub(crate) fn fft_inverse_unscaled_with(&self, data: &mut [Complex64], scratch: &mut [Complex64]) {
        self.transform_with(data, scratch, &self.plans.inverse);
    }

    fn transform(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let mut scratch = vec![Complex64::new(0.0, 0.0); data.len()];
        self.transform_with(data, &mut scratch, plan);
    }

    fn transform_with(&self, data: &mut [Complex64], scratch: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        assert_eq!(data.len(), self.len(), "buffer does not match grid");
        assert_eq!(scratch.len(), self.len(), "scratch does not match grid");
        let n = self.n;
        let rows = |buf: &mut [Complex64]| {
            buf.par_chunks_mut(n * ROWS_PER_TASK).for_each(|chunk| {
                let mut work = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
                plan.process_with_scratch(chunk, &mut work);
            });
        };
        rows(data);
        transpose(data, scratch, n);
        rows(scratch);
        transpose(scratch, data, n);
    }

    pub(crate) fn check_same(&self, other: &Grid2D) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], n: usize) {
    const B: usize = 32;
    let b = B.min(n);
    for ib in (0..n).step_by(b) {
        for jb in (0..n).step_by(b) {
            for i in ib..ib + b {
                for j in jb..jb + b {
                    dst[j * n + i] = src[i * n + j];
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

/// Common view over real and complex grid fields.
pub trait GridField {
    fn grid(&self) -> &Grid2D;

    fn complex_values(&self) -> Cow<'_, [Complex64]>;

    /// Unnormalized forward DFT of the samples.
    fn spectrum(&self) -> Vec<Complex64> {
        let mut data = self.complex_values().into_owned();
        self.grid().fft_forward(&mut data);
        data
    }
}

/// Real samples on a grid (noise objects, weights).
#[derive(Clone, PartialEq)]
pub struct RealField {
    grid: Grid2D,
    values: Vec<f64>,
}

impl fmt::Debug for RealField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RealField({:?})", self.grid)
    }
}

impl RealField {
    /// Wraps samples; rejects wrong length or non-finite entries.
    pub fn new(grid: &Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                got: values.len(),
                expected: grid.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("real field samples".into()));
        }
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    pub(crate) fn from_vec_unchecked(grid: &Grid2D, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn zeros(grid: &Grid2D) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &Grid2D, c: f64) -> Self {
        Self::from_vec_unchecked(grid, vec![c; grid.len()])
    }

    /// Samples `f(x, y)` at every grid point.
    pub fn from_fn(grid: &Grid2D, f: impl Fn(f64, f64) -> f64 + Sync) -> Self {
        let values = (0..grid.len())
            .into_par_iter()
            .map(|idx| {
                let (x, y) = grid.point(idx);
                f(x, y)
            })
            .collect();
        Self::from_vec_unchecked(grid, values)
    }

    /// Real part of the inverse DFT of `spectrum`.
    pub fn from_spectrum(grid: &Grid2D, mut spectrum: Vec<Complex64>) -> Self {
        grid.fft_inverse(&mut spectrum);
        Self::from_vec_unchecked(grid, spectrum.into_iter().map(|c| c.re).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> Self {
        Self::from_vec_unchecked(&self.grid, self.values.par_iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &RealField, f: impl Fn(f64, f64) -> f64 + Sync) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        let values = self
            .values
            .par_iter()
            .zip(other.values.par_iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self::from_vec_unchecked(&self.grid, values))
    }

    pub fn to_complex(&self) -> ComplexField {
        ComplexField::from_vec_unchecked(
            &self.grid,
            self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        )
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

impl GridField for RealField {
    fn grid(&self) -> &Grid2D {
        &self.grid
    }

    fn complex_values(&self) -> Cow<'_, [Complex64]> {
        Cow::Owned(self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }
}

/// Complex samples on a grid (solution variables).
#[derive(Clone, PartialEq)]
pub struct ComplexField {
    grid: Grid2D,
    values: Vec<Complex64>,
}

impl fmt::Debug for ComplexField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ComplexField({:?})", self.grid)
    }
}

impl ComplexField {
    pub fn new(grid: &Grid2D, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                got: values.len(),
                expected: grid.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("complex field samples".into()));
        }
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    pub(crate) fn from_vec_unchecked(grid: &Grid2D, values: Vec<Complex64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn zeros(grid: &Grid2D) -> Self {
        Self::from_vec_unchecked(grid, vec![Complex64::new(0.0, 0.0); grid.len()])
    }

    pub fn from_fn(grid: &Grid2D, f: impl Fn(f64, f64) -> Complex64 + Sync) -> Self {
        let values = (0..grid.len())
            .into_par_iter()
            .map(|idx| {
                let (x, y) = grid.point(idx);
                f(x, y)
            })
            .collect();
        Self::from_vec_unchecked(grid, values)
    }

    /// Plane wave `exp(i (kx x + ky y))`.
    pub fn plane_wave(grid: &Grid2D, kx: f64, ky: f64) -> Self {
        Self::from_fn(grid, |x, y| Complex64::from_polar(1.0, kx * x + ky * y))
    }

    /// Inverse DFT of `spectrum`.
    pub fn from_spectrum(grid: &Grid2D, mut spectrum: Vec<Complex64>) -> Self {
        grid.fft_inverse(&mut spectrum);
        Self::from_vec_unchecked(grid, spectrum)
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64 + Sync) -> Self {
        Self::from_vec_unchecked(&self.grid, self.values.par_iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, c: Complex64) -> Self {
        self.map(|v| v * c)
    }

    /// Pointwise product with a real field.
    pub fn mul_real(&self, r: &RealField) -> Result<Self> {
        self.grid.check_same(&r.grid)?;
        let values = self
            .values
            .par_iter()
            .zip(r.values.par_iter())
            .map(|(&a, &b)| a * b)
            .collect();
        Ok(Self::from_vec_unchecked(&self.grid, values))
    }

    pub fn zip_map(
        &self,
        other: &ComplexField,
        f: impl Fn(Complex64, Complex64) -> Complex64 + Sync,
    ) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        let values = self
            .values
            .par_iter()
            .zip(other.values.par_iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self::from_vec_unchecked(&self.grid, values))
    }

    pub fn sub(&self, other: &ComplexField) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn modulus_squared(&self) -> RealField {
        RealField::from_vec_unchecked(&self.grid, self.values.iter().map(|v| v.norm_sqr()).collect())
    }

    pub fn real_part(&self) -> RealField {
        RealField::from_vec_unchecked(&self.grid, self.values.iter().map(|v| v.re).collect())
    }

    pub fn max_abs_imag(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.im.abs()))
    }

    /// `max |f|` over the grid.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    /// Quadrature `L^2` norm.
    pub fn l2_norm(&self) -> f64 {
        (self.grid.cell_area() * self.values.iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl GridField for ComplexField {
    fn grid(&self) -> &Grid2D {
        &self.grid
    }

    fn complex_values(&self) -> Cow<'_, [Complex64]> {
        Cow::Borrowed(&self.values)
    }
}

/// Samples of the polynomial weight `(1 + |x|^2)^(mu/2)`.
pub fn weight_field(grid: &Grid2D, mu: f64) -> RealField {
    RealField::from_fn(grid, |x, y| (1.0 + x * x + y * y).powf(0.5 * mu))
}

/// Inverse transform of `(i k_axis)^order f^`. Odd orders drop the Nyquist
/// mode so derivatives of real fields stay real.
pub fn spectral_derivative(f: &ComplexField, axis: Axis, order: i32) -> Result<ComplexField> {
    if order <= 0 {
        return Err(Error::InvalidOrder(order));
    }
    let grid = f.grid();
    let n = grid.n();
    let k = if order % 2 == 1 {
        grid.odd_wavenumbers()
    } else {
        grid.wavenumbers()
    };
    let factors: Vec<Complex64> = k.iter().map(|&k| Complex64::new(0.0, k).powi(order)).collect();
    let mut spec = f.spectrum();
    spec.par_chunks_mut(n).enumerate().for_each(|(a, row)| {
        for (b, v) in row.iter_mut().enumerate() {
            *v *= match axis {
                Axis::X => factors[a],
                Axis::Y => factors[b],
            };
        }
    });
    Ok(ComplexField::from_spectrum(grid, spec))
}

/// Spectral Laplacian, the sum of the two second-order derivatives.
pub fn laplacian(f: &ComplexField) -> ComplexField {
    let grid = f.grid();
    let k2 = grid.k_squared();
    let mut spec = f.spectrum();
    spec.par_iter_mut().zip(k2.par_iter()).for_each(|(v, &k2)| *v *= -k2);
    ComplexField::from_spectrum(grid, spec)
}

/// Spectral gradient `(d/dx f, d/dy f)` of a complex field.
pub fn gradient(f: &ComplexField) -> (ComplexField, ComplexField) {
    let grid = f.grid();
    let spec = f.spectrum();
    gradient_from_spectrum(grid, &spec)
}

pub(crate) fn gradient_from_spectrum(
    grid: &Grid2D,
    spec: &[Complex64],
) -> (ComplexField, ComplexField) {
    let n = grid.n();
    let k = grid.odd_wavenumbers();
    let mut sx = spec.to_vec();
    let mut sy = spec.to_vec();
    sx.par_chunks_mut(n).zip(sy.par_chunks_mut(n)).enumerate().for_each(|(a, (rx, ry))| {
        for b in 0..n {
            rx[b] *= Complex64::new(0.0, k[a]);
            ry[b] *= Complex64::new(0.0, k[b]);
        }
    });
    (
        ComplexField::from_spectrum(grid, sx),
        ComplexField::from_spectrum(grid, sy),
    )
}

/// Continuum-normalized transform `h^2 sum_j K(x_j) exp(-i k x_j)` of a kernel
/// sampled around the box centre. Real up to round-off for even kernels, so
/// only the real part is kept.
pub fn kernel_symbol(kernel: &RealField) -> Vec<f64> {
    let grid = kernel.grid();
    let area = grid.cell_area();
    kernel
        .spectrum()
        .into_iter()
        .enumerate()
        .map(|(idx, c)| area * grid.centering_sign(idx) * c.re)
        .collect()
}

/// `h^2`-scaled circular convolution approximating `int f(x - y) g(y) dy`.
pub fn convolve(f: &RealField, g: &RealField) -> Result<RealField> {
    f.grid().check_same(g.grid())?;
    let grid = f.grid();
    let area = grid.cell_area();
    let mut fs = f.spectrum();
    let gs = g.spectrum();
    fs.par_iter_mut()
        .zip(gs.par_iter())
        .enumerate()
        .for_each(|(idx, (a, b))| *a *= *b * (area * grid.centering_sign(idx)));
    Ok(RealField::from_spectrum(grid, fs))
}

/// Applies a real spectral multiplier in place and returns the inverse.
pub(crate) fn apply_multiplier(grid: &Grid2D, spec: &[Complex64], mult: &[f64]) -> Vec<Complex64> {
    let mut out: Vec<Complex64> = spec.par_iter().zip(mult.par_iter()).map(|(&s, &m)| s * m).collect();
    grid.fft_inverse(&mut out);
    out
}

/// Rectangle rule `h^2 sum f(x_i) <x_i>^mu`.
pub fn integrate(f: &RealField, weight_mu: f64) -> f64 {
    let grid = f.grid();
    let sum: f64 = if weight_mu == 0.0 {
        f.values().iter().sum()
    } else {
        f.values()
            .iter()
            .enumerate()
            .map(|(idx, v)| {
                let (x, y) = grid.point(idx);
                v * (1.0 + x * x + y * y).powf(0.5 * weight_mu)
            })
            .sum()
    };
    grid.cell_area() * sum
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid2D {
        Grid2D::new(4.0, 64).unwrap()
    }

    fn max_diff(a: &ComplexField, b: &ComplexField) -> f64 {
        a.values()
            .iter()
            .zip(b.values())
            .fold(0.0, |m, (x, y)| m.max((x - y).norm()))
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid2D::new(4.0, 8).is_err());
        assert!(Grid2D::new(4.0, 100).is_err());
        assert!(Grid2D::new(-1.0, 64).is_err());
        assert!(Grid2D::new(4.0, 16).is_ok());
    }

    #[test]
    fn nyquist_matches_frequency_range() {
        let g = grid();
        let ks = g.wavenumbers();
        let kmax = ks.iter().fold(0.0f64, |m, k| m.max(k.abs()));
        assert!((kmax - g.k_max()).abs() < 1e-12);
        assert_eq!(g.frequency(g.nyquist_index()), -(g.n() as i64) / 2);
        assert!((g.coord(g.n() / 2)).abs() < 1e-15);
    }

    #[test]
    fn weight_field_values() {
        let g = grid();
        let w = weight_field(&g, 2.0);
        let c = g.n() / 2;
        assert_eq!(w.values()[c * g.n() + c], 1.0);
        assert!(weight_field(&g, 0.0).values().iter().all(|&v| v == 1.0));

        // Spacing sqrt(3)/8 puts the point (sqrt 3, 0) on the grid.
        let g = Grid2D::new(4.0 * 3f64.sqrt(), 64).unwrap();
        let w = weight_field(&g, 2.0);
        let v = w.values()[(c + 8) * g.n() + c];
        assert!((v - 4.0).abs() < 1e-12);
    }

    #[test]
    fn weight_inverse_pair_is_one() {
        let g = grid();
        let a = weight_field(&g, 1.3);
        let b = weight_field(&g, -1.3);
        let p = a.zip_map(&b, |x, y| x * y).unwrap();
        assert!(p.values().iter().all(|v| (v - 1.0).abs() < 1e-13));
    }

    #[test]
    fn derivative_of_plane_wave() {
        let g = grid();
        let kx = g.wavenumber(3);
        let ky = g.wavenumber(g.n() - 5);
        let f = ComplexField::plane_wave(&g, kx, ky);
        let d = spectral_derivative(&f, Axis::X, 1).unwrap();
        let expect = f.scale(Complex64::new(0.0, kx));
        assert!(max_diff(&d, &expect) < 1e-11);
        let lap = laplacian(&f);
        let expect = f.scale(Complex64::new(-(kx * kx + ky * ky), 0.0));
        assert!(max_diff(&lap, &expect) < 1e-9);
    }

    #[test]
    fn derivative_of_constant_vanishes() {
        let g = grid();
        let f = RealField::constant(&g, 2.5).to_complex();
        let d = spectral_derivative(&f, Axis::Y, 1).unwrap();
        assert!(d.sup_norm() < 1e-13);
        assert!(matches!(
            spectral_derivative(&f, Axis::Y, 0),
            Err(Error::InvalidOrder(0))
        ));
    }

    #[test]
    fn mixed_derivatives_commute() {
        let g = grid();
        let f = ComplexField::from_fn(&g, |x, y| {
            Complex64::new((-(x * x + 2.0 * y * y) / 2.0).exp(), (x - y).sin() * 0.1)
        });
        let xy = spectral_derivative(&spectral_derivative(&f, Axis::X, 1).unwrap(), Axis::Y, 1).unwrap();
        let yx = spectral_derivative(&spectral_derivative(&f, Axis::Y, 1).unwrap(), Axis::X, 1).unwrap();
        assert!(max_diff(&xy, &yx) < 1e-12);
    }

    #[test]
    fn odd_derivative_of_real_field_stays_real() {
        let g = grid();
        let f = RealField::from_fn(&g, |x, y| (x * 3.0).cos() + (y * 0.7).sin() * x);
        let d = spectral_derivative(&f.to_complex(), Axis::X, 3).unwrap();
        assert!(d.max_abs_imag() < 1e-10);
    }

    #[test]
    fn convolution_with_discrete_delta_is_identity() {
        let g = grid();
        let c = g.n() / 2;
        let mut delta = vec![0.0; g.len()];
        delta[c * g.n() + c] = 1.0 / g.cell_area();
        let delta = RealField::new(&g, delta).unwrap();
        let f = RealField::from_fn(&g, |x, y| (-(x * x + y * y)).exp() * (1.0 + x));
        let out = convolve(&f, &delta).unwrap();
        for (a, b) in out.values().iter().zip(f.values()) {
            assert!((a - b).abs() < 1e-13);
        }
        let zero = convolve(&RealField::zeros(&g), &f).unwrap();
        assert!(zero.max_abs() < 1e-15);
    }

    #[test]
    fn convolution_of_gaussians_matches_closed_form() {
        // Oracle: the convolution of two centred Gaussians of variance s^2 is a
        // Gaussian of variance 2 s^2 whose amplitude follows from the masses.
        let g = Grid2D::new(8.0, 128).unwrap();
        let s2 = 0.5f64;
        let gauss = |v: f64| {
            move |x: f64, y: f64| (-(x * x + y * y) / (2.0 * v)).exp() / (2.0 * PI * v)
        };
        let f = RealField::from_fn(&g, gauss(s2));
        let out = convolve(&f, &f).unwrap();
        let expect = RealField::from_fn(&g, gauss(2.0 * s2));
        let peak = expect.max_abs();
        for (idx, (a, b)) in out.values().iter().zip(expect.values()).enumerate() {
            let (x, y) = g.point(idx);
            if x.abs() < 4.0 && y.abs() < 4.0 {
                assert!((a - b).abs() < 0.01 * peak, "at ({x},{y}): {a} vs {b}");
            }
        }
    }

    #[test]
    fn convolution_is_symmetric() {
        let g = grid();
        let f = RealField::from_fn(&g, |x, y| (-(x - 1.0).powi(2) - y * y).exp());
        let h = RealField::from_fn(&g, |x, y| (x * y).sin() * (-(x * x + y * y) / 4.0).exp());
        let a = convolve(&f, &h).unwrap();
        let b = convolve(&h, &f).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-13);
        }
        let other = Grid2D::new(3.0, 64).unwrap();
        assert!(matches!(
            convolve(&f, &RealField::zeros(&other)),
            Err(Error::GridMismatch)
        ));
    }

    #[test]
    fn integrals() {
        let g = grid();
        assert!((integrate(&RealField::constant(&g, 1.0), 0.0) - g.box_area()).abs() < 1e-12);
        let w = ComplexField::plane_wave(&g, g.wavenumber(5), g.wavenumber(2)).modulus_squared();
        assert!((integrate(&w, 0.0) - g.box_area()).abs() < 1e-11);
        // Analytic oracle: a unit-mass Gaussian integrates to one.
        let g = Grid2D::new(10.0, 128).unwrap();
        let s2 = 0.8;
        let bump = RealField::from_fn(&g, |x, y| (-(x * x + y * y) / (2.0 * s2)).exp() / (2.0 * PI * s2));
        assert!((integrate(&bump, 0.0) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn parseval() {
        let g = grid();
        let f = ComplexField::from_fn(&g, |x, y| Complex64::new((x * y).cos(), (-(x * x)).exp() * y));
        let phys: f64 = f.values().iter().map(|v| v.norm_sqr()).sum::<f64>() * g.cell_area();
        let spec: f64 = f.spectrum().iter().map(|v| v.norm_sqr()).sum::<f64>() * g.cell_area()
            / g.len() as f64;
        assert!(((phys - spec) / phys).abs() < 1e-12);
    }

    #[test]
    fn inverse_undoes_forward() {
        let g = grid();
        let f = ComplexField::from_fn(&g, |x, y| Complex64::new(x.sin(), y * 0.1));
        let back = ComplexField::from_spectrum(&g, f.spectrum());
        assert!(max_diff(&f, &back) < 1e-13);
    }

    #[test]
    fn symbol_of_even_kernel_is_real() {
        let g = grid();
        let k = RealField::from_fn(&g, |x, y| (-(x * x + y * y)).exp());
        let spec = k.spectrum();
        let max_im = spec
            .iter()
            .enumerate()
            .fold(0.0f64, |m, (i, c)| m.max((c * g.centering_sign(i)).im.abs()));
        assert!(max_im < 1e-10);
        let sym = kernel_symbol(&k);
        // Zero mode of the symbol is the kernel mass.
        assert!((sym[0] - integrate(&k, 0.0)).abs() < 1e-12);
    }
}

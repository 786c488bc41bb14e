//! Weighted Littlewood-Paley analysis on the grid: dyadic blocks, weighted
//! Besov, Sobolev and Hölder norms, and a calibrate-then-freeze harness for
//! norm inequalities.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{apply_multiplier, Grid2D, GridField, RealField};

/// Inner and outer radius of the low-pass profile, in units of `k0`.
const CHI_INNER: f64 = 0.75;
const CHI_OUTER: f64 = 4.0 / 3.0;

/// Upper bound on the number of offsets in the Hölder stencil.
pub const HOLDER_STENCIL_MAX: usize = 48;

fn smooth_step(t: f64) -> f64 {
    // C-infinity transition from 0 (t <= 0) to 1 (t >= 1).
    let f = |s: f64| if s > 0.0 { (-1.0 / s).exp() } else { 0.0 };
    let a = f(t);
    let b = f(1.0 - t);
    if a + b == 0.0 {
        0.0
    } else {
        a / (a + b)
    }
}

/// Low-pass profile `chi(r)`: 1 for `r <= 3/4`, 0 for `r >= 4/3`.
pub fn chi(r: f64) -> f64 {
    1.0 - smooth_step((r - CHI_INNER) / (CHI_OUTER - CHI_INNER))
}

/// Dyadic partition of unity on the spectrum of one grid.
///
/// Block `-1` is `chi(|k|/k0)`, block `j` in `0..J_max` is
/// `chi(|k|/(2^(j+1) k0)) - chi(|k|/(2^j k0))`, and the top block `J_max`
/// takes the remaining high-pass part so the blocks sum to one everywhere.
#[derive(Debug, Clone)]
pub struct LpPartition {
    grid: Grid2D,
    k0: f64,
    j_max: i32,
    blocks: Vec<Vec<f64>>,
}

impl LpPartition {
    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    /// Base wavenumber, eight fundamental modes `8 pi / L`.
    pub fn k0(&self) -> f64 {
        self.k0
    }

    pub fn j_max(&self) -> i32 {
        self.j_max
    }

    /// Block indices `-1..=J_max`.
    pub fn indices(&self) -> std::ops::RangeInclusive<i32> {
        -1..=self.j_max
    }

    /// Multiplier of block `j`.
    pub fn block(&self, j: i32) -> Result<&[f64]> {
        if j < -1 || j > self.j_max {
            return Err(Error::BlockOutOfRange { j, j_max: self.j_max });
        }
        Ok(&self.blocks[(j + 1) as usize])
    }

    /// Value of block `j` at a given `|k|`, as used to fill the multipliers.
    pub fn profile(&self, j: i32, k: f64) -> f64 {
        let r = k / self.k0;
        match j {
            -1 => chi(r),
            j if j == self.j_max => 1.0 - chi(r / 2f64.powi(j)),
            j => chi(r / 2f64.powi(j + 1)) - chi(r / 2f64.powi(j)),
        }
    }
}

/// Builds the partition with `k0 = 8 pi / L` and
/// `J_max = floor(log2(k_max / k0)) - 1`.
pub fn build_partition(grid: &Grid2D) -> Result<LpPartition> {
    let k0 = 8.0 * PI / grid.half_width();
    let ratio = grid.k_max() / k0;
    let j_max = if ratio >= 1.0 {
        ratio.log2().floor() as i32 - 1
    } else {
        -1
    };
    if j_max < 1 {
        return Err(Error::PartitionTooCoarse(grid.n()));
    }
    let mut part = LpPartition {
        grid: grid.clone(),
        k0,
        j_max,
        blocks: Vec::new(),
    };
    let k = grid.wavenumbers();
    let n = grid.n();
    let blocks = (-1..=j_max)
        .map(|j| {
            let mut m = vec![0.0; n * n];
            m.par_chunks_mut(n).enumerate().for_each(|(a, row)| {
                for (b, v) in row.iter_mut().enumerate() {
                    *v = part.profile(j, k[a].hypot(k[b]));
                }
            });
            m
        })
        .collect();
    part.blocks = blocks;
    Ok(part)
}

/// `Delta_j f`, the inverse transform of `block_j f^`.
pub fn lp_block(f: &impl GridField, j: i32, partition: &LpPartition) -> Result<Vec<Complex64>> {
    f.grid().check_same(partition.grid())?;
    let mult = partition.block(j)?;
    Ok(apply_multiplier(f.grid(), &f.spectrum(), mult))
}

/// Norm family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormFamily {
    Besov,
    Sobolev,
    Holder,
    Lp,
    HolderChunked,
}

impl NormFamily {
    pub fn name(self) -> &'static str {
        match self {
            NormFamily::Besov => "besov",
            NormFamily::Sobolev => "sobolev",
            NormFamily::Holder => "holder",
            NormFamily::Lp => "lp",
            NormFamily::HolderChunked => "holder_chunked",
        }
    }
}

mod exponent {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            Repr::Text("inf".into()).serialize(s)
        } else {
            Repr::Num(*v).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if matches!(t.as_str(), "inf" | "infinity" | "∞") => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad exponent {t:?}"))),
        }
    }
}

/// What to measure: family, regularity `alpha`, integrability `p`, summability
/// `q` and weight exponent `mu` of `<x>^mu`. Infinite exponents are
/// `f64::INFINITY`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormRequest {
    pub family: NormFamily,
    pub alpha: f64,
    #[serde(with = "exponent")]
    pub p: f64,
    #[serde(with = "exponent")]
    pub q: f64,
    pub mu: f64,
}

impl NormRequest {
    pub fn besov(alpha: f64, p: f64, q: f64, mu: f64) -> Self {
        Self {
            family: NormFamily::Besov,
            alpha,
            p,
            q,
            mu,
        }
    }

    /// `H^alpha(<x>^mu)`, measured as `|| <x>^mu (1 - Delta)^(alpha/2) f ||_2`.
    pub fn sobolev(alpha: f64, mu: f64) -> Self {
        Self {
            family: NormFamily::Sobolev,
            alpha,
            p: 2.0,
            q: 2.0,
            mu,
        }
    }

    /// `C^alpha(<x>^mu) = B^alpha_{inf,inf}(<x>^mu)`.
    pub fn holder(alpha: f64, mu: f64) -> Self {
        Self {
            family: NormFamily::Holder,
            alpha,
            p: f64::INFINITY,
            q: f64::INFINITY,
            mu,
        }
    }

    pub fn lp(p: f64, mu: f64) -> Self {
        Self {
            family: NormFamily::Lp,
            alpha: 0.0,
            p,
            q: p,
            mu,
        }
    }

    pub fn holder_chunked(alpha: f64, mu: f64) -> Self {
        Self {
            family: NormFamily::HolderChunked,
            alpha,
            p: f64::INFINITY,
            q: f64::INFINITY,
            mu,
        }
    }

    /// Complex interpolation of two Besov requests at `theta`: regularity and
    /// weight interpolate linearly, `1/p` and `1/q` too.
    pub fn interpolate(a: &NormRequest, b: &NormRequest, theta: f64) -> Result<NormRequest> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::InvalidNorm(format!("theta = {theta} outside [0, 1]")));
        }
        if a.family != b.family {
            return Err(Error::InvalidNorm("interpolating different families".into()));
        }
        let mix = |x: f64, y: f64| (1.0 - theta) * x + theta * y;
        let inv = |x: f64| 1.0 / x;
        let out = NormRequest {
            family: a.family,
            alpha: mix(a.alpha, b.alpha),
            p: inv(mix(inv(a.p), inv(b.p))),
            q: inv(mix(inv(a.q), inv(b.q))),
            mu: mix(a.mu, b.mu),
        };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidNorm(m));
        if !self.alpha.is_finite() || !self.mu.is_finite() {
            return bad(format!("alpha = {}, mu = {} must be finite", self.alpha, self.mu));
        }
        if !(self.p >= 1.0) || !(self.q >= 1.0) {
            return bad(format!("p = {}, q = {} must be at least 1", self.p, self.q));
        }
        match self.family {
            NormFamily::Sobolev if self.p != 2.0 || self.q != 2.0 => bad("sobolev needs p = q = 2".into()),
            NormFamily::Holder if self.p.is_finite() || self.q.is_finite() => {
                bad("holder needs p = q = inf".into())
            }
            NormFamily::HolderChunked if !(self.alpha > 0.0 && self.alpha < 1.0) => {
                bad(format!("chunked holder needs alpha in (0, 1), got {}", self.alpha))
            }
            _ => Ok(()),
        }
    }
}

/// A measured norm; `per_block` holds the `l^q` summands
/// `2^(j alpha) ||<x>^mu Delta_j f||_p` for the block families.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormValue {
    pub value: f64,
    pub per_block: Vec<f64>,
}

fn weighted_lp(grid: &Grid2D, values: &[Complex64], weight: Option<&[f64]>, p: f64) -> f64 {
    let w = |i: usize| weight.map_or(1.0, |w| w[i]);
    if p.is_infinite() {
        values
            .par_iter()
            .enumerate()
            .map(|(i, v)| v.norm() * w(i))
            .reduce(|| 0.0, f64::max)
    } else {
        let s: f64 = values
            .par_iter()
            .enumerate()
            .map(|(i, v)| (v.norm() * w(i)).powf(p))
            .sum();
        (grid.cell_area() * s).powf(1.0 / p)
    }
}

fn lq(values: &[f64], q: f64) -> f64 {
    if q.is_infinite() {
        values.iter().copied().fold(0.0, f64::max)
    } else {
        values.iter().map(|v| v.powf(q)).sum::<f64>().powf(1.0 / q)
    }
}

fn weight_values(grid: &Grid2D, mu: f64) -> Option<Vec<f64>> {
    (mu != 0.0).then(|| crate::grid::weight_field(grid, mu).into_values())
}

/// `||<x>^mu f||_p`; needs no partition.
pub fn lp_norm(f: &impl GridField, p: f64, mu: f64) -> f64 {
    let grid = f.grid();
    let weight = weight_values(grid, mu);
    weighted_lp(grid, &f.complex_values(), weight.as_deref(), p)
}

/// `||<x>^mu (1 - Delta)^(alpha/2) f||_2`; needs no partition.
pub fn sobolev_norm(f: &impl GridField, alpha: f64, mu: f64) -> f64 {
    let grid = f.grid();
    let weight = weight_values(grid, mu);
    let bessel: Vec<f64> = grid.k_squared().iter().map(|k2| (1.0 + k2).powf(0.5 * alpha)).collect();
    let g = apply_multiplier(grid, &f.spectrum(), &bessel);
    weighted_lp(grid, &g, weight.as_deref(), 2.0)
}

/// Evaluates a norm of a real or complex field.
pub fn norm(f: &impl GridField, req: &NormRequest, partition: &LpPartition) -> Result<NormValue> {
    req.validate()?;
    let grid = f.grid();
    grid.check_same(partition.grid())?;
    match req.family {
        NormFamily::Lp => Ok(NormValue {
            value: lp_norm(f, req.p, req.mu),
            per_block: Vec::new(),
        }),
        NormFamily::HolderChunked => Ok(NormValue {
            value: holder_chunked(f, req.alpha, req.mu)?,
            per_block: Vec::new(),
        }),
        NormFamily::Sobolev => Ok(NormValue {
            value: sobolev_norm(f, req.alpha, req.mu),
            per_block: Vec::new(),
        }),
        NormFamily::Besov | NormFamily::Holder => {
            let weight = weight_values(grid, req.mu);
            let weight = weight.as_deref();
            let spec = f.spectrum();
            let per_block: Vec<f64> = partition
                .indices()
                .map(|j| {
                    let block = apply_multiplier(grid, &spec, partition.block(j)?);
                    Ok(2f64.powf(j as f64 * req.alpha) * weighted_lp(grid, &block, weight, req.p))
                })
                .collect::<Result<_>>()?;
            Ok(NormValue {
                value: lq(&per_block, req.q),
                per_block,
            })
        }
    }
}

/// Offsets `(di, dj)` in grid units of the Hölder stencil: axis and diagonal
/// directions at dyadic lengths, all with physical length at most 1.
pub fn holder_stencil(grid: &Grid2D) -> Vec<(i64, i64)> {
    let h = grid.spacing();
    let mut out = Vec::new();
    let mut d: i64 = 1;
    while out.len() + 4 <= HOLDER_STENCIL_MAX && (d as f64) * h <= 1.0 && (d as usize) < grid.n() / 2 {
        out.push((d, 0));
        out.push((0, d));
        if (d as f64) * h * std::f64::consts::SQRT_2 <= 1.0 {
            out.push((d, d));
            out.push((d, -d));
        }
        d *= 2;
    }
    out
}

/// `sup_k <k>^mu ||f||_{C^alpha([-k,k]^2)}` over `k = 1..=floor(L)`, where the
/// local norm is `sup |f|` plus the largest difference quotient over stencil
/// pairs inside the box. Pairs never wrap around the periodic boundary.
pub fn holder_chunked(f: &impl GridField, alpha: f64, mu: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidNorm(format!("chunked holder needs alpha in (0, 1), got {alpha}")));
    }
    let grid = f.grid();
    let kmax = grid.half_width().floor() as usize;
    if kmax < 1 {
        return Err(Error::InvalidNorm("box too small for unit chunks".into()));
    }
    let n = grid.n();
    let h = grid.spacing();
    let stencil = holder_stencil(grid);
    if stencil.is_empty() {
        return Err(Error::InvalidNorm(format!("grid spacing {h} exceeds the unit stencil radius")));
    }
    let vals = f.complex_values();
    // Smallest chunk index containing coordinate index i.
    let chunk = |i: usize| -> usize {
        let x = grid.coord(i).abs();
        (x - 1e-9).ceil().max(1.0) as usize
    };
    let chunks: Vec<usize> = (0..n).map(chunk).collect();
    let (sup, semi) = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut sup = vec![0.0f64; kmax + 2];
            let mut semi = vec![0.0f64; kmax + 2];
            for j in 0..n {
                let here = chunks[i].max(chunks[j]);
                let v = vals[i * n + j];
                sup[here.min(kmax + 1)] = sup[here.min(kmax + 1)].max(v.norm());
                for &(di, dj) in &stencil {
                    let (a, b) = (i as i64 + di, j as i64 + dj);
                    if a < 0 || b < 0 || a >= n as i64 || b >= n as i64 {
                        continue;
                    }
                    let (a, b) = (a as usize, b as usize);
                    let c = here.max(chunks[a]).max(chunks[b]).min(kmax + 1);
                    let dist = h * ((di * di + dj * dj) as f64).sqrt();
                    let qv = (v - vals[a * n + b]).norm() / dist.powf(alpha);
                    semi[c] = semi[c].max(qv);
                }
            }
            (sup, semi)
        })
        .reduce(
            || (vec![0.0; kmax + 2], vec![0.0; kmax + 2]),
            |(mut s1, mut q1), (s2, q2)| {
                for k in 0..s1.len() {
                    s1[k] = s1[k].max(s2[k]);
                    q1[k] = q1[k].max(q2[k]);
                }
                (s1, q1)
            },
        );
    let mut best = 0.0f64;
    let (mut run_sup, mut run_semi) = (0.0f64, 0.0f64);
    for k in 1..=kmax {
        if k == 1 {
            run_sup = sup[0].max(sup[1]);
            run_semi = semi[0].max(semi[1]);
        } else {
            run_sup = run_sup.max(sup[k]);
            run_semi = run_semi.max(semi[k]);
        }
        let w = (1.0 + (k * k) as f64).powf(0.5 * mu);
        best = best.max(w * (run_sup + run_semi));
    }
    Ok(best)
}

/// `|int f g|` divided by `||f||_{B^alpha_{p,q}(<x>^mu)} ||g||_{B^-alpha_{p',q'}(<x>^-mu)}`.
pub fn pairing_ratio(
    f: &RealField,
    g: &RealField,
    alpha: f64,
    p: f64,
    q: f64,
    mu: f64,
    partition: &LpPartition,
) -> Result<f64> {
    let conj = |e: f64| if e.is_infinite() { 1.0 } else if e == 1.0 { f64::INFINITY } else { e / (e - 1.0) };
    let lhs = f.zip_map(g, |a, b| a * b)?;
    let lhs = crate::grid::integrate(&lhs, 0.0).abs();
    let nf = norm(f, &NormRequest::besov(alpha, p, q, mu), partition)?.value;
    let ng = norm(g, &NormRequest::besov(-alpha, conj(p), conj(q), -mu), partition)?.value;
    Ok(lhs / (nf * ng))
}

/// Outcome of the calibrate-then-freeze protocol for `lhs <= C rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenCheck {
    /// Largest `lhs/rhs` on the calibration set.
    pub calibrated: f64,
    /// Frozen constant, `margin * calibrated`.
    pub constant: f64,
    /// Largest `lhs/rhs` on the verification set.
    pub verified: f64,
    pub violations: usize,
    pub pass: bool,
}

/// Fits `C` on the calibration pairs, multiplies by `margin` and checks each
/// verification pair `(lhs, rhs)` against the frozen value.
pub fn calibrate_then_freeze(
    calibration: &[(f64, f64)],
    verification: &[(f64, f64)],
    margin: f64,
) -> Result<FrozenCheck> {
    if calibration.is_empty() || verification.is_empty() {
        return Err(Error::InvalidParameter("calibration and verification sets must be non-empty".into()));
    }
    if !(margin >= 1.0) {
        return Err(Error::InvalidParameter(format!("margin {margin} must be at least 1")));
    }
    let ratio = |&(l, r): &(f64, f64)| if r > 0.0 { l / r } else if l > 0.0 { f64::INFINITY } else { 0.0 };
    let calibrated = calibration.iter().map(ratio).fold(0.0, f64::max);
    let constant = margin * calibrated;
    let ratios: Vec<f64> = verification.iter().map(ratio).collect();
    let verified = ratios.iter().copied().fold(0.0, f64::max);
    let violations = ratios.iter().filter(|&&r| !(r <= constant)).count();
    Ok(FrozenCheck {
        calibrated,
        constant,
        verified,
        violations,
        pass: violations == 0 && constant.is_finite(),
    })
}

/// One entry of a norm batch manifest: a field file stem, relative to the
/// manifest, and the norms to evaluate on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchEntry {
    pub field: String,
    pub requests: Vec<NormRequest>,
}

/// Evaluates every request of a JSON batch manifest (a list of
/// [`BatchEntry`]) and writes `field_label,family,alpha,p,q,mu,value` rows to
/// `csv_out`. Returns the number of rows.
pub fn evaluate_batch(manifest: &std::path::Path, csv_out: &std::path::Path) -> Result<usize> {
    use crate::io::{self, FieldKind};
    let entries: Vec<BatchEntry> = serde_json::from_str(&std::fs::read_to_string(manifest)?)?;
    let base = manifest.parent().unwrap_or(std::path::Path::new("."));
    if let Some(dir) = csv_out.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(csv_out)?;
    w.write_record(["field_label", "family", "alpha", "p", "q", "mu", "value"])?;
    let mut partitions: Vec<LpPartition> = Vec::new();
    let mut rows = 0;
    for e in &entries {
        let stem = base.join(&e.field);
        let header = io::read_header(&stem)?;
        let field = match header.kind {
            FieldKind::Real => io::read_real(&stem)?.0.to_complex(),
            FieldKind::Complex => io::read_complex(&stem)?.0,
        };
        let grid = field.grid().clone();
        if !partitions.iter().any(|p| p.grid() == &grid) {
            partitions.push(build_partition(&grid)?);
        }
        let part = partitions.iter().find(|p| p.grid() == &grid).expect("inserted above");
        for r in &e.requests {
            let v = norm(&field, r, part)?.value;
            let ex = |x: f64| if x.is_infinite() { "inf".to_string() } else { x.to_string() };
            w.write_record([
                header.label.clone(),
                r.family.name().to_string(),
                r.alpha.to_string(),
                ex(r.p),
                ex(r.q),
                r.mu.to_string(),
                v.to_string(),
            ])?;
            rows += 1;
        }
    }
    w.flush()?;
    Ok(rows)
}

/// Random smooth field for property checks: Gaussian Fourier coefficients
/// with algebraic decay, cut at half the Nyquist radius, under a Gaussian
/// envelope of random centre and width.
pub fn random_smooth_field(grid: &Grid2D, seed: u64) -> RealField {
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let l = grid.half_width();
    let decay: f64 = rng.random_range(1.0..2.0);
    let kc = grid.k_max() * rng.random_range(0.05..0.2);
    let width = l * rng.random_range(0.12..0.3);
    let cx = l * rng.random_range(-0.2..0.2);
    let cy = l * rng.random_range(-0.2..0.2);
    let k = grid.wavenumbers();
    let n = grid.n();
    let cut = 0.5 * grid.k_max();
    let mut spec = vec![Complex64::new(0.0, 0.0); grid.len()];
    for a in 0..n {
        for b in 0..n {
            let kk = k[a].hypot(k[b]);
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            if kk <= cut {
                spec[a * n + b] = Complex64::new(re, im) * (1.0 + (kk / kc).powi(2)).powf(-decay);
            }
        }
    }
    let base = RealField::from_spectrum(grid, spec);
    let scale = 1.0 / base.max_abs().max(f64::MIN_POSITIVE);
    let env = RealField::from_fn(grid, |x, y| (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * width * width)).exp());
    base.zip_map(&env, |f, e| scale * f * e).expect("same grid")
}

/// Result of one norm property over a family of random fields.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyReport {
    pub property: String,
    pub parameters: String,
    pub check: FrozenCheck,
}

fn describe(r: &NormRequest) -> String {
    let e = |v: f64| if v.is_infinite() { "inf".to_string() } else { format!("{v}") };
    format!("{}(alpha={}, p={}, q={}, mu={})", r.family.name(), r.alpha, e(r.p), e(r.q), r.mu)
}

fn split_check(pairs: Vec<(f64, f64)>, margin: f64) -> Result<FrozenCheck> {
    let half = pairs.len() / 2;
    calibrate_then_freeze(&pairs[..half], &pairs[half..], margin)
}

/// Two-sided pull-weight bound
/// `||f||_{B(<x>^mu)} ~ ||<x>^mu f||_{B(<x>^0)}`, checked as the one-sided
/// bound `max(r, 1/r) <= C*` on the norm ratio `r`.
pub fn pull_weight_check(fields: &[RealField], req: &NormRequest, partition: &LpPartition, margin: f64) -> Result<PropertyReport> {
    let weight = crate::grid::weight_field(partition.grid(), req.mu);
    let unweighted = NormRequest { mu: 0.0, ..*req };
    let pairs = fields
        .iter()
        .map(|f| {
            let a = norm(f, req, partition)?.value;
            let b = norm(&f.zip_map(&weight, |x, w| x * w)?, &unweighted, partition)?.value;
            Ok(((a / b).max(b / a), 1.0))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PropertyReport {
        property: "pull_weight".into(),
        parameters: describe(req),
        check: split_check(pairs, margin)?,
    })
}

/// `||f||_theta <= C ||f||_0^(1-theta) ||f||_1^theta`.
pub fn interpolation_check(
    fields: &[RealField],
    a: &NormRequest,
    b: &NormRequest,
    theta: f64,
    partition: &LpPartition,
    margin: f64,
) -> Result<PropertyReport> {
    if a.p.max(a.q).is_infinite() && b.p.max(b.q).is_infinite() {
        return Err(Error::Hypothesis("interpolation needs one endpoint with finite p and q".into()));
    }
    let mid = NormRequest::interpolate(a, b, theta)?;
    let pairs = fields
        .iter()
        .map(|f| {
            let l = norm(f, &mid, partition)?.value;
            let r = norm(f, a, partition)?.value.powf(1.0 - theta) * norm(f, b, partition)?.value.powf(theta);
            Ok((l, r))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PropertyReport {
        property: "interpolation".into(),
        parameters: format!("{} / {} at theta={theta}", describe(a), describe(b)),
        check: split_check(pairs, margin)?,
    })
}

/// `||f||_large <= C ||f||_small` for the embedding of `small` into `large`.
pub fn embedding_check(
    fields: &[RealField],
    small: &NormRequest,
    large: &NormRequest,
    partition: &LpPartition,
    margin: f64,
) -> Result<PropertyReport> {
    let ok = large.mu <= small.mu
        && large.alpha - 2.0 / large.p <= small.alpha - 2.0 / small.p
        && small.q <= large.q
        && small.p <= large.p;
    if !ok {
        return Err(Error::Hypothesis(format!(
            "{} does not embed into {}",
            describe(small),
            describe(large)
        )));
    }
    let pairs = fields
        .iter()
        .map(|f| Ok((norm(f, large, partition)?.value, norm(f, small, partition)?.value)))
        .collect::<Result<Vec<_>>>()?;
    Ok(PropertyReport {
        property: "embedding".into(),
        parameters: format!("{} into {}", describe(small), describe(large)),
        check: split_check(pairs, margin)?,
    })
}

/// `||f1 f2||_{B^a_{p,p}(<x>^(mu1+mu2))} <= C ||f1||_{B^a1_{p1,p1}(<x>^mu1)} ||f2||_{B^a2_{p2,p2}(<x>^mu2)}`
/// with `a = min(a1, a2)` and `1/p = 1/p1 + 1/p2`.
pub fn multiplication_check(
    pairs_of_fields: &[(RealField, RealField)],
    (a1, p1, mu1): (f64, f64, f64),
    (a2, p2, mu2): (f64, f64, f64),
    partition: &LpPartition,
    margin: f64,
) -> Result<PropertyReport> {
    if !(a1 > 0.0 && a2 > 0.0 && p1 >= 2.0 && p2 >= 2.0) {
        return Err(Error::Hypothesis("multiplication needs positive regularities and p1, p2 >= 2".into()));
    }
    let p = 1.0 / (1.0 / p1 + 1.0 / p2);
    let target = NormRequest::besov(a1.min(a2), p, p, mu1 + mu2);
    let r1 = NormRequest::besov(a1, p1, p1, mu1);
    let r2 = NormRequest::besov(a2, p2, p2, mu2);
    let pairs = pairs_of_fields
        .iter()
        .map(|(f, g)| {
            let prod = f.zip_map(g, |a, b| a * b)?;
            Ok((
                norm(&prod, &target, partition)?.value,
                norm(f, &r1, partition)?.value * norm(g, &r2, partition)?.value,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PropertyReport {
        property: "multiplication".into(),
        parameters: format!("{} x {} -> {}", describe(&r1), describe(&r2), describe(&target)),
        check: split_check(pairs, margin)?,
    })
}

/// Duality pairing bound `|int f g| <= C ||f||_{B^alpha_{p,q}(<x>^mu)} ||g||_{B^-alpha_{p',q'}(<x>^-mu)}`.
pub fn pairing_check(
    pairs_of_fields: &[(RealField, RealField)],
    alpha: f64,
    p: f64,
    q: f64,
    mu: f64,
    partition: &LpPartition,
    margin: f64,
) -> Result<PropertyReport> {
    let pairs = pairs_of_fields
        .iter()
        .map(|(f, g)| Ok((pairing_ratio(f, g, alpha, p, q, mu, partition)?, 1.0)))
        .collect::<Result<Vec<_>>>()?;
    Ok(PropertyReport {
        property: "pairing".into(),
        parameters: describe(&NormRequest::besov(alpha, p, q, mu)),
        check: split_check(pairs, margin)?,
    })
}

/// Runs the standard property suite on `count` random fields drawn from
/// consecutive seeds starting at `seed`: pull-weight, interpolation,
/// embedding, multiplication and pairing, each calibrated on the first half
/// of the fields and verified on the second.
pub fn property_suite(partition: &LpPartition, count: usize, seed: u64, margin: f64) -> Result<Vec<PropertyReport>> {
    let grid = partition.grid();
    let inf = f64::INFINITY;
    let fields: Vec<RealField> = (0..count as u64).map(|i| random_smooth_field(grid, seed + i)).collect();
    let others: Vec<RealField> = (0..count as u64).map(|i| random_smooth_field(grid, seed + 1_000_003 + i)).collect();
    let pairs: Vec<(RealField, RealField)> = fields.iter().cloned().zip(others.iter().cloned()).collect();
    let mut out = Vec::new();
    for req in [
        NormRequest::besov(0.5, 2.0, 2.0, 1.0),
        NormRequest::besov(1.0, 4.0, 2.0, 0.5),
        NormRequest::besov(0.3, 2.0, inf, -0.5),
        NormRequest::holder(-0.5, -1.0),
    ] {
        out.push(pull_weight_check(&fields, &req, partition, margin)?);
    }
    for (a, b, theta) in [
        (NormRequest::besov(0.0, 2.0, 2.0, 0.0), NormRequest::besov(1.0, 4.0, 4.0, 1.0), 0.5),
        (NormRequest::besov(-0.5, 2.0, 2.0, -1.0), NormRequest::besov(1.5, 2.0, 2.0, 1.0), 0.3),
        (NormRequest::besov(0.2, 2.0, 2.0, 0.5), NormRequest::besov(0.8, inf, inf, -0.5), 0.5),
    ] {
        out.push(interpolation_check(&fields, &a, &b, theta, partition, margin)?);
    }
    for (small, large) in [
        (NormRequest::besov(1.0, 2.0, 2.0, 1.0), NormRequest::besov(0.0, inf, inf, 0.0)),
        (NormRequest::besov(0.5, 2.0, 1.0, 0.0), NormRequest::besov(0.5, 2.0, 2.0, 0.0)),
        (NormRequest::besov(0.8, 2.0, 2.0, 0.5), NormRequest::besov(-0.2, 4.0, 4.0, 0.0)),
    ] {
        out.push(embedding_check(&fields, &small, &large, partition, margin)?);
    }
    for (f1, f2) in [((0.5, 4.0, 0.5), (0.7, 4.0, -0.5)), ((0.3, inf, 0.0), (0.6, 2.0, 1.0)), ((0.5, 4.0, -0.5), (0.5, inf, -0.5))] {
        out.push(multiplication_check(&pairs, f1, f2, partition, margin)?);
    }
    out.push(pairing_check(&pairs, 0.5, 2.0, 2.0, 0.5, partition, margin)?);
    Ok(out)
}

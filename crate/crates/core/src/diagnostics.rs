//! Conserved quantities of the transformed flow, Monte-Carlo scaling studies
//! of the noise objects, and inequality checks along trajectories.

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::besov::{calibrate_then_freeze, lp_norm, norm, sobolev_norm, FrozenCheck, LpPartition, NormRequest};
use crate::error::{Error, Result};
use crate::grid::{gradient, weight_field, ComplexField, GridField, RealField};
use crate::noise::{build_bundle_with, exp_y, sample_white_noise, GreensKernel, Mollifier, NoiseBundle};
use crate::solver::{evolve, evolve_with, time_derivative, transform_to_u, ModelParams, Scheme, SolverState, Trajectory};

/// Studies with fewer seeds are flagged and kept out of gating.
pub const MIN_CONFIDENT_SEEDS: usize = 30;

/// Constant margin of the calibrate-then-freeze protocol.
pub const FREEZE_MARGIN: f64 = 2.0;

/// Mass `int |v|^2 e^(-2Y)`, energy `H(v)` and the gradient term
/// `int |grad v|^2 e^(-2Y)` of the transformed flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConservedQuantities {
    #[serde(with = "crate::io::lenient_f64")]
    pub mass: f64,
    #[serde(with = "crate::io::lenient_f64")]
    pub energy: f64,
    #[serde(with = "crate::io::lenient_f64")]
    pub gradient: f64,
}

/// `int_0^m (s + r)^sigma ds`, the primitive behind the nonlinear energy.
fn primitive(params: &ModelParams, m2: f64) -> f64 {
    let r = params.regularization;
    let s1 = params.sigma + 1.0;
    if r == 0.0 {
        m2.powf(s1) / s1
    } else {
        ((m2 + r).powf(s1) - r.powf(s1)) / s1
    }
}

/// Conserved quantities of `v` under `bundle`:
/// `H(v) = int (|grad v|^2/2 - |v|^2 W/2 - lambda/(2 sigma + 2) |v|^(2 sigma + 2) e^(-2 sigma Y)) e^(-2Y)`.
pub fn conserved_v(v: &ComplexField, bundle: &NoiseBundle, params: &ModelParams) -> Result<ConservedQuantities> {
    let grid = v.grid();
    grid.check_same(bundle.grid())?;
    let e2 = exp_y(bundle.y(), -2.0)?;
    let (vx, vy) = gradient(v);
    let area = grid.cell_area();
    let lambda = params.lambda;
    let (mass, energy, grad) = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let w = e2.values()[i];
            let m2 = v.values()[i].norm_sqr();
            let g2 = vx.values()[i].norm_sqr() + vy.values()[i].norm_sqr();
            // |u|^2 = |v|^2 e^(-2Y)
            let nonlinear = 0.5 * lambda * primitive(params, m2 * w);
            let e = (0.5 * g2 - 0.5 * m2 * bundle.pot().values()[i]) * w - nonlinear;
            (m2 * w, e, g2 * w)
        })
        .reduce(|| (0.0, 0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    Ok(ConservedQuantities {
        mass: area * mass,
        energy: area * energy,
        gradient: area * grad,
    })
}

/// Conserved quantities of a solver state (stored in u-form).
pub fn conserved(state: &SolverState, bundle: &NoiseBundle, params: &ModelParams) -> Result<ConservedQuantities> {
    let v = crate::solver::transform_to_v(&state.u, bundle)?;
    conserved_v(&v, bundle, params)
}

/// Drift of mass and energy along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    /// `max_t |N(t) - N(0)| / N(0)`.
    pub mass_drift: f64,
    /// `max_t |H(t) - H(0)| / max(|H(0)|, tiny)`.
    pub energy_drift: f64,
    /// `max_t |2 (H(t) - H(0))| / int |grad v(t)|^2 e^(-2Y)`, the residual of
    /// the energy identity for the gradient term.
    pub identity_residual: f64,
}

pub fn drift(traj: &Trajectory) -> DriftReport {
    let r0 = traj.records[0].conserved;
    let mut out = DriftReport {
        mass_drift: 0.0,
        energy_drift: 0.0,
        identity_residual: 0.0,
    };
    for r in &traj.records {
        let c = r.conserved;
        if r0.mass > 0.0 {
            out.mass_drift = out.mass_drift.max((c.mass - r0.mass).abs() / r0.mass);
        }
        let de = c.energy - r0.energy;
        out.energy_drift = out.energy_drift.max(de.abs() / r0.energy.abs().max(f64::MIN_POSITIVE));
        if c.gradient > 0.0 {
            out.identity_residual = out.identity_residual.max((2.0 * de).abs() / c.gradient);
        }
    }
    out
}

/// Regression family of a scaling study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitFamily {
    /// `y = a + b |log eps|`.
    LinearLogEps,
    /// `log y = a + b log x`; `b` is the exponent.
    PowerLaw,
    /// `log y = a + b k`; the rate is `-b / log 2`.
    Geometric,
    /// `log y = a + b log(1 + |log eps|)`.
    PolyLog,
}

impl FitFamily {
    fn transform(self, x: f64, y: f64) -> (f64, f64) {
        match self {
            FitFamily::LinearLogEps => (x.ln().abs(), y),
            FitFamily::PowerLaw => (x.ln(), y.ln()),
            FitFamily::Geometric => (x, y.ln()),
            FitFamily::PolyLog => ((1.0 + x.ln().abs()).ln(), y.ln()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub family: FitFamily,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub slope_stderr: f64,
}

impl Fit {
    /// Exponent in the family's natural parametrization: the slope, except
    /// for geometric fits where it is the rate `kappa` in `2^(-k kappa)`.
    pub fn exponent(&self) -> f64 {
        match self.family {
            FitFamily::Geometric => -self.slope / std::f64::consts::LN_2,
            _ => self.slope,
        }
    }
}

/// Ordinary least squares with `R^2` and the standard error of the slope.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64, f64)> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return Err(Error::InvalidParameter(format!("need at least two aligned points, got {n}")));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("regression data".into()));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("regression abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    let stderr = if n > 2 { (sse / (nf - 2.0) / sxx).sqrt() } else { 0.0 };
    Ok((slope, intercept, r2, stderr))
}

pub fn fit(family: FitFamily, xs: &[f64], ys: &[f64]) -> Result<Fit> {
    let (tx, ty): (Vec<f64>, Vec<f64>) = xs.iter().zip(ys).map(|(&x, &y)| family.transform(x, y)).unzip();
    let (slope, intercept, r_squared, slope_stderr) = linear_fit(&tx, &ty)?;
    Ok(Fit {
        family,
        slope,
        intercept,
        r_squared,
        slope_stderr,
    })
}

/// One raw Monte-Carlo sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawPoint {
    pub scale: f64,
    pub seed: u64,
    pub value: f64,
}

/// Mean and standard error of one scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalePoint {
    pub scale: f64,
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingStudy {
    pub name: String,
    /// `eps`, `k` or `dt`.
    pub variable: String,
    pub raw: Vec<RawPoint>,
    pub points: Vec<ScalePoint>,
    pub fit: Fit,
    pub low_confidence: bool,
    pub pass: Option<bool>,
}

#[derive(Serialize)]
struct StudySummary<'a> {
    name: &'a str,
    variable: &'a str,
    family: FitFamily,
    slope: f64,
    intercept: f64,
    r_squared: f64,
    slope_stderr: f64,
    exponent: f64,
    low_confidence: bool,
    pass: Option<bool>,
}

impl ScalingStudy {
    /// Aggregates raw samples per scale (sorted by scale, then seed, so the
    /// result does not depend on evaluation order) and fits `family`.
    pub fn from_raw(name: &str, variable: &str, mut raw: Vec<RawPoint>, family: FitFamily) -> Result<Self> {
        raw.sort_by(|a, b| a.scale.total_cmp(&b.scale).then(a.seed.cmp(&b.seed)));
        let mut points: Vec<ScalePoint> = Vec::new();
        for chunk in raw.chunk_by(|a, b| a.scale == b.scale) {
            let n = chunk.len();
            let mean = chunk.iter().map(|p| p.value).sum::<f64>() / n as f64;
            let stderr = if n > 1 {
                let var = chunk.iter().map(|p| (p.value - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                (var / n as f64).sqrt()
            } else {
                0.0
            };
            points.push(ScalePoint {
                scale: chunk[0].scale,
                mean,
                stderr,
                samples: n,
            });
        }
        if points.len() < 2 {
            return Err(Error::InvalidParameter(format!("study {name} needs at least two scales")));
        }
        let xs: Vec<f64> = points.iter().map(|p| p.scale).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.mean).collect();
        let fit = fit(family, &xs, &ys)?;
        let min_samples = points.iter().map(|p| p.samples).min().unwrap_or(0);
        Ok(Self {
            name: name.to_string(),
            variable: variable.to_string(),
            raw,
            low_confidence: min_samples < MIN_CONFIDENT_SEEDS || points.len() < 4,
            points,
            fit,
            pass: None,
        })
    }

    /// Ratios `mean[i+1] / mean[i]` in the order of decreasing scale for
    /// `eps`-type variables and increasing for `k`.
    pub fn successive_ratios(&self) -> Vec<f64> {
        let mut means: Vec<f64> = self.points.iter().map(|p| p.mean).collect();
        if self.variable != "k" {
            means.reverse();
        }
        means.windows(2).map(|w| w[1] / w[0]).collect()
    }

    /// Writes `<stem>_raw.csv`, `<stem>_agg.csv` and `<stem>_summary.json`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join(format!("{stem}_raw.csv")))?;
        for p in &self.raw {
            w.serialize(p)?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join(format!("{stem}_agg.csv")))?;
        for p in &self.points {
            w.serialize(p)?;
        }
        w.flush()?;
        let summary = StudySummary {
            name: &self.name,
            variable: &self.variable,
            family: self.fit.family,
            slope: self.fit.slope,
            intercept: self.fit.intercept,
            r_squared: self.fit.r_squared,
            slope_stderr: self.fit.slope_stderr,
            exponent: self.fit.exponent(),
            low_confidence: self.low_confidence,
            pass: self.pass,
        };
        fs::write(dir.join(format!("{stem}_summary.json")), serde_json::to_string_pretty(&summary)?)?;
        Ok(())
    }
}

/// Noise statistic measured by [`noise_scaling_study`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseStatistic {
    /// `||grad Y_eps||_{L^p(<x>^-delta)}`; requires `p > 2/delta`.
    GradYLp { p: f64, delta: f64 },
    /// `||:|grad Y_eps|^2:||_{L^p(<x>^-delta)}`; requires `p > 2/delta`.
    WickLp { p: f64, delta: f64 },
    /// `||e^(a Y_eps)||_{C^alpha(<x>^-delta)}`.
    EyBound { a: f64, alpha: f64, delta: f64 },
    /// `||xi_eps||_{C^(alpha-2)}` restricted to `[-k, k]^2`; the study
    /// variable is `k` at the single scale given.
    HolderGrowth { alpha: f64 },
}

impl NoiseStatistic {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseStatistic::GradYLp { p, delta } | NoiseStatistic::WickLp { p, delta } => {
                if !(delta > 0.0) {
                    return Err(Error::Hypothesis(format!("weight exponent delta = {delta} must be positive")));
                }
                if !(p > 2.0 / delta) {
                    return Err(Error::Hypothesis(format!(
                        "the L^p log blow-up bound requires p > 2/delta, got p = {p}, delta = {delta}"
                    )));
                }
                Ok(())
            }
            NoiseStatistic::EyBound { alpha, delta, .. } => {
                if !(alpha > 0.0 && alpha < 1.0) || !(delta > 0.0) {
                    return Err(Error::Hypothesis(format!(
                        "the e^(aY) bound needs alpha in (0, 1) and delta > 0, got {alpha}, {delta}"
                    )));
                }
                Ok(())
            }
            NoiseStatistic::HolderGrowth { alpha } => {
                if !(alpha > 0.0 && alpha < 1.0) {
                    return Err(Error::Hypothesis(format!("alpha = {alpha} must lie in (0, 1)")));
                }
                Ok(())
            }
        }
    }

    fn name(&self) -> &'static str {
        match self {
            NoiseStatistic::GradYLp { .. } => "grad_y_lp",
            NoiseStatistic::WickLp { .. } => "wick_lp",
            NoiseStatistic::EyBound { .. } => "ey_bound",
            NoiseStatistic::HolderGrowth { .. } => "holder_growth",
        }
    }
}

/// Largest `|Delta_j f|`-weighted block value restricted to `[-k, k]^2`, for
/// `k = 1..=kmax`: `sup_j 2^(j alpha) sup_{[-k,k]^2} |Delta_j f|`.
pub fn local_holder_profile(f: &RealField, alpha: f64, partition: &LpPartition, kmax: usize) -> Result<Vec<f64>> {
    let grid = f.grid();
    grid.check_same(partition.grid())?;
    let n = grid.n();
    let spec = f.spectrum();
    let chunk: Vec<usize> = (0..n)
        .map(|i| (grid.coord(i).abs() - 1e-9).ceil().max(1.0) as usize)
        .collect();
    let mut out = vec![0.0f64; kmax];
    for j in partition.indices() {
        let block = crate::grid::apply_multiplier(grid, &spec, partition.block(j)?);
        let scale = 2f64.powf(j as f64 * alpha);
        let mut per = vec![0.0f64; kmax + 1];
        for (idx, z) in block.iter().enumerate() {
            let c = chunk[idx / n].max(chunk[idx % n]);
            if c <= kmax {
                per[c] = per[c].max(z.norm());
            }
        }
        let mut run = per[0];
        for k in 1..=kmax {
            run = run.max(per[k]);
            out[k - 1] = out[k - 1].max(scale * run);
        }
    }
    Ok(out)
}

fn grad_modulus(b: &NoiseBundle) -> RealField {
    b.grad_y()[0].zip_map(&b.grad_y()[1], |x, y| x.hypot(y)).expect("bundle fields share a grid")
}

/// Monte-Carlo means of a noise statistic over `seeds` at each `eps`, with
/// the family fitted against `eps` (or against `k` for
/// [`NoiseStatistic::HolderGrowth`], where only `eps_list[0]` is used).
pub fn noise_scaling_study(
    stat: NoiseStatistic,
    kernel: &GreensKernel,
    partition: &LpPartition,
    eps_list: &[f64],
    seeds: &[u64],
) -> Result<ScalingStudy> {
    stat.validate()?;
    let grid = kernel.grid();
    grid.check_same(partition.grid())?;
    if seeds.is_empty() || eps_list.is_empty() {
        return Err(Error::InvalidParameter("need at least one seed and one scale".into()));
    }
    if let NoiseStatistic::HolderGrowth { alpha } = stat {
        let kmax = grid.half_width().floor() as usize;
        let m = Mollifier::new(grid, eps_list[0])?;
        let raw = seeds
            .par_iter()
            .map(|&seed| {
                let b = build_bundle_with(&sample_white_noise(grid, seed), kernel, &m)?;
                let prof = local_holder_profile(b.xi_eps(), alpha - 2.0, partition, kmax)?;
                Ok(prof
                    .into_iter()
                    .enumerate()
                    .map(|(i, v)| RawPoint {
                        scale: (i + 1) as f64,
                        seed,
                        value: v,
                    })
                    .collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>>>()?
            .concat();
        return ScalingStudy::from_raw(stat.name(), "k", raw, FitFamily::PowerLaw);
    }
    let mollifiers = eps_list
        .iter()
        .map(|&e| Mollifier::new(grid, e))
        .collect::<Result<Vec<_>>>()?;
    let raw = seeds
        .par_iter()
        .map(|&seed| {
            let xi = sample_white_noise(grid, seed);
            mollifiers
                .iter()
                .map(|m| {
                    let b = build_bundle_with(&xi, kernel, m)?;
                    let value = match stat {
                        NoiseStatistic::GradYLp { p, delta } => lp_norm(&grad_modulus(&b), p, -delta),
                        NoiseStatistic::WickLp { p, delta } => lp_norm(b.wick(), p, -delta),
                        NoiseStatistic::EyBound { a, alpha, delta } => {
                            norm(&exp_y(b.y(), a)?, &NormRequest::holder(alpha, -delta), partition)?.value
                        }
                        NoiseStatistic::HolderGrowth { .. } => unreachable!(),
                    };
                    Ok(RawPoint {
                        scale: m.eps(),
                        seed,
                        value,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .concat();
    let family = match stat {
        NoiseStatistic::EyBound { .. } => FitFamily::PowerLaw,
        _ => FitFamily::LinearLogEps,
    };
    ScalingStudy::from_raw(stat.name(), "eps", raw, family)
}

/// Monte-Carlo estimate of `E|grad Y_eps(x)|^2` at the box centre from
/// `seeds`, returned as `(mean, stderr)`.
pub fn renorm_monte_carlo(kernel: &GreensKernel, eps: f64, seeds: &[u64]) -> Result<(f64, f64)> {
    let grid = kernel.grid();
    let m = Mollifier::new(grid, eps)?;
    let c = grid.n() / 2;
    let idx = c * grid.n() + c;
    let samples = seeds
        .par_iter()
        .map(|&s| {
            let b = build_bundle_with(&sample_white_noise(grid, s), kernel, &m)?;
            Ok(b.grad_y()[0].values()[idx].powi(2) + b.grad_y()[1].values()[idx].powi(2))
        })
        .collect::<Result<Vec<f64>>>()?;
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Difference pair measured by [`rate_study`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "pair", rename_all = "snake_case")]
pub enum RatePair {
    /// `Y_eps - Y_(eps/2)`.
    YEpsVsY,
    /// `e^(a Y_eps) - e^(a Y_(eps/2))`.
    EY { a: f64 },
    /// `phi * xi_eps - phi * xi_(eps/2)`.
    PhiTerm,
}

/// Mean of `||F_eps - F_(eps/2)||` in the requested norm over seeds, for
/// `eps` in `eps_list`, fitted as a power law in `eps`. `pass` records
/// whether the fitted exponent reaches `kappa_target`.
pub fn rate_study(
    pair: RatePair,
    kernel: &GreensKernel,
    partition: &LpPartition,
    eps_list: &[f64],
    seeds: &[u64],
    request: &NormRequest,
    kappa_target: f64,
) -> Result<ScalingStudy> {
    request.validate()?;
    let grid = kernel.grid();
    let mut all: Vec<f64> = eps_list.iter().flat_map(|&e| [e, e / 2.0]).collect();
    all.sort_by(|a, b| b.total_cmp(a));
    all.dedup();
    let mollifiers = all
        .iter()
        .map(|&e| Mollifier::new(grid, e))
        .collect::<Result<Vec<_>>>()?;
    let position = |e: f64| all.iter().position(|&x| x == e).expect("scale listed");
    let raw = seeds
        .par_iter()
        .map(|&seed| {
            let xi = sample_white_noise(grid, seed);
            let fields = mollifiers
                .iter()
                .map(|m| {
                    let b = build_bundle_with(&xi, kernel, m)?;
                    Ok(match pair {
                        RatePair::YEpsVsY => b.y().clone(),
                        RatePair::EY { a } => exp_y(b.y(), a)?,
                        RatePair::PhiTerm => b.phi_conv().clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            eps_list
                .iter()
                .map(|&e| {
                    let d = fields[position(e)].zip_map(&fields[position(e / 2.0)], |a, b| a - b)?;
                    Ok(RawPoint {
                        scale: e,
                        seed,
                        value: norm(&d, request, partition)?.value,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .concat();
    let name = match pair {
        RatePair::YEpsVsY => "y_eps_vs_y",
        RatePair::EY { .. } => "ey",
        RatePair::PhiTerm => "phi_term",
    };
    let mut study = ScalingStudy::from_raw(name, "eps", raw, FitFamily::PowerLaw)?;
    study.pass = Some(study.fit.exponent() >= kappa_target);
    Ok(study)
}

/// Setup of a dyadic Cauchy study: one noise seed, solver runs at
/// `eps = 2^-k` from the same `v0`.
#[derive(Debug, Clone)]
pub struct DyadicSetup {
    pub seed: u64,
    pub ks: Vec<u32>,
    pub params: ModelParams,
    pub t_final: f64,
    pub dt: f64,
    pub snapshot_every: usize,
    /// Sobolev order `gamma` of the increment norm.
    pub gamma: f64,
    /// Weight exponent `delta` of the increment norm.
    pub delta: f64,
    pub scheme: Scheme,
}

/// Increments `sup_t ||v_(2^-k)(t) - v_(2^-k-1)(t)||_{H^gamma(<x>^delta)}`
/// for consecutive `k`, as a geometric study in `k`. `pass` records whether
/// every successive ratio is below `max_ratio`.
pub fn dyadic_cauchy_study(
    kernel: &GreensKernel,
    v0: &ComplexField,
    setup: &DyadicSetup,
    max_ratio: f64,
) -> Result<ScalingStudy> {
    let grid = kernel.grid();
    if setup.ks.len() < 3 || setup.ks.windows(2).any(|w| w[1] != w[0] + 1) {
        return Err(Error::InvalidParameter("need at least three consecutive k".into()));
    }
    let xi = sample_white_noise(grid, setup.seed);
    let trajs = setup
        .ks
        .par_iter()
        .map(|&k| {
            let b = build_bundle_with(&xi, kernel, &Mollifier::new(grid, 2f64.powi(-(k as i32)))?)?;
            let u0 = transform_to_u(v0, &b)?;
            let traj = evolve_with(&u0, &b, &setup.params, setup.t_final, setup.dt, setup.snapshot_every, setup.scheme)?;
            let ey = exp_y(b.y(), 1.0)?;
            traj.snapshots
                .iter()
                .map(|s| s.u.mul_real(&ey))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let raw = setup
        .ks
        .windows(2)
        .zip(trajs.windows(2))
        .map(|(k, vs)| {
            let inc = vs[0]
                .iter()
                .zip(&vs[1])
                .map(|(a, b)| Ok(sobolev_norm(&a.sub(b)?, setup.gamma, setup.delta)))
                .collect::<Result<Vec<f64>>>()?
                .into_iter()
                .fold(0.0, f64::max);
            Ok(RawPoint {
                scale: k[0] as f64,
                seed: setup.seed,
                value: inc,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut study = ScalingStudy::from_raw("dyadic_v", "k", raw, FitFamily::Geometric)?;
    study.pass = Some(study.successive_ratios().iter().all(|&r| r < max_ratio));
    Ok(study)
}

/// `lhs(t) <= C rhs(t)` along the snapshot times of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityRecord {
    pub check: String,
    pub times: Vec<f64>,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    /// `max_t lhs/rhs` over the whole run.
    pub measured_constant: f64,
    pub frozen: Option<FrozenCheck>,
    pub pass: bool,
    /// Run outside the hypotheses under which the inequality is stated.
    pub out_of_theory: bool,
    pub notes: Vec<String>,
}

impl InequalityRecord {
    fn new(check: &str, times: Vec<f64>, lhs: Vec<f64>, rhs: Vec<f64>) -> Self {
        let measured = lhs
            .iter()
            .zip(&rhs)
            .map(|(&l, &r)| if r > 0.0 { l / r } else if l > 0.0 { f64::INFINITY } else { 0.0 })
            .fold(0.0, f64::max);
        Self {
            check: check.to_string(),
            times,
            lhs,
            rhs,
            measured_constant: measured,
            frozen: None,
            pass: false,
            out_of_theory: false,
            notes: Vec::new(),
        }
    }

    /// Calibrates on `t <= T/2` and verifies the frozen constant on the rest.
    fn freeze_halves(&mut self) -> Result<()> {
        let t_half = 0.5 * self.times.last().copied().unwrap_or(0.0);
        let (mut cal, mut ver) = (Vec::new(), Vec::new());
        for ((&t, &l), &r) in self.times.iter().zip(&self.lhs).zip(&self.rhs) {
            if t <= t_half {
                cal.push((l, r));
            } else {
                ver.push((l, r));
            }
        }
        if ver.is_empty() {
            return Err(Error::InvalidParameter("trajectory needs snapshots past T/2".into()));
        }
        let check = calibrate_then_freeze(&cal, &ver, FREEZE_MARGIN)?;
        self.pass = check.pass;
        self.frozen = Some(check);
        Ok(())
    }

    /// Writes `<stem>.csv` (t, lhs, rhs) and `<stem>.json`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join(format!("{stem}.csv")))?;
        w.write_record(["t", "lhs", "rhs"])?;
        for ((t, l), r) in self.times.iter().zip(&self.lhs).zip(&self.rhs) {
            w.write_record([t.to_string(), l.to_string(), r.to_string()])?;
        }
        w.flush()?;
        fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

fn v_snapshots(traj: &Trajectory, bundle: &NoiseBundle) -> Result<Vec<ComplexField>> {
    let ey = exp_y(bundle.y(), 1.0)?;
    traj.snapshots.iter().map(|s| s.u.mul_real(&ey)).collect()
}

/// Weighted moment bound
/// `int |<x>^delta v(t)|^2 <= K (int |<x>^delta0 v0|^2 + t sqrt(N(u0)) sup_{s<=t} ||grad v(s)||_{L^2(<x>^-delta')})`
/// under the calibrate-then-freeze protocol, plus the boundary mass
/// fraction of every snapshot (which must stay below `1e-3`).
pub fn localization_check(traj: &Trajectory, bundle: &NoiseBundle, delta: f64, delta_prime: f64) -> Result<InequalityRecord> {
    let delta0 = traj.params.delta0;
    if !(delta > 0.0 && delta < delta0) {
        return Err(Error::Hypothesis(format!("localization requires 0 < delta < delta0 = {delta0}, got {delta}")));
    }
    if !(delta_prime < 1.0 - 2.0 * delta) {
        return Err(Error::Hypothesis(format!(
            "localization requires delta' < 1 - 2 delta, got delta' = {delta_prime}, delta = {delta}"
        )));
    }
    let vs = v_snapshots(traj, bundle)?;
    let w_delta = weight_field(traj.grid(), delta);
    let w_prime = weight_field(traj.grid(), -delta_prime);
    let moment = |v: &ComplexField, w: &RealField| -> Result<f64> { Ok(v.mul_real(w)?.l2_norm().powi(2)) };
    let base = moment(&vs[0], &weight_field(traj.grid(), delta0))?;
    let mass0 = traj.snapshots[0].u.l2_norm();
    let mut lhs = Vec::new();
    let mut rhs = Vec::new();
    let mut grad_sup = 0.0f64;
    for (s, v) in traj.snapshots.iter().zip(&vs) {
        let (vx, vy) = gradient(v);
        let g = (vx.mul_real(&w_prime)?.l2_norm().powi(2) + vy.mul_real(&w_prime)?.l2_norm().powi(2)).sqrt();
        grad_sup = grad_sup.max(g);
        lhs.push(moment(v, &w_delta)?);
        rhs.push(base + s.t * mass0 * grad_sup);
    }
    let mut rec = InequalityRecord::new("localization", traj.times(), lhs, rhs);
    if rec.lhs.iter().all(|&l| l == 0.0) {
        rec.pass = true;
        rec.notes.push("zero data".into());
    } else {
        rec.freeze_halves()?;
    }
    let worst = traj.records.iter().map(|r| r.boundary_fraction).fold(0.0, f64::max);
    rec.notes.push(format!("max boundary mass fraction {worst:.3e}"));
    if worst >= 1e-3 {
        rec.pass = false;
    }
    Ok(rec)
}

/// Energy identity and `H^1(<x>^-delta)` bound along a run: `lhs(t)` is
/// `||v(t)||_{H^1(<x>^-delta)}`, `rhs` the constant `1 + ||v0||_{H^1(<x>^delta0)}`.
/// `pass` requires the identity residual below `tolerance` and the frozen
/// bound to hold.
pub fn h1_bound_check(traj: &Trajectory, bundle: &NoiseBundle, delta: f64, tolerance: f64) -> Result<InequalityRecord> {
    let params = traj.params;
    let vs = v_snapshots(traj, bundle)?;
    let lhs: Vec<f64> = vs.iter().map(|v| sobolev_norm(v, 1.0, -delta)).collect();
    let r = 1.0 + sobolev_norm(&vs[0], 1.0, params.delta0);
    let mut rec = InequalityRecord::new("h1_bound", traj.times(), lhs, vec![r; vs.len()]);
    rec.out_of_theory = params.lambda > 0.0 && params.sigma >= 1.0;
    if rec.out_of_theory {
        rec.notes.push("focusing with sigma >= 1: outside the stated hypotheses".into());
    }
    rec.freeze_halves()?;
    let d = drift(traj);
    rec.notes.push(format!("energy identity residual {:.3e}", d.identity_residual));
    rec.pass = rec.pass && d.identity_residual < tolerance;
    Ok(rec)
}

/// Exponent `a` of `sup_t ||v(t)||_{H^1(<x>^-delta)} ~ ||v0||^a` from runs
/// started at `s v0` for each `s` in `scales`.
pub fn h1_scaling_exponent(
    v0: &ComplexField,
    bundle: &NoiseBundle,
    params: &ModelParams,
    scales: &[f64],
    t_final: f64,
    dt: f64,
    delta: f64,
) -> Result<Fit> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = scales
        .iter()
        .map(|&s| {
            let v = v0.scale(Complex64::new(s, 0.0));
            let traj = evolve(&transform_to_u(&v, bundle)?, bundle, params, t_final, dt, ((t_final / dt).ceil() as usize / 8).max(1))?;
            let sup = v_snapshots(&traj, bundle)?
                .iter()
                .map(|v| sobolev_norm(v, 1.0, -delta))
                .fold(0.0, f64::max);
            Ok((1.0 + sobolev_norm(&v, 1.0, params.delta0), sup))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    fit(FitFamily::PowerLaw, &xs, &ys)
}

/// Gronwall bound for `w = dv/dt`:
/// `int |w(t)|^2 e^(-2Y) <= int |w(0)|^2 e^(-2Y) exp(C t sup_{s<=t} ||u(s)||_inf^(2 sigma))`.
///
/// `lhs` is `log(W(t)/W(0))` and `rhs` is `t S(t)^(2 sigma)`, so the record's
/// constant is the Gronwall constant `C`; it is calibrated on `t <= T/2` and
/// frozen for the rest. The H^2 surrogate `||v||_{H^1} + ||Delta v||_{L^2(<x>^-delta)}`
/// is reported in the notes.
pub fn h2_growth_check(traj: &Trajectory, bundle: &NoiseBundle, delta: f64) -> Result<InequalityRecord> {
    let params = traj.params;
    let e2 = exp_y(bundle.y(), -2.0)?;
    let mut w_mass = Vec::new();
    let mut surrogate = 0.0f64;
    for s in &traj.snapshots {
        let w = time_derivative(s, &params, bundle)?;
        w_mass.push(crate::grid::integrate(&w.modulus_squared().zip_map(&e2, |a, b| a * b)?, 0.0));
        let v = crate::solver::transform_to_v(&s.u, bundle)?;
        let lap = crate::grid::laplacian(&v);
        surrogate = surrogate.max(sobolev_norm(&v, 1.0, -delta) + lp_norm(&lap, 2.0, -delta));
    }
    let w0 = w_mass[0];
    let mut sup_u = 0.0f64;
    let mut lhs = Vec::new();
    let mut rhs = Vec::new();
    for (rec, &wm) in traj.records.iter().zip(&w_mass) {
        sup_u = sup_u.max(rec.sup_u);
        lhs.push(if w0 > 0.0 { (wm / w0).ln().max(0.0) } else { 0.0 });
        rhs.push(rec.t * sup_u.powf(2.0 * params.sigma));
    }
    let mut rec = InequalityRecord::new("h2_growth", traj.times(), lhs, rhs);
    rec.out_of_theory = params.lambda > 0.0 && params.sigma >= 1.0;
    rec.notes.push(format!("w mass at t=0 {w0:.6e}, final {:.6e}", w_mass.last().unwrap()));
    rec.notes.push(format!("sup H2 surrogate {surrogate:.6e}"));
    if rec.lhs.iter().all(|&l| l == 0.0) {
        rec.pass = true;
        rec.notes.push("no growth of the w mass".into());
    } else {
        rec.freeze_halves()?;
    }
    Ok(rec)
}

/// Sides of the Brezis-Gallouet type bound for `f = v e^(-Y) = u`:
/// `||f||_inf` against `(1 + ||f||_{H^1(<x>^-delta)}) sqrt(1 + log(1 + ||f||_{C^(gamma-1)(<x>^-delta)}))`.
pub fn brezis_gallouet_sides(f: &ComplexField, gamma: f64, delta: f64, partition: &LpPartition) -> Result<(f64, f64)> {
    let lhs = f.sup_norm();
    let h1 = sobolev_norm(f, 1.0, -delta);
    let c = norm(f, &NormRequest::holder(gamma - 1.0, -delta), partition)?.value;
    Ok((lhs, (1.0 + h1) * (1.0 + (1.0 + c).ln()).sqrt()))
}

/// Brezis-Gallouet bound along a trajectory with the frozen constant.
pub fn brezis_gallouet_check(
    traj: &Trajectory,
    partition: &LpPartition,
    gamma: f64,
    delta: f64,
) -> Result<InequalityRecord> {
    if !(gamma > 1.0 && gamma < 2.0) {
        return Err(Error::Hypothesis(format!("gamma = {gamma} must lie in (1, 2)")));
    }
    let (lhs, rhs): (Vec<f64>, Vec<f64>) = traj
        .snapshots
        .iter()
        .map(|s| brezis_gallouet_sides(&s.u, gamma, delta, partition))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    let mut rec = InequalityRecord::new("brezis_gallouet", traj.times(), lhs, rhs);
    rec.freeze_halves()?;
    Ok(rec)
}

/// Global budget: mean over seeds of `sup_t ||u||_inf` per `eps`, fitted
/// against `1 + |log eps|`. `pass` records an exponent at most `max_exponent`.
pub fn global_budget_check(runs: &[(f64, u64, &Trajectory)], max_exponent: f64) -> Result<ScalingStudy> {
    for (_, _, t) in runs {
        if t.params.sigma >= 0.5 {
            return Err(Error::Hypothesis(format!(
                "the global budget needs sigma < 1/2, got {}",
                t.params.sigma
            )));
        }
    }
    let raw = runs
        .iter()
        .map(|&(eps, seed, t)| RawPoint {
            scale: eps,
            seed,
            value: t.records.iter().map(|r| r.sup_u).fold(0.0, f64::max),
        })
        .collect();
    let mut study = ScalingStudy::from_raw("global_budget", "eps", raw, FitFamily::PolyLog)?;
    study.pass = Some(study.fit.exponent() <= max_exponent);
    if runs.iter().any(|(_, _, t)| t.params.lambda > 0.0) {
        study.name.push_str("_focusing");
    }
    Ok(study)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid2D;
    use crate::noise::build_greens_kernel;

    #[test]
    fn conserved_of_plane_wave() {
        let g = Grid2D::new(2.0, 32).unwrap();
        let k = std::f64::consts::PI;
        let v = ComplexField::plane_wave(&g, k, 0.0);
        let q = NoiseBundle::quiet(&g);
        let c = conserved_v(&v, &q, &ModelParams::linear()).unwrap();
        assert!((c.mass - 16.0).abs() < 1e-12);
        assert!((c.energy - 0.5 * k * k * 16.0).abs() < 1e-10);
        let z = conserved_v(&ComplexField::zeros(&g), &q, &ModelParams::new(-1.0, 0.4)).unwrap();
        assert_eq!((z.mass, z.energy), (0.0, 0.0));
    }

    #[test]
    fn nonlinear_energy_uses_u_modulus() {
        let g = Grid2D::new(2.0, 32).unwrap();
        let v = ComplexField::from_fn(&g, |_, _| Complex64::new(2.0, 0.0));
        let p = ModelParams::new(-1.0, 0.5);
        let c = conserved_v(&v, &NoiseBundle::quiet(&g), &p).unwrap();
        // -lambda/(2 sigma + 2) |v|^3 over the box
        assert!((c.energy - 16.0 * 8.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn fits_recover_exact_lines() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [3.0, 5.0, 7.0, 9.0];
        let (b, a, r2, se) = linear_fit(&xs, &ys).unwrap();
        assert!((b - 2.0).abs() < 1e-14 && (a - 1.0).abs() < 1e-14);
        assert!((r2 - 1.0).abs() < 1e-14 && se < 1e-12);
        let ks = [2.0, 3.0, 4.0, 5.0];
        let ys: Vec<f64> = ks.iter().map(|k| 3.0 * 2f64.powf(-0.7 * k)).collect();
        let f = fit(FitFamily::Geometric, &ks, &ys).unwrap();
        assert!((f.exponent() - 0.7).abs() < 1e-12);
        let eps = [0.25, 0.125, 0.0625, 0.03125];
        let ys: Vec<f64> = eps.iter().map(|e: &f64| 1.5 + 0.2 * e.ln().abs()).collect();
        let f = fit(FitFamily::LinearLogEps, &eps, &ys).unwrap();
        assert!((f.slope - 0.2).abs() < 1e-12);
        assert!(linear_fit(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn study_aggregation_is_order_independent() {
        let mut raw = Vec::new();
        for seed in 0..40u64 {
            for &e in &[0.5, 0.25, 0.125, 0.0625] {
                raw.push(RawPoint {
                    scale: e,
                    seed,
                    value: e * (1.0 + 0.01 * seed as f64),
                });
            }
        }
        let a = ScalingStudy::from_raw("t", "eps", raw.clone(), FitFamily::PowerLaw).unwrap();
        raw.reverse();
        let b = ScalingStudy::from_raw("t", "eps", raw, FitFamily::PowerLaw).unwrap();
        assert_eq!(a, b);
        assert!(!a.low_confidence);
        assert!((a.fit.slope - 1.0).abs() < 1e-12);
        let r = a.successive_ratios();
        assert!(r.iter().all(|x| (x - 0.5).abs() < 1e-12));
    }

    #[test]
    fn hypotheses_are_enforced() {
        assert!(NoiseStatistic::GradYLp { p: 4.0, delta: 0.5 }.validate().is_err());
        assert!(NoiseStatistic::GradYLp { p: 8.0, delta: 0.5 }.validate().is_ok());
        assert!(NoiseStatistic::EyBound { a: -1.0, alpha: 1.5, delta: 0.5 }.validate().is_err());
    }

    #[test]
    fn identical_scales_have_zero_difference() {
        let g = Grid2D::new(2.0, 64).unwrap();
        let k = build_greens_kernel(&g).unwrap();
        let p = crate::besov::build_partition(&g).unwrap();
        let m = Mollifier::new(&g, 0.25).unwrap();
        let xi = sample_white_noise(&g, 1);
        let a = build_bundle_with(&xi, &k, &m).unwrap();
        let b = build_bundle_with(&xi, &k, &m).unwrap();
        let d = a.y().zip_map(b.y(), |x, y| x - y).unwrap();
        assert_eq!(norm(&d, &NormRequest::holder(0.5, -0.5), &p).unwrap().value, 0.0);
    }

    #[test]
    fn study_files_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let raw = (0..4)
            .map(|i| RawPoint {
                scale: 2f64.powi(-i),
                seed: 0,
                value: 1.0 + i as f64,
            })
            .collect();
        let s = ScalingStudy::from_raw("demo", "eps", raw, FitFamily::LinearLogEps).unwrap();
        assert!(s.low_confidence);
        s.write(dir.path(), "demo").unwrap();
        let agg = fs::read_to_string(dir.path().join("demo_agg.csv")).unwrap();
        assert!(agg.starts_with("scale,mean,stderr,samples"));
        let raw = fs::read_to_string(dir.path().join("demo_raw.csv")).unwrap();
        assert!(raw.starts_with("scale,seed,value"));
        let sum: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("demo_summary.json")).unwrap()).unwrap();
        assert_eq!(sum["family"], "linear_log_eps");
    }
}

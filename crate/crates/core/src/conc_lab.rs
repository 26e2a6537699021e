//! Monte-Carlo checks of concentration properties: tail exponents, observable diameters,
//! quadratic forms, the `delta` / `delta'` gap and the resolvent-mean error.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::equivalent::{deterministic_resolvent, sample_covariance};
use crate::error::{param, structural, Error, Result};
use crate::fixed_point::{solve_delta, SolverOptions};
use crate::linalg::{least_squares_line, spd_inverse, sym_spectral_norm, RunningStats};
use crate::model::GeneratorSpec;
use crate::sampler::{derive_seed, sample_columns, Population};

const CHUNK: usize = 2048;

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Empirical exceedance `P(|Z - median| >= t)` on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TailProfile {
    pub grid: Vec<f64>,
    pub exceedance: Vec<f64>,
    /// Median of the samples.
    pub pivot: f64,
}

pub const MIN_TAIL_SAMPLES: usize = 100;

pub fn tail_profile(samples: &[f64], grid: &[f64]) -> Result<TailProfile> {
    if grid.is_empty() {
        return Err(param("tail grid is empty"));
    }
    if samples.len() < MIN_TAIL_SAMPLES {
        return Err(param(format!(
            "need at least {MIN_TAIL_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if let Some(t) = grid.iter().find(|t| !(**t >= 0.0)) {
        return Err(param(format!("grid points must be nonnegative, got {t}")));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite sample".into()));
    }
    let pivot = median(samples);
    let mut dev: Vec<f64> = samples.iter().map(|v| (v - pivot).abs()).collect();
    dev.sort_by(|a, b| a.total_cmp(b));
    let m = dev.len() as f64;
    let exceedance = grid
        .iter()
        .map(|t| (dev.len() - dev.partition_point(|d| d < t)) as f64 / m)
        .collect();
    Ok(TailProfile { grid: grid.to_vec(), exceedance, pivot })
}

/// `C exp(-(t / sigma)^q)` fitted to a tail profile.
#[derive(Debug, Clone, PartialEq)]
pub struct TailFit {
    /// Head parameter, at least 1.
    pub head_c: f64,
    /// Tail parameter.
    pub tail_sigma: f64,
    pub exponent_q: f64,
    pub pivot: f64,
    /// Coefficient of determination of the log-log regression.
    pub r2: f64,
    pub points_used: usize,
}

impl TailFit {
    pub fn bound(&self, t: f64) -> f64 {
        self.head_c * (-(t / self.tail_sigma).powf(self.exponent_q)).exp()
    }
}

#[derive(Debug, Clone)]
pub struct TailFitOptions {
    /// Only points with exceedance strictly inside `(p_min, p_max)` enter the fit.
    pub p_min: f64,
    pub p_max: f64,
    /// Also fit `log C` (one-dimensional search) instead of regressing with `C = 1`.
    pub fit_head: bool,
}

impl Default for TailFitOptions {
    fn default() -> Self {
        Self { p_min: 1e-4, p_max: 0.5, fit_head: false }
    }
}

const MIN_FIT_POINTS: usize = 5;
const MAX_LOG_HEAD: f64 = 5.0;

fn regress(points: &[(f64, f64)], log_head: f64) -> (f64, f64, f64, f64) {
    let x: Vec<f64> = points.iter().map(|(t, _)| t.ln()).collect();
    let y: Vec<f64> = points.iter().map(|(_, p)| (log_head - p.ln()).ln()).collect();
    let (slope, intercept, r2) = least_squares_line(&x, &y);
    let ssr = x
        .iter()
        .zip(&y)
        .map(|(a, b)| {
            let e = b - (slope * a + intercept);
            e * e
        })
        .sum();
    (slope, intercept, r2, ssr)
}

/// Least-squares fit of `log(-log P) = q log t - q log sigma` (plus `log C` inside the outer
/// log when `fit_head` is set).
pub fn fit_exponential_tail(profile: &TailProfile, opts: &TailFitOptions) -> Result<TailFit> {
    let points: Vec<(f64, f64)> = profile
        .grid
        .iter()
        .zip(&profile.exceedance)
        .filter(|(t, p)| **t > 0.0 && **p > opts.p_min && **p < opts.p_max)
        .map(|(t, p)| (*t, *p))
        .collect();
    if points.len() < MIN_FIT_POINTS {
        return Err(Error::Fit(format!(
            "only {} profile points with exceedance in ({}, {}), need {MIN_FIT_POINTS}",
            points.len(),
            opts.p_min,
            opts.p_max
        )));
    }
    let log_head = if opts.fit_head {
        golden_section(0.0, MAX_LOG_HEAD, |c| regress(&points, c).3)
    } else {
        0.0
    };
    let (q, intercept, r2, _) = regress(&points, log_head);
    if !(q > 0.0) || !q.is_finite() {
        return Err(Error::Fit(format!("non-positive exponent estimate {q}")));
    }
    let sigma = (-intercept / q).exp();
    let head_c = points
        .iter()
        .map(|(t, p)| p / (-(t / sigma).powf(q)).exp())
        .fold(log_head.exp(), f64::max);
    Ok(TailFit {
        head_c,
        tail_sigma: sigma,
        exponent_q: q,
        pivot: profile.pivot,
        r2,
        points_used: points.len(),
    })
}

fn golden_section<F: Fn(f64) -> f64>(mut a: f64, mut b: f64, f: F) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() < 1e-14 {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    // The search never evaluates the endpoint itself; prefer 0 when it is at least as good.
    if f(0.0) <= f(mid) {
        0.0
    } else {
        mid
    }
}

/// Library-provided 1-Lipschitz observables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Functional {
    /// Euclidean norm.
    Norm,
    FirstCoordinate,
    /// Average of the coordinates (Lipschitz constant `1/sqrt(p)`).
    MeanOfCoordinates,
}

impl Functional {
    pub fn eval(self, x: nalgebra::DVectorView<'_, f64>) -> f64 {
        match self {
            Functional::Norm => x.norm(),
            Functional::FirstCoordinate => x[0],
            Functional::MeanOfCoordinates => x.mean(),
        }
    }
}

impl FromStr for Functional {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "norm" => Ok(Functional::Norm),
            "first-coordinate" => Ok(Functional::FirstCoordinate),
            "mean" | "mean-of-coordinates" => Ok(Functional::MeanOfCoordinates),
            other => Err(param(format!("unknown functional '{other}'"))),
        }
    }
}

impl fmt::Display for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Functional::Norm => "norm",
            Functional::FirstCoordinate => "first-coordinate",
            Functional::MeanOfCoordinates => "mean",
        })
    }
}

/// Monte-Carlo estimate of `E|f(X) - f(X')|`, per functional and maximized.
#[derive(Debug, Clone, PartialEq)]
pub struct DiameterEstimate {
    pub diameter: f64,
    pub per_functional: Vec<(Functional, f64, f64)>,
}

pub fn observable_diameter(
    spec: &GeneratorSpec,
    functionals: &[Functional],
    trials: usize,
    seed: u64,
) -> Result<DiameterEstimate> {
    if trials < 100 {
        return Err(param(format!("need at least 100 trials, got {trials}")));
    }
    if functionals.is_empty() {
        return Err(param("no functionals given"));
    }
    let mut stats = vec![RunningStats::default(); functionals.len()];
    let mut done = 0;
    while done < trials {
        let pairs = CHUNK.min(trials - done);
        let x = sample_columns(spec, 2 * pairs, seed, 2 * done as u64);
        for i in 0..pairs {
            let (a, b) = (x.column(2 * i), x.column(2 * i + 1));
            for (s, f) in stats.iter_mut().zip(functionals) {
                s.push((f.eval(a.as_view()) - f.eval(b.as_view())).abs());
            }
        }
        done += pairs;
    }
    let per_functional: Vec<(Functional, f64, f64)> = functionals
        .iter()
        .zip(&stats)
        .map(|(f, s)| (*f, s.mean(), s.stderr()))
        .collect();
    let diameter = per_functional.iter().map(|(_, v, _)| *v).fold(0.0, f64::max);
    Ok(DiameterEstimate { diameter, per_functional })
}

/// Deviation statistics of `Z^T A Z` around `tr(A E[Z Z^T])`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticFormStats {
    pub mean: f64,
    pub pivot: f64,
    /// `mean - pivot`.
    pub bias: f64,
    pub std: f64,
    /// Standard error of the mean.
    pub stderr: f64,
    pub trials: usize,
}

/// Samples `Z^T A Z` for `trials` draws of `spec`. The second moment defaults to the
/// generator's closed form.
pub fn quadratic_form_check(
    spec: &GeneratorSpec,
    a: &DMatrix<f64>,
    trials: usize,
    seed: u64,
    second_moment: Option<&DMatrix<f64>>,
) -> Result<QuadraticFormStats> {
    let p = spec.dim();
    if a.shape() != (p, p) {
        return Err(structural(format!(
            "quadratic form matrix is {}x{}, expected {p}x{p}",
            a.nrows(),
            a.ncols()
        )));
    }
    if trials == 0 {
        return Err(param("need at least one trial"));
    }
    let m2 = match second_moment {
        Some(m) if m.shape() == (p, p) => m.clone(),
        Some(m) => {
            return Err(structural(format!("second moment is {}x{}, expected {p}x{p}", m.nrows(), m.ncols())))
        }
        None => spec
            .second_moment()
            .ok_or_else(|| param("second moment must be supplied for nonlinear generators"))?,
    };
    let pivot = (a * &m2).trace();
    let mut stats = RunningStats::default();
    let mut done = 0;
    while done < trials {
        let m = CHUNK.min(trials - done);
        let z = sample_columns(spec, m, seed, done as u64);
        let az = a * &z;
        for j in 0..m {
            stats.push(z.column(j).dot(&az.column(j)));
        }
        done += m;
    }
    Ok(QuadraticFormStats {
        mean: stats.mean(),
        pivot,
        bias: stats.mean() - pivot,
        std: stats.std(),
        stderr: stats.stderr(),
        trials,
    })
}

/// How the held-out quadratic forms `y^T Q_{-y} y / n` are obtained in each trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeldOut {
    /// Every column, through `y^T Q_{-y} y / n = b / (1 - b)` with `b = y^T Q y / n`.
    #[default]
    AllColumnsSchur,
    /// First column of each class, removing it and refactoring explicitly.
    OnePerClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaEstimate {
    pub delta: Vec<f64>,
    /// Standard error of each entry.
    pub stderr: Vec<f64>,
    /// Standard deviation of the per-trial values.
    pub trial_std: Vec<f64>,
    pub trials: usize,
}

/// `y^T Q_{-i} y / n` with `Q_{-i} = (X_{-i} X_{-i}^T / n + z I)^-1`; the divisor stays `n`.
pub fn held_out_quadratic_form(x: &DMatrix<f64>, i: usize, z: f64) -> Result<f64> {
    let (p, n) = x.shape();
    if i >= n {
        return Err(structural(format!("column {i} out of range for {n} columns")));
    }
    let rest = x.clone().remove_column(i);
    let mut a = &rest * rest.transpose() / n as f64;
    for d in 0..p {
        a[(d, d)] += z;
    }
    let q = spd_inverse(a)?;
    let y = x.column(i);
    Ok(y.dot(&(q * y)) / n as f64)
}

fn check_lab_z(z: f64) -> Result<()> {
    if z > 0.0 && z.is_finite() {
        Ok(())
    } else {
        Err(param(format!("z must be positive and finite, got {z}")))
    }
}

/// Monte-Carlo estimate of `delta_l = E[y_l^T Q_{-y_l} y_l] / n`.
pub fn delta_empirical(
    population: &Population,
    z: f64,
    trials: usize,
    seed: u64,
    held_out: HeldOut,
) -> Result<DeltaEstimate> {
    check_lab_z(z)?;
    if trials == 0 {
        return Err(param("need at least one trial"));
    }
    let mixture = population.mixture();
    if let Some((l, c)) = mixture.classes().iter().enumerate().find(|(_, c)| c.count() < 2) {
        return Err(param(format!("class {l} has {} samples, need at least 2", c.count())));
    }
    let (k, n, p) = (mixture.k(), mixture.n(), mixture.p());
    let per_trial: Vec<Result<Vec<f64>>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let sample = population.sample(derive_seed(seed, t as u64))?;
            let x = &sample.x;
            match held_out {
                HeldOut::AllColumnsSchur => {
                    let mut a = sample_covariance(x);
                    for d in 0..p {
                        a[(d, d)] += z;
                    }
                    let chol = a
                        .cholesky()
                        .ok_or_else(|| Error::Internal("S + z I is not positive definite".into()))?;
                    let qx = chol.solve(x);
                    let mut sums = vec![RunningStats::default(); k];
                    for (j, l) in sample.labels.iter().enumerate() {
                        let b = x.column(j).dot(&qx.column(j)) / n as f64;
                        sums[*l].push(b / (1.0 - b));
                    }
                    Ok(sums.iter().map(RunningStats::mean).collect())
                }
                HeldOut::OnePerClass => (0..k)
                    .map(|l| held_out_quadratic_form(x, sample.class_columns(l).start, z))
                    .collect(),
            }
        })
        .collect();
    let mut stats = vec![RunningStats::default(); k];
    for trial in per_trial {
        for (s, v) in stats.iter_mut().zip(trial?) {
            s.push(v);
        }
    }
    Ok(DeltaEstimate {
        delta: stats.iter().map(RunningStats::mean).collect(),
        stderr: stats.iter().map(RunningStats::stderr).collect(),
        trial_std: stats.iter().map(RunningStats::std).collect(),
        trials,
    })
}

/// `delta'` for a population, failing if the solver does not converge.
pub fn predicted_delta(population: &Population, z: f64) -> Result<Vec<f64>> {
    let sol = solve_delta(population.mixture(), z, &SolverOptions::default())?;
    if !sol.converged {
        return Err(Error::NotConverged {
            residual: sol.residual,
            iterations: sol.iterations,
        });
    }
    Ok(sol.delta)
}

const BATCH: usize = 8;

/// Spectral norm of `mean(Q) - Q_delta'` over `trials` seeded draws.
pub fn resolvent_mean_error(population: &Population, z: f64, trials: usize, seed: u64) -> Result<f64> {
    check_lab_z(z)?;
    if trials < 10 {
        return Err(param(format!("need at least 10 trials, got {trials}")));
    }
    let p = population.mixture().p();
    let mut mean = DMatrix::<f64>::zeros(p, p);
    let mut count = 0usize;
    for start in (0..trials).step_by(BATCH) {
        let batch: Vec<Result<DMatrix<f64>>> = (start..(start + BATCH).min(trials))
            .into_par_iter()
            .map(|t| {
                let sample = population.sample(derive_seed(seed, t as u64))?;
                let mut a = sample_covariance(&sample.x);
                for d in 0..p {
                    a[(d, d)] += z;
                }
                spd_inverse(a)
            })
            .collect();
        for q in batch {
            let q = q?;
            count += 1;
            let inv = 1.0 / count as f64;
            mean.zip_apply(&q, |m, v| *m += (v - *m) * inv);
        }
    }
    let delta = predicted_delta(population, z)?;
    let q_tilde = deterministic_resolvent(population.mixture(), &delta, z)?;
    Ok(sym_spectral_norm(&(mean - q_tilde)))
}

/// Errors against sizes with the least-squares log-log slope.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub sizes: Vec<usize>,
    pub errors: Vec<f64>,
    pub slope: f64,
}

impl ScalingReport {
    pub fn new(sizes: Vec<usize>, errors: Vec<f64>) -> Result<Self> {
        if sizes.len() != errors.len() {
            return Err(structural(format!("{} sizes for {} errors", sizes.len(), errors.len())));
        }
        if sizes.len() < 2 {
            return Err(param("need at least two sizes for a slope"));
        }
        if let Some(e) = errors.iter().find(|e| !(**e > 0.0) || !e.is_finite()) {
            return Err(param(format!("errors must be positive for a log-log fit, got {e}")));
        }
        let x: Vec<f64> = sizes.iter().map(|n| (*n as f64).ln()).collect();
        let y: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
        let (slope, _, _) = least_squares_line(&x, &y);
        Ok(Self { sizes, errors, slope })
    }

    pub fn strictly_decreasing(&self) -> bool {
        self.errors.windows(2).all(|w| w[1] < w[0])
    }
}

/// `||delta_hat - delta'||_inf` across problem sizes.
pub fn delta_gap_sweep<F>(sizes: &[usize], make: F, z: f64, trials: usize, seed: u64) -> Result<ScalingReport>
where
    F: Fn(usize) -> Result<Population>,
{
    let mut errors = Vec::with_capacity(sizes.len());
    for (i, n) in sizes.iter().enumerate() {
        let pop = make(*n)?;
        let est = delta_empirical(&pop, z, trials, derive_seed(seed, i as u64), HeldOut::default())?;
        let pred = predicted_delta(&pop, z)?;
        errors.push(
            est.delta
                .iter()
                .zip(&pred)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs())),
        );
    }
    ScalingReport::new(sizes.to_vec(), errors)
}

/// `||mean(Q) - Q_delta'||` across problem sizes.
pub fn resolvent_error_sweep<F>(sizes: &[usize], make: F, z: f64, trials: usize, seed: u64) -> Result<ScalingReport>
where
    F: Fn(usize) -> Result<Population>,
{
    let mut errors = Vec::with_capacity(sizes.len());
    for (i, n) in sizes.iter().enumerate() {
        errors.push(resolvent_mean_error(&make(*n)?, z, trials, derive_seed(seed, i as u64))?);
    }
    ScalingReport::new(sizes.to_vec(), errors)
}

/// Normed spaces with a known norm degree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormSpace {
    /// `(R^p, ||.||_inf)`.
    VectorSup { p: usize },
    /// `(R^p, ||.||_r)`, `r >= 1`.
    VectorLr { p: usize, r: f64 },
    /// `(M_{p,n}, ||.||)` spectral norm.
    MatrixSpectral { p: usize, n: usize },
    /// `(M_{p,n}, ||.||_F)`.
    MatrixFrobenius { p: usize, n: usize },
}

/// Norm degree: `log p`, `p`, `n + p`, `n p` respectively.
pub fn norm_degree(space: NormSpace) -> Result<f64> {
    let dims_ok = |d: &[usize]| d.iter().all(|v| *v >= 1);
    match space {
        NormSpace::VectorSup { p } if dims_ok(&[p]) => Ok((p as f64).ln()),
        NormSpace::VectorLr { p, r } if dims_ok(&[p]) && r >= 1.0 => Ok(p as f64),
        NormSpace::MatrixSpectral { p, n } if dims_ok(&[p, n]) => Ok((n + p) as f64),
        NormSpace::MatrixFrobenius { p, n } if dims_ok(&[p, n]) => Ok((n * p) as f64),
        other => Err(param(format!("invalid normed space {other:?}"))),
    }
}

impl FromStr for NormSpace {
    type Err = Error;

    /// `sup:P`, `lr:P:R`, `spectral:PxN`, `frobenius:PxN`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || param(format!("unknown normed-space descriptor '{s}'"));
        let mut parts = s.trim().split(':');
        let kind = parts.next().ok_or_else(bad)?.to_ascii_lowercase();
        let rest: Vec<&str> = parts.collect();
        let dims = |t: &str| -> Result<(usize, usize)> {
            let (a, b) = t.split_once('x').ok_or_else(bad)?;
            Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
        };
        match (kind.as_str(), rest.as_slice()) {
            ("sup", [p]) => Ok(NormSpace::VectorSup { p: p.parse().map_err(|_| bad())? }),
            ("lr", [p, r]) => Ok(NormSpace::VectorLr {
                p: p.parse().map_err(|_| bad())?,
                r: r.parse().map_err(|_| bad())?,
            }),
            ("spectral", [d]) => dims(d).map(|(p, n)| NormSpace::MatrixSpectral { p, n }),
            ("frobenius", [d]) => dims(d).map(|(p, n)| NormSpace::MatrixFrobenius { p, n }),
            _ => Err(bad()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ClassModel, LatentLaw, Mixture};
    use nalgebra::DVector;

    /// `P(|N(0,1)| >= t) = erfc(t / sqrt 2)`, via a continued-fraction-free series.
    fn two_sided_normal_tail(t: f64) -> f64 {
        // Abramowitz-Stegun 7.1.26 is too coarse here; integrate the density instead.
        let steps = 200_000;
        let h = t / steps as f64;
        let mut s = 0.0;
        for i in 0..steps {
            let x = (i as f64 + 0.5) * h;
            s += (-0.5 * x * x).exp();
        }
        1.0 - 2.0 * s * h / (2.0 * std::f64::consts::PI).sqrt()
    }

    #[test]
    fn normal_tail_oracle() {
        assert!((two_sided_normal_tail(1.0) - 0.317_310_507_862_914).abs() < 1e-9);
    }

    #[test]
    fn profile_edge_cases() {
        let c = vec![3.0; 200];
        let p = tail_profile(&c, &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(p.exceedance, vec![1.0, 0.0, 0.0]);
        assert!(tail_profile(&c, &[]).is_err());
        assert!(tail_profile(&c[..50], &[1.0]).is_err());
    }

    #[test]
    fn gaussian_profile_at_one() {
        let g = GeneratorSpec::standard_gaussian(1).unwrap();
        let x = sample_columns(&g, 100_000, 17, 0);
        let p = tail_profile(x.as_slice(), &[0.0, 1.0]).unwrap();
        assert_eq!(p.exceedance[0], 1.0);
        assert!((p.exceedance[1] - two_sided_normal_tail(1.0)).abs() < 0.01);
    }

    fn synthetic(c: f64, sigma: f64, q: f64) -> TailProfile {
        let grid: Vec<f64> = (1..400).map(|i| i as f64 * 0.02 * sigma).collect();
        let exceedance = grid.iter().map(|t| (c * (-(t / sigma).powf(q)).exp()).min(1.0)).collect();
        TailProfile { grid, exceedance, pivot: 0.0 }
    }

    #[test]
    fn exact_gaussian_tail_has_sqrt_two_parameter() {
        let fit = fit_exponential_tail(&synthetic(1.0, 2f64.sqrt(), 2.0), &TailFitOptions::default()).unwrap();
        assert!((fit.exponent_q - 2.0).abs() < 1e-6);
        assert!((fit.tail_sigma - 2f64.sqrt()).abs() < 1e-6);
        let fit = fit_exponential_tail(&synthetic(1.0, 1.0, 1.0), &TailFitOptions::default()).unwrap();
        assert!((fit.exponent_q - 1.0).abs() < 1e-9 && (fit.tail_sigma - 1.0).abs() < 1e-9);
        assert!((fit.head_c - 1.0).abs() < 1e-9);
    }

    #[test]
    fn synthetic_tails_recovered_over_parameter_grid() {
        for q in [0.5, 1.0, 2.0] {
            for sigma in [0.5, 1.0, 2.0] {
                let fit = fit_exponential_tail(&synthetic(1.0, sigma, q), &TailFitOptions::default()).unwrap();
                assert!((fit.exponent_q - q).abs() < 1e-6, "q={q} s={sigma}: {fit:?}");
                assert!((fit.tail_sigma - sigma).abs() < 1e-6);
                let opts = TailFitOptions { fit_head: true, ..Default::default() };
                let fit = fit_exponential_tail(&synthetic(2.0, sigma, q), &opts).unwrap();
                assert!((fit.exponent_q - q).abs() < 1e-6, "head fit q={q} s={sigma}: {fit:?}");
                assert!((fit.tail_sigma - sigma).abs() < 1e-6);
                assert!((fit.head_c - 2.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn degenerate_profile_is_a_fit_error() {
        let p = tail_profile(&vec![1.0; 500], &[0.0, 0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        assert!(matches!(fit_exponential_tail(&p, &TailFitOptions::default()), Err(Error::Fit(_))));
    }

    #[test]
    fn profile_is_non_increasing_and_bounded() {
        let g = GeneratorSpec::lipschitz_of_gaussian(DVector::zeros(3), DMatrix::identity(3, 3), crate::model::Nonlinearity::Relu)
            .unwrap();
        let x = sample_columns(&g, 1000, 2, 0);
        let grid: Vec<f64> = (0..60).map(|i| i as f64 * 0.05).collect();
        let p = tail_profile(x.as_slice(), &grid).unwrap();
        assert!(p.exceedance.windows(2).all(|w| w[1] <= w[0]));
        assert!(p.exceedance.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn diameter_cases() {
        let det = GeneratorSpec::gaussian(DVector::from_element(4, 1.5), DMatrix::zeros(4, 1)).unwrap();
        let d = observable_diameter(&det, &[Functional::Norm, Functional::FirstCoordinate], 200, 1).unwrap();
        assert_eq!(d.diameter, 0.0);
        let g = GeneratorSpec::standard_gaussian(256).unwrap();
        let d = observable_diameter(&g, &[Functional::FirstCoordinate], 20_000, 5).unwrap();
        assert!((d.diameter - 2.0 / std::f64::consts::PI.sqrt()).abs() < 0.02, "{d:?}");
        assert!(observable_diameter(&g, &[Functional::Norm], 99, 5).is_err());
    }

    #[test]
    fn quadratic_form_cases() {
        let p = 30;
        let g = GeneratorSpec::standard_gaussian(p).unwrap();
        let zero = quadratic_form_check(&g, &DMatrix::zeros(p, p), 500, 1, None).unwrap();
        assert_eq!((zero.bias, zero.std), (0.0, 0.0));
        let r = GeneratorSpec::bounded_affine(DVector::zeros(p), DMatrix::identity(p, p), LatentLaw::Rademacher).unwrap();
        let s = quadratic_form_check(&r, &DMatrix::identity(p, p), 500, 1, None).unwrap();
        assert_eq!((s.mean, s.std, s.bias), (p as f64, 0.0, 0.0));
        assert!(matches!(
            quadratic_form_check(&g, &DMatrix::zeros(p, p + 1), 10, 1, None),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn schur_identity_matches_explicit_held_out_form() {
        let g = GeneratorSpec::standard_gaussian(12).unwrap();
        let x = sample_columns(&g, 20, 9, 0);
        let z = 0.7;
        let mut a = sample_covariance(&x);
        for d in 0..12 {
            a[(d, d)] += z;
        }
        let q = spd_inverse(a).unwrap();
        for i in [0, 7, 19] {
            let y = x.column(i);
            let b = y.dot(&(&q * y)) / 20.0;
            let direct = held_out_quadratic_form(&x, i, z).unwrap();
            assert!((b / (1.0 - b) - direct).abs() < 1e-12);
        }
    }

    fn zero_population(p: usize, n: usize) -> Population {
        let g = GeneratorSpec::gaussian(DVector::zeros(p), DMatrix::zeros(p, 1)).unwrap();
        Population::from_generators(vec![(g, n)]).unwrap()
    }

    #[test]
    fn zero_population_has_zero_delta_and_error() {
        let pop = zero_population(5, 8);
        for h in [HeldOut::AllColumnsSchur, HeldOut::OnePerClass] {
            let est = delta_empirical(&pop, 1.0, 3, 0, h).unwrap();
            assert_eq!(est.delta, vec![0.0]);
        }
        assert_eq!(resolvent_mean_error(&pop, 0.7, 10, 0).unwrap(), 0.0);
    }

    #[test]
    fn delta_estimate_is_bounded_and_near_prediction() {
        let (p, n) = (60, 60);
        let pop = Population::from_generators(vec![(GeneratorSpec::standard_gaussian(p).unwrap(), n)]).unwrap();
        let z = 1.0;
        for h in [HeldOut::AllColumnsSchur, HeldOut::OnePerClass] {
            let est = delta_empirical(&pop, z, 40, 3, h).unwrap();
            assert!(est.delta[0] <= pop.mixture().gamma() / z);
            assert!((est.delta[0] - 0.618).abs() < 0.05, "{h:?}: {est:?}");
        }
    }

    #[test]
    fn delta_requires_two_samples_per_class() {
        let g = GeneratorSpec::standard_gaussian(3).unwrap();
        let models = vec![
            ClassModel::centered(DMatrix::identity(3, 3), 1).unwrap(),
            ClassModel::centered(DMatrix::identity(3, 3), 4).unwrap(),
        ];
        let pop = Population::with_mixture(Mixture::new(models, 5).unwrap(), vec![g.clone(), g]).unwrap();
        assert!(matches!(delta_empirical(&pop, 1.0, 2, 0, HeldOut::default()), Err(Error::Parameter(_))));
    }

    #[test]
    fn resolvent_error_requires_ten_trials() {
        assert!(resolvent_mean_error(&zero_population(3, 3), 1.0, 9, 0).is_err());
    }

    #[test]
    fn scaling_report_slope() {
        let r = ScalingReport::new(vec![100, 400], vec![1.0, 0.5]).unwrap();
        assert!((r.slope + 0.5).abs() < 1e-12);
        assert!(r.strictly_decreasing());
        assert!(ScalingReport::new(vec![1, 2], vec![1.0]).is_err());
        assert!(ScalingReport::new(vec![1, 2], vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn norm_degrees() {
        assert!((norm_degree(NormSpace::VectorSup { p: 8 }).unwrap() - 2.0794).abs() < 1e-4);
        assert_eq!(norm_degree(NormSpace::VectorLr { p: 8, r: 2.0 }).unwrap(), 8.0);
        assert_eq!(norm_degree("spectral:3x5".parse().unwrap()).unwrap(), 8.0);
        assert_eq!(norm_degree("frobenius:3x5".parse().unwrap()).unwrap(), 15.0);
        assert!("nuclear:3x5".parse::<NormSpace>().is_err());
        assert!(norm_degree(NormSpace::VectorLr { p: 8, r: 0.5 }).is_err());
        assert!(norm_degree(NormSpace::MatrixSpectral { p: 0, n: 5 }).is_err());
    }
}

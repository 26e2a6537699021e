//! The `k`-dimensional fixed-point system for `delta'`.
//!
//! For `z > 0` the interference map
//! `I(delta)_l = (1/n) tr(sigma_l (sum_h (n_h/n) sigma_h / (1 + delta_h) + z I)^-1)`
//! is monotone and `x0 = (tr sigma_l / (n z))_l` satisfies `I(x0) <= x0`, so plain iteration
//! from `x0` decreases componentwise to the unique nonnegative fixed point.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{param, structural, Error, Result};
use crate::linalg::symmetrize_from_lower;
use crate::model::Mixture;

/// Which trace evaluator to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Backend {
    /// Joint eigenbasis when the class matrices commute, dense factorizations otherwise.
    #[default]
    Auto,
    /// Cholesky (real) or LU (complex) factorization of the `p x p` system at every step.
    Dense,
    /// Diagonal evaluation in a common eigenbasis; fails if the classes do not commute.
    Joint,
}

/// Where the real iteration starts.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum StartPoint {
    /// `x0 = tr sigma_l / (n z)`, which dominates the fixed point (decreasing iteration).
    #[default]
    Dominating,
    /// `0`, which is dominated by the fixed point (increasing iteration).
    Zero,
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub backend: Backend,
    pub start: StartPoint,
    /// Keep the sup-norm step of every iteration.
    pub record_trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 10_000,
            backend: Backend::Auto,
            start: StartPoint::Dominating,
            record_trace: false,
        }
    }
}

impl SolverOptions {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_backend(mut self, backend: Backend) -> Self {
        self.backend = backend;
        self
    }

    pub fn with_start(mut self, start: StartPoint) -> Self {
        self.start = start;
        self
    }

    pub fn with_trace(mut self) -> Self {
        self.record_trace = true;
        self
    }
}

/// Result of the real fixed-point iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointSolution {
    /// `delta'`, one entry per class.
    pub delta: Vec<f64>,
    /// `||I(delta) - delta||_inf` for the returned `delta`.
    pub residual: f64,
    /// Number of interference-map evaluations.
    pub iterations: usize,
    pub converged: bool,
    pub trace: Option<Vec<f64>>,
}

/// Class spectra expressed in a common orthonormal eigenbasis.
///
/// Exists only when every class second moment is diagonal in one basis (e.g. a single class,
/// or polynomials in the same Toeplitz matrix). Traces then cost `O(k p)` instead of `O(p^3)`.
#[derive(Debug, Clone)]
pub struct JointBasis {
    /// `diag[l][i] = v_i^T sigma_l v_i`.
    diag: Vec<Vec<f64>>,
}

impl JointBasis {
    const OFF_DIAGONAL_TOL: f64 = 1e-9;

    /// Diagonalizes a generic combination of the class matrices and keeps the basis if it
    /// diagonalizes every class.
    pub fn try_new(mixture: &Mixture) -> Option<Self> {
        let classes = mixture.classes();
        let p = mixture.p();
        let scales: Vec<f64> = classes.iter().map(|c| c.sigma().amax()).collect();
        for a in 0..classes.len() {
            for b in (a + 1)..classes.len() {
                let (sa, sb) = (classes[a].sigma(), classes[b].sigma());
                let comm = sa * sb - sb * sa;
                if comm.amax() > 1e-10 * scales[a] * scales[b] * p as f64 {
                    return None;
                }
            }
        }
        let mut combo = DMatrix::zeros(p, p);
        for (l, c) in classes.iter().enumerate() {
            if scales[l] > 0.0 {
                // Irrational weights keep accidental eigenvalue collisions unlikely.
                let w = 1.0 + 0.754_877_666_246_692_7 * (l as f64 + 1.0).sqrt();
                combo += c.sigma() * (w / scales[l]);
            }
        }
        symmetrize_from_lower(&mut combo);
        let basis = combo.symmetric_eigen().eigenvectors;
        let mut diag = Vec::with_capacity(classes.len());
        for (l, c) in classes.iter().enumerate() {
            let d = basis.transpose() * c.sigma() * &basis;
            let mut off = 0.0f64;
            for j in 0..p {
                for i in 0..p {
                    if i != j {
                        off = off.max(d[(i, j)].abs());
                    }
                }
            }
            if off > Self::OFF_DIAGONAL_TOL * scales[l].max(f64::MIN_POSITIVE) * (p as f64).sqrt() {
                return None;
            }
            diag.push(d.diagonal().iter().copied().collect());
        }
        Some(Self { diag })
    }

    /// Per-class eigenvalues in the common basis.
    pub fn class_diagonals(&self) -> &[Vec<f64>] {
        &self.diag
    }
}

/// Resolved trace evaluator.
#[derive(Clone, Copy)]
pub(crate) enum Kernel<'a> {
    Joint(&'a Mixture, &'a JointBasis),
    Dense(&'a Mixture),
}

impl<'a> Kernel<'a> {
    pub(crate) fn new(mixture: &'a Mixture, backend: Backend) -> Result<Self> {
        match backend {
            Backend::Dense => Ok(Kernel::Dense(mixture)),
            Backend::Joint => mixture
                .joint_basis()
                .map(|j| Kernel::Joint(mixture, j))
                .ok_or_else(|| param("class matrices do not share an eigenbasis")),
            Backend::Auto => Ok(match mixture.joint_basis() {
                Some(j) => Kernel::Joint(mixture, j),
                None => Kernel::Dense(mixture),
            }),
        }
    }

    fn mixture(&self) -> &'a Mixture {
        match self {
            Kernel::Joint(m, _) | Kernel::Dense(m) => m,
        }
    }

    /// `I(delta)` together with `(1/p) tr Q_delta` for real `z`.
    pub(crate) fn real(&self, delta: &[f64], z: f64) -> Result<(Vec<f64>, f64)> {
        let m = self.mixture();
        let coef = class_coefficients(m, delta)?;
        let (n, p) = (m.n() as f64, m.p() as f64);
        match self {
            Kernel::Joint(_, basis) => {
                let mut out = vec![0.0; delta.len()];
                let mut inverses = Vec::with_capacity(m.p());
                for i in 0..m.p() {
                    let denom = z + basis
                        .diag
                        .iter()
                        .zip(&coef)
                        .map(|(d, c)| c * d[i])
                        .sum::<f64>();
                    let inv = 1.0 / denom;
                    inverses.push(inv);
                    for (o, d) in out.iter_mut().zip(&basis.diag) {
                        *o += d[i] * inv;
                    }
                }
                out.iter_mut().for_each(|o| *o /= n);
                Ok((out, crate::linalg::stable_sum(inverses) / p))
            }
            Kernel::Dense(_) => {
                let a = shifted_sigma_delta(m, &coef, z);
                let chol = a.cholesky().ok_or_else(|| {
                    Error::Internal("sigma_delta + z I is not positive definite".into())
                })?;
                let out = m
                    .classes()
                    .iter()
                    .map(|c| chol.solve(c.sigma()).trace() / n)
                    .collect();
                let linv = chol
                    .l()
                    .solve_lower_triangular(&DMatrix::identity(m.p(), m.p()))
                    .ok_or_else(|| Error::Internal("singular Cholesky factor".into()))?;
                Ok((out, linv.norm_squared() / p))
            }
        }
    }

    /// Complex interference map and `(1/p) tr (sigma_delta - w I)^-1`.
    pub(crate) fn complex(&self, delta: &[Complex64], w: Complex64) -> Result<(Vec<Complex64>, Complex64)> {
        let m = self.mixture();
        let weights = m.weights();
        let mut coef = Vec::with_capacity(delta.len());
        for (l, (d, wt)) in delta.iter().zip(&weights).enumerate() {
            let den = Complex64::new(1.0, 0.0) + d;
            if den.norm() == 0.0 {
                return Err(Error::Division(format!("1 + delta_{l} = 0")));
            }
            coef.push(wt / den);
        }
        let (n, p) = (m.n() as f64, m.p() as f64);
        match self {
            Kernel::Joint(_, basis) => {
                let mut out = vec![Complex64::new(0.0, 0.0); delta.len()];
                let mut trace = Complex64::new(0.0, 0.0);
                for i in 0..m.p() {
                    let mut denom = -w;
                    for (d, c) in basis.diag.iter().zip(&coef) {
                        denom += c * d[i];
                    }
                    let inv = denom.inv();
                    trace += inv;
                    for (o, d) in out.iter_mut().zip(&basis.diag) {
                        *o += inv * d[i];
                    }
                }
                out.iter_mut().for_each(|o| *o /= n);
                Ok((out, trace / p))
            }
            Kernel::Dense(_) => {
                let mut a = DMatrix::<Complex64>::from_diagonal_element(m.p(), m.p(), -w);
                for (c, cl) in coef.iter().zip(m.classes()) {
                    a.zip_apply(cl.sigma(), |x, s| *x += c * s);
                }
                let inv = a
                    .lu()
                    .try_inverse()
                    .ok_or_else(|| Error::Internal("complex resolvent system is singular".into()))?;
                let out = m
                    .classes()
                    .iter()
                    .map(|cl| {
                        // tr(S A^-1) = sum_ij S_ij (A^-1)_ji, S symmetric.
                        let mut acc = Complex64::new(0.0, 0.0);
                        for (s, q) in cl.sigma().iter().zip(inv.iter()) {
                            acc += q * *s;
                        }
                        acc / n
                    })
                    .collect();
                Ok((out, inv.trace() / p))
            }
        }
    }
}

/// `(n_l / n) / (1 + delta_l)`.
fn class_coefficients(m: &Mixture, delta: &[f64]) -> Result<Vec<f64>> {
    if delta.len() != m.k() {
        return Err(structural(format!(
            "delta has {} entries for {} classes",
            delta.len(),
            m.k()
        )));
    }
    m.weights()
        .iter()
        .zip(delta)
        .enumerate()
        .map(|(l, (w, d))| {
            let den = 1.0 + d;
            if den == 0.0 {
                Err(Error::Division(format!("1 + delta_{l} = 0")))
            } else {
                Ok(w / den)
            }
        })
        .collect()
}

pub(crate) fn weighted_sigma(m: &Mixture, coef: &[f64]) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(m.p(), m.p());
    for (c, cl) in coef.iter().zip(m.classes()) {
        if *c != 0.0 {
            a += cl.sigma() * *c;
        }
    }
    symmetrize_from_lower(&mut a);
    a
}

fn shifted_sigma_delta(m: &Mixture, coef: &[f64], z: f64) -> DMatrix<f64> {
    let mut a = weighted_sigma(m, coef);
    for i in 0..m.p() {
        a[(i, i)] += z;
    }
    a
}

pub(crate) fn sigma_delta_checked(m: &Mixture, delta: &[f64]) -> Result<DMatrix<f64>> {
    Ok(weighted_sigma(m, &class_coefficients(m, delta)?))
}

fn check_z(z: f64) -> Result<()> {
    if z > 0.0 && z.is_finite() {
        Ok(())
    } else {
        Err(param(format!("z must be positive and finite, got {z}")))
    }
}

fn check_delta(m: &Mixture, delta: &[f64]) -> Result<()> {
    if delta.len() != m.k() {
        return Err(structural(format!(
            "delta has {} entries for {} classes",
            delta.len(),
            m.k()
        )));
    }
    if delta.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
        return Err(param("delta must be componentwise nonnegative and finite"));
    }
    Ok(())
}

fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// `I(delta)_l = (1/n) tr(sigma_l Q_delta(z))`, evaluated with a Cholesky factorization of
/// `sigma_delta + z I`.
pub fn interference_map(delta: &[f64], mixture: &Mixture, z: f64) -> Result<Vec<f64>> {
    interference_map_with(delta, mixture, z, Backend::Dense)
}

pub fn interference_map_with(delta: &[f64], mixture: &Mixture, z: f64, backend: Backend) -> Result<Vec<f64>> {
    check_z(z)?;
    check_delta(mixture, delta)?;
    Ok(Kernel::new(mixture, backend)?.real(delta, z)?.0)
}

/// Starting point `x0 = (tr sigma_l / (n z))_l` of the decreasing iteration.
pub fn dominating_start(mixture: &Mixture, z: f64) -> Vec<f64> {
    let n = mixture.n() as f64;
    mixture
        .classes()
        .iter()
        .map(|c| c.sigma().trace() / (n * z))
        .collect()
}

/// Iterates the interference map to its fixed point `delta'`.
///
/// Stops as soon as `||I(delta) - delta||_inf <= tol`; exhausting `max_iter` returns the last
/// iterate with `converged = false`.
pub fn solve_delta(mixture: &Mixture, z: f64, opts: &SolverOptions) -> Result<FixedPointSolution> {
    check_z(z)?;
    if !(opts.tol > 0.0) {
        return Err(param(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let kernel = Kernel::new(mixture, opts.backend)?;
    let mut delta = match &opts.start {
        StartPoint::Dominating => dominating_start(mixture, z),
        StartPoint::Zero => vec![0.0; mixture.k()],
    };
    let mut trace = opts.record_trace.then(Vec::new);
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let next = kernel.real(&delta, z)?.0;
        iterations += 1;
        residual = sup_dist(&next, &delta);
        if let Some(t) = trace.as_mut() {
            t.push(residual);
        }
        if residual <= opts.tol {
            return Ok(FixedPointSolution {
                delta,
                residual,
                iterations,
                converged: true,
                trace,
            });
        }
        delta = next;
    }
    Ok(FixedPointSolution {
        delta,
        residual,
        iterations,
        converged: false,
        trace,
    })
}

#[derive(Debug, Clone)]
pub struct ComplexSolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Initial relaxation weight in `(0, 1]`; halved when the iteration oscillates.
    pub damping: f64,
    pub backend: Backend,
    pub warm_start: Option<Vec<Complex64>>,
}

impl Default for ComplexSolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 50_000,
            damping: 1.0,
            backend: Backend::Auto,
            warm_start: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexFixedPointSolution {
    pub delta: Vec<Complex64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Damping in effect when the iteration stopped.
    pub damping: f64,
    /// `(1/p) tr (sigma_delta - w I)^-1` at the returned `delta`.
    pub stieltjes: Complex64,
}

const MIN_DAMPING: f64 = 1.0 / 64.0;

/// Solves `delta_l = (1/n) tr(sigma_l (sigma_delta - w I)^-1)` for `Im w > 0` by damped Picard
/// iteration `delta <- (1 - d) delta + d I(delta)`.
///
/// The damping `d` is halved whenever consecutive residuals turn by more than 45 degrees while
/// shrinking by less than half (or grow outright).
pub fn solve_delta_complex(
    mixture: &Mixture,
    w: Complex64,
    opts: &ComplexSolverOptions,
) -> Result<ComplexFixedPointSolution> {
    if !(w.im > 0.0) || !w.re.is_finite() || !w.im.is_finite() {
        return Err(param(format!("spectral argument needs Im(w) > 0, got {w}")));
    }
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(param(format!("damping must lie in (0, 1], got {}", opts.damping)));
    }
    if !(opts.tol > 0.0) {
        return Err(param(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let kernel = Kernel::new(mixture, opts.backend)?;
    let k = mixture.k();
    let mut delta = match &opts.warm_start {
        Some(ws) if ws.len() == k => ws.clone(),
        Some(ws) => {
            return Err(structural(format!("warm start has {} entries for {k} classes", ws.len())))
        }
        None => vec![Complex64::new(0.0, 0.0); k],
    };
    let mut damping = opts.damping;
    let mut prev: Option<Vec<Complex64>> = None;
    let mut residual = f64::INFINITY;
    let mut stieltjes = Complex64::new(0.0, 0.0);
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let (next, m) = kernel.complex(&delta, w)?;
        iterations += 1;
        stieltjes = m;
        let r: Vec<Complex64> = next.iter().zip(&delta).map(|(a, b)| a - b).collect();
        residual = r.iter().fold(0.0f64, |acc, v| acc.max(v.norm()));
        if residual <= opts.tol && delta.iter().all(|d| d.im >= -opts.tol) {
            return Ok(ComplexFixedPointSolution {
                delta,
                residual,
                iterations,
                converged: true,
                damping,
                stieltjes,
            });
        }
        if let Some(pr) = &prev {
            let dot: f64 = r.iter().zip(pr).map(|(a, b)| (a * b.conj()).re).sum();
            let (nr, np) = (l2(&r), l2(pr));
            let turning = dot < std::f64::consts::FRAC_1_SQRT_2 * nr * np;
            if damping > MIN_DAMPING && (nr > np || (turning && nr > 0.5 * np)) {
                damping = (damping * 0.5).max(MIN_DAMPING);
            }
        }
        for (d, step) in delta.iter_mut().zip(&r) {
            *d += step * damping;
        }
        prev = Some(r);
    }
    Ok(ComplexFixedPointSolution {
        delta,
        residual,
        iterations,
        converged: false,
        damping,
        stieltjes,
    })
}

fn l2(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

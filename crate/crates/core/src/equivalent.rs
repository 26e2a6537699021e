//! Deterministic equivalents of the resolvent, predicted Stieltjes transforms and densities,
//! and their empirical counterparts.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{param, Error, Result};
use crate::fixed_point::{
    self, solve_delta, solve_delta_complex, ComplexSolverOptions, Kernel, SolverOptions,
};
use crate::linalg::{self, spd_inverse, symmetrize_from_lower};
use crate::model::Mixture;

/// `sigma_delta = sum_l (n_l / n) sigma_l / (1 + delta_l)`.
pub fn sigma_delta(mixture: &Mixture, delta: &[f64]) -> Result<DMatrix<f64>> {
    if let Some(d) = delta.iter().find(|d| **d < -1.0 || d.is_nan()) {
        return Err(param(format!("delta entries must exceed -1, got {d}")));
    }
    fixed_point::sigma_delta_checked(mixture, delta)
}

/// `Q_delta(z) = (sigma_delta + z I)^-1`.
pub fn deterministic_resolvent(mixture: &Mixture, delta: &[f64], z: f64) -> Result<DMatrix<f64>> {
    check_z(z)?;
    let mut a = sigma_delta(mixture, delta)?;
    for i in 0..a.nrows() {
        a[(i, i)] += z;
    }
    spd_inverse(a)
}

/// Predicted Stieltjes transform at `-z`: `(1/p) tr Q_delta'(z)`.
pub fn stieltjes_prediction(mixture: &Mixture, z: f64, opts: &SolverOptions) -> Result<f64> {
    let sol = solve_delta(mixture, z, opts)?;
    if !sol.converged {
        return Err(Error::NotConverged {
            residual: sol.residual,
            iterations: sol.iterations,
        });
    }
    stieltjes_at(mixture, &sol.delta, z, opts)
}

/// `(1/p) tr Q_delta(z)` for a given `delta`, without forming `Q_delta`.
pub fn stieltjes_at(mixture: &Mixture, delta: &[f64], z: f64, opts: &SolverOptions) -> Result<f64> {
    check_z(z)?;
    Ok(Kernel::new(mixture, opts.backend)?.real(delta, z)?.1)
}

/// Predicted spectral density on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralPrediction {
    pub lambdas: Vec<f64>,
    /// Continuous part of `dF / d lambda`.
    pub density: Vec<f64>,
    /// Mass of the atom at zero, from rank bookkeeping.
    pub atom_at_zero: f64,
    /// Imaginary offset used for the inversion.
    pub epsilon: f64,
    /// Per-point convergence of the complex solver.
    pub converged: Vec<bool>,
}

impl SpectralPrediction {
    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|c| *c)
    }

    /// Trapezoid integral of the density over the grid.
    pub fn continuous_mass(&self) -> f64 {
        self.mass_between(f64::NEG_INFINITY, f64::INFINITY)
    }

    /// Trapezoid integral of the density over `[lo, hi]` intersected with the grid span,
    /// interpolating linearly at the ends.
    pub fn mass_between(&self, lo: f64, hi: f64) -> f64 {
        let (x, y) = (&self.lambdas, &self.density);
        let mut total = 0.0;
        for i in 1..x.len() {
            let (a, b) = (x[i - 1].max(lo), x[i].min(hi));
            if b <= a {
                continue;
            }
            let slope = (y[i] - y[i - 1]) / (x[i] - x[i - 1]);
            let fa = y[i - 1] + slope * (a - x[i - 1]);
            let fb = y[i - 1] + slope * (b - x[i - 1]);
            total += 0.5 * (fa + fb) * (b - a);
        }
        total
    }
}

const DENSITY_CHUNK: usize = 16;

/// Density by inverse Stieltjes transform: `f(lambda) = Im m(lambda + i eps) / pi`.
///
/// Grid points are solved in fixed chunks (in parallel), each chunk warm-starting along the grid,
/// so results do not depend on the thread count.
pub fn density_prediction(
    mixture: &Mixture,
    lambdas: &[f64],
    epsilon: f64,
    opts: &ComplexSolverOptions,
) -> Result<SpectralPrediction> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(param(format!("epsilon must be positive, got {epsilon}")));
    }
    if lambdas.is_empty() {
        return Err(param("lambda grid is empty"));
    }
    if lambdas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(param("lambda grid must be strictly increasing"));
    }
    if !(lambdas[0] > 0.0) {
        return Err(param("lambda grid must be positive"));
    }
    // Resolve the kernel once so the joint basis is computed outside the parallel section.
    Kernel::new(mixture, opts.backend)?;
    let atom = atom_at_zero(mixture);
    let chunks: Vec<Result<Vec<(f64, bool)>>> = lambdas
        .par_chunks(DENSITY_CHUNK)
        .map(|chunk| {
            let mut local = opts.clone();
            let mut out = Vec::with_capacity(chunk.len());
            for &lambda in chunk {
                let sol = solve_delta_complex(mixture, Complex64::new(lambda, epsilon), &local)?;
                // The atom contributes a Cauchy bump of width epsilon; only the continuous part is kept.
                let bump = atom * epsilon / (lambda * lambda + epsilon * epsilon);
                out.push((((sol.stieltjes.im - bump) / std::f64::consts::PI).max(0.0), sol.converged));
                if sol.converged {
                    local.warm_start = Some(sol.delta);
                }
            }
            Ok(out)
        })
        .collect();
    let mut density = Vec::with_capacity(lambdas.len());
    let mut converged = Vec::with_capacity(lambdas.len());
    for chunk in chunks {
        for (d, c) in chunk? {
            density.push(d);
            converged.push(c);
        }
    }
    Ok(SpectralPrediction {
        lambdas: lambdas.to_vec(),
        density,
        atom_at_zero: atom,
        epsilon,
        converged,
    })
}

/// Fraction of eigenvalues of `S` forced to zero by rank: `1 - rank(S) / p` with
/// `rank(S) = min(rank(sum_l sigma_l), sum_l min(n_l, rank sigma_l))`.
pub fn atom_at_zero(mixture: &Mixture) -> f64 {
    let rank = |ev: &[f64]| {
        let top = ev.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        ev.iter().filter(|v| **v > 1e-10 * top && top > 0.0).count()
    };
    let (union_rank, class_ranks): (usize, Vec<usize>) = match mixture.joint_basis() {
        Some(basis) => {
            let diag = basis.class_diagonals();
            let union: Vec<f64> = (0..mixture.p())
                .map(|i| diag.iter().map(|d| d[i].abs()).sum())
                .collect();
            (rank(&union), diag.iter().map(|d| rank(d)).collect())
        }
        None => (
            rank(&linalg::sym_eigenvalues(mixture.population_second_moment())),
            mixture
                .classes()
                .iter()
                .map(|c| rank(&linalg::sym_eigenvalues(c.sigma())))
                .collect(),
        ),
    };
    let attainable: usize = mixture
        .classes()
        .iter()
        .zip(&class_ranks)
        .map(|(c, r)| c.count().min(*r))
        .sum();
    let r = union_rank.min(attainable);
    (1.0 - r as f64 / mixture.p() as f64).clamp(0.0, 1.0)
}

fn check_z(z: f64) -> Result<()> {
    if z > 0.0 && z.is_finite() {
        Ok(())
    } else {
        Err(param(format!("z must be positive and finite, got {z}")))
    }
}

/// `S = X X^T / n` for a `p x n` data matrix, exactly symmetric.
pub fn sample_covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.ncols().max(1) as f64;
    let mut s = x * x.transpose() / n;
    symmetrize_from_lower(&mut s);
    s
}

/// Empirical resolvent `Q = (X X^T / n + z I)^-1`.
pub fn empirical_resolvent(x: &DMatrix<f64>, z: f64) -> Result<DMatrix<f64>> {
    check_z(z)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("data matrix has non-finite entries".into()));
    }
    let s = sample_covariance(x);
    let mut a = s.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += z;
    }
    let q = spd_inverse(a)?;
    debug_assert!(approx_bounds_hold(&q, &s, z), "resolvent bounds violated");
    Ok(q)
}

/// Empirical Stieltjes transform at `-z`: `(1/p) tr Q`.
pub fn empirical_stieltjes(x: &DMatrix<f64>, z: f64) -> Result<f64> {
    let q = empirical_resolvent(x, z)?;
    Ok(q.trace() / x.nrows() as f64)
}

/// The three norms controlled by the resolvent bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolventNorms {
    /// `||Q||`, at most `1/z`.
    pub q: f64,
    /// `||Q S||`, at most `1`.
    pub qs: f64,
    /// `||Q X / sqrt(n)||`, at most `1/sqrt(z)`.
    pub qx: f64,
}

impl ResolventNorms {
    /// Exact spectral norms (dense decompositions).
    pub fn compute(x: &DMatrix<f64>, z: f64) -> Result<Self> {
        let q = empirical_resolvent(x, z)?;
        let s = sample_covariance(x);
        let n = x.ncols().max(1) as f64;
        Ok(Self {
            q: linalg::sym_spectral_norm(&q),
            qs: linalg::spectral_norm(&(&q * &s)),
            qx: linalg::spectral_norm(&(&q * x / n.sqrt())),
        })
    }

    pub fn within_bounds(&self, z: f64, rel_tol: f64) -> bool {
        self.q <= (1.0 / z) * (1.0 + rel_tol)
            && self.qs <= 1.0 + rel_tol
            && self.qx <= (1.0 / z.sqrt()) * (1.0 + rel_tol)
    }
}

fn approx_bounds_hold(q: &DMatrix<f64>, s: &DMatrix<f64>, z: f64) -> bool {
    const ITERS: usize = 30;
    let slack = 1.0 + 1e-8;
    let p = q.nrows();
    let q_norm = linalg::power_norm(p, ITERS, |v| q * v);
    // Q and S commute, so Q S is symmetric PSD; ||Q X / sqrt n||^2 = ||Q S Q||.
    let qs_norm = linalg::power_norm(p, ITERS, |v| q * (s * v));
    let qsq_norm = linalg::power_norm(p, ITERS, |v: &DVector<f64>| q * (s * (q * v)));
    q_norm <= slack / z && qs_norm <= slack && qsq_norm <= slack / z
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{toeplitz_covariance, ClassModel};

    fn identity_mixture(p: usize, n: usize) -> Mixture {
        Mixture::new(vec![ClassModel::centered(DMatrix::identity(p, p), n).unwrap()], n).unwrap()
    }

    fn zero_mixture(p: usize) -> Mixture {
        Mixture::new(vec![ClassModel::centered(DMatrix::zeros(p, p), p).unwrap()], p).unwrap()
    }

    fn two_class(p: usize) -> Mixture {
        let t = toeplitz_covariance(0.1, p).unwrap();
        Mixture::new(
            vec![
                ClassModel::centered(&t * 10.0, p / 10).unwrap(),
                ClassModel::centered(&t * &t * 10.0, p - p / 10).unwrap(),
            ],
            p,
        )
        .unwrap()
    }

    #[test]
    fn sigma_delta_basic_cases() {
        let m = two_class(20);
        assert!((sigma_delta(&m, &[0.0, 0.0]).unwrap() - m.population_second_moment()).amax() < 1e-15);
        let id = identity_mixture(3, 3);
        assert_eq!(sigma_delta(&id, &[1.0]).unwrap(), DMatrix::identity(3, 3) * 0.5);
        assert!(matches!(sigma_delta(&id, &[-1.0]), Err(Error::Division(_))));
        assert!(matches!(sigma_delta(&id, &[-2.0]), Err(Error::Parameter(_))));
    }

    #[test]
    fn sigma_delta_at_solution_is_psd() {
        let m = two_class(40);
        let sol = solve_delta(&m, 1.0, &SolverOptions::default()).unwrap();
        let s = sigma_delta(&m, &sol.delta).unwrap();
        assert_eq!(linalg::asymmetry(&s), 0.0);
        assert!(linalg::sym_eigenvalues(&s)[0] >= 0.0);
    }

    #[test]
    fn resolvent_of_zero_classes_is_scaled_identity() {
        let m = zero_mixture(4);
        let q = deterministic_resolvent(&m, &[0.0], 2.0).unwrap();
        assert!((q - DMatrix::identity(4, 4) * 0.5).amax() < 1e-16);
    }

    #[test]
    fn resolvent_on_mp_solution() {
        let m = identity_mixture(25, 25);
        let d = (5f64.sqrt() - 1.0) / 2.0;
        let q = deterministic_resolvent(&m, &[d], 1.0).unwrap();
        let expected = 1.0 / (1.0 / (1.0 + d) + 1.0);
        assert!((q.trace() / 25.0 - expected).abs() < 1e-14);
        assert!((expected - 0.618_034).abs() < 1e-6);
    }

    #[test]
    fn resolvent_norm_bound() {
        let m = two_class(30);
        for z in [0.1, 1.0, 7.0] {
            let q = deterministic_resolvent(&m, &[0.2, 3.0], z).unwrap();
            assert!(linalg::sym_spectral_norm(&q) <= 1.0 / z + 1e-12);
        }
    }

    #[test]
    fn stieltjes_prediction_cases() {
        let opts = SolverOptions::default();
        assert!((stieltjes_prediction(&zero_mixture(5), 3.0, &opts).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let mp = stieltjes_prediction(&identity_mixture(40, 40), 1.0, &opts).unwrap();
        assert!((mp - 0.618_033_988_7).abs() < 1e-9);
        let m = two_class(50).scaled(100.0 / 12.3).unwrap();
        let z = 1e6;
        let v = stieltjes_prediction(&m, z, &opts).unwrap();
        assert!(v * z >= 0.99 && v * z <= 1.0);
    }

    #[test]
    fn stieltjes_decreases_in_z_and_is_homogeneous() {
        let m = two_class(40);
        let opts = SolverOptions::default();
        let zs = [0.05, 0.1, 0.5, 1.0, 2.0, 10.0];
        let vals: Vec<f64> = zs.iter().map(|z| stieltjes_prediction(&m, *z, &opts).unwrap()).collect();
        for (v, z) in vals.iter().zip(zs) {
            assert!(*v > 0.0 && *v <= 1.0 / z);
        }
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
        for a in [0.1, 10.0] {
            let scaled = stieltjes_prediction(&m.scaled(a).unwrap(), 0.5 * a, &opts).unwrap();
            let base = stieltjes_prediction(&m, 0.5, &opts).unwrap();
            assert!((scaled - base / a).abs() <= 10.0 * 1e-12 * (1.0 + base / a));
        }
    }

    #[test]
    fn mp_density_at_two() {
        let m = identity_mixture(200, 200);
        let pred = density_prediction(&m, &[2.0, 5.0], 1e-4, &ComplexSolverOptions::default()).unwrap();
        assert!(pred.all_converged());
        assert!((pred.density[0] - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 2e-3);
        assert!(pred.density[1] <= 1e-3);
        assert_eq!(pred.atom_at_zero, 0.0);
    }

    #[test]
    fn zero_classes_put_all_mass_at_zero() {
        let m = zero_mixture(6);
        let grid: Vec<f64> = (1..50).map(|i| 0.1 * i as f64).collect();
        let pred = density_prediction(&m, &grid, 1e-3, &ComplexSolverOptions::default()).unwrap();
        assert_eq!(pred.atom_at_zero, 1.0);
        assert!(pred.density.iter().all(|d| *d < 1e-2));
    }

    #[test]
    fn atom_follows_dimension_ratio() {
        assert!((atom_at_zero(&identity_mixture(30, 10)) - (1.0 - 1.0 / 3.0)).abs() < 1e-15);
        assert_eq!(atom_at_zero(&identity_mixture(10, 30)), 0.0);
    }

    #[test]
    fn density_integrates_to_one_with_atom() {
        let m = identity_mixture(60, 30);
        let grid: Vec<f64> = (1..=3000).map(|i| i as f64 * 0.002).collect();
        let pred = density_prediction(&m, &grid, 1e-3, &ComplexSolverOptions::default()).unwrap();
        let total = pred.continuous_mass() + pred.atom_at_zero;
        assert!((0.95..=1.05).contains(&total), "total mass {total}");
    }

    #[test]
    fn density_rejects_bad_grids() {
        let m = identity_mixture(3, 3);
        let o = ComplexSolverOptions::default();
        assert!(density_prediction(&m, &[1.0, 1.0], 1e-3, &o).is_err());
        assert!(density_prediction(&m, &[0.0, 1.0], 1e-3, &o).is_err());
        assert!(density_prediction(&m, &[1.0], 0.0, &o).is_err());
    }

    #[test]
    fn empirical_resolvent_closed_forms() {
        let z = 0.5;
        let q = empirical_resolvent(&DMatrix::zeros(3, 4), z).unwrap();
        assert!((q - DMatrix::identity(3, 3) * 2.0).amax() < 1e-15);
        let x = DMatrix::identity(2, 2) * 2f64.sqrt();
        let q = empirical_resolvent(&x, z).unwrap();
        assert!((q - DMatrix::identity(2, 2) / (1.0 + z)).amax() < 1e-15);
        assert!((empirical_stieltjes(&x, z).unwrap() - 1.0 / (1.0 + z)).abs() < 1e-15);
    }

    #[test]
    fn mass_between_interpolates() {
        let pred = SpectralPrediction {
            lambdas: vec![0.0, 1.0, 2.0],
            density: vec![1.0, 1.0, 1.0],
            atom_at_zero: 0.0,
            epsilon: 1e-3,
            converged: vec![true; 3],
        };
        assert!((pred.mass_between(0.5, 1.5) - 1.0).abs() < 1e-15);
        assert!((pred.continuous_mass() - 2.0).abs() < 1e-15);
    }
}

//! Small dense helpers shared across modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest absolute asymmetry `max |a_ij - a_ji|`.
pub(crate) fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..j {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Copy the lower triangle onto the upper one so the result is bitwise symmetric.
pub(crate) fn symmetrize_from_lower(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for j in 0..n {
        for i in 0..j {
            a[(i, j)] = a[(j, i)];
        }
    }
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = a.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

/// Spectral norm of a symmetric matrix.
pub fn sym_spectral_norm(a: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(a)
        .into_iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Spectral norm of an arbitrary matrix (largest singular value).
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone()
        .singular_values()
        .iter()
        .fold(0.0f64, |m, v| m.max(*v))
}

/// Inverse of a symmetric positive-definite matrix through its Cholesky factor.
pub(crate) fn spd_inverse(a: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Internal("matrix is not positive definite".into()))?;
    let mut inv = chol.inverse();
    symmetrize_from_lower(&mut inv);
    Ok(inv)
}

/// Principal square root of a symmetric PSD matrix; negative round-off eigenvalues are clamped.
pub(crate) fn psd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = a.clone().symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    let mut out = v * DMatrix::from_diagonal(&roots) * v.transpose();
    symmetrize_from_lower(&mut out);
    out
}

/// Lower bound on the largest eigenvalue of a symmetric PSD operator by power iteration.
pub(crate) fn power_norm<F>(dim: usize, iters: usize, apply: F) -> f64
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    if dim == 0 {
        return 0.0;
    }
    let mut v = DVector::from_fn(dim, |i, _| 1.0 + (i as f64 * 0.618_033_988_7).fract());
    v /= v.norm();
    let mut est = 0.0;
    for _ in 0..iters {
        let w = apply(&v);
        let nw = w.norm();
        if nw == 0.0 {
            return 0.0;
        }
        est = nw;
        v = w / nw;
    }
    est
}

/// Compensated (Neumaier) summation.
pub fn stable_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Running mean and variance (Welford); identical inputs give an exact mean.
#[derive(Debug, Clone, Default)]
pub struct RunningStats {
    count: usize,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance (0 for fewer than two samples).
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        }
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }

    pub fn stderr(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.std() / (self.count as f64).sqrt()
        }
    }
}

/// Ordinary least-squares line `y = slope * x + intercept`, with R².
pub(crate) fn least_squares_line(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = stable_sum(x.iter().copied()) / n;
    let my = stable_sum(y.iter().copied()) / n;
    let sxx = stable_sum(x.iter().map(|v| (v - mx) * (v - mx)));
    let sxy = stable_sum(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)));
    let syy = stable_sum(y.iter().map(|v| (v - my) * (v - my)));
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (slope, intercept, r2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn running_mean_of_identical_values_is_exact() {
        let mut s = RunningStats::default();
        for _ in 0..37 {
            s.push(0.1);
        }
        assert_eq!(s.mean(), 0.1);
        assert_eq!(s.variance(), 0.0);
    }

    #[test]
    fn stable_sum_recovers_cancellation() {
        let v = [1e16, 1.0, -1e16];
        assert_eq!(stable_sum(v), 1.0);
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let r = psd_sqrt(&a);
        assert!((&r * &r - &a).norm() < 1e-12);
    }

    #[test]
    fn power_norm_matches_eigenvalue() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let est = power_norm(2, 200, |v| &a * v);
        let exact = sym_spectral_norm(&a);
        assert!((est - exact).abs() < 1e-10);
    }
}

//! Python bindings: mixtures, the fixed-point solver, predictions, sampling and the
//! majorization and tail-fit utilities. Matrices are passed as lists of rows.

use deteq::conc_lab::{fit_exponential_tail, norm_degree, tail_profile, NormSpace, TailFitOptions};
use deteq::equivalent::{atom_at_zero, density_prediction, stieltjes_at};
use deteq::majorization;
use deteq::model::{toeplitz_covariance, ClassModel};
use deteq::sampler::{empirical_spectrum, sample_class};
use deteq::{ComplexSolverOptions, GeneratorSpec, SolverOptions};
use nalgebra::DMatrix;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: deteq::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err("ragged matrix rows"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Converged `delta'` with diagnostics.
#[pyclass(frozen, get_all)]
pub struct FixedPoint {
    pub delta: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[pymethods]
impl FixedPoint {
    fn __repr__(&self) -> String {
        format!(
            "FixedPoint(delta={:?}, residual={:.3e}, iterations={}, converged={})",
            self.delta, self.residual, self.iterations, self.converged
        )
    }
}

/// Class second moments `sigma_l` with counts `n_l`.
#[pyclass(frozen)]
pub struct Mixture {
    inner: deteq::Mixture,
}

#[pymethods]
impl Mixture {
    #[new]
    #[pyo3(signature = (sigmas, counts, n=None))]
    fn new(sigmas: Vec<Vec<Vec<f64>>>, counts: Vec<usize>, n: Option<usize>) -> PyResult<Self> {
        if sigmas.len() != counts.len() {
            return Err(PyValueError::new_err("one count per class is required"));
        }
        let classes = sigmas
            .iter()
            .zip(&counts)
            .map(|(s, c)| ClassModel::centered(to_matrix(s)?, *c).map_err(err))
            .collect::<PyResult<Vec<_>>>()?;
        let n = n.unwrap_or_else(|| counts.iter().sum());
        Ok(Self { inner: deteq::Mixture::new(classes, n).map_err(err)? })
    }

    /// One class with identity second moment.
    #[staticmethod]
    fn identity(p: usize, n: usize) -> PyResult<Self> {
        let c = ClassModel::centered(DMatrix::identity(p, p), n).map_err(err)?;
        Ok(Self { inner: deteq::Mixture::new(vec![c], n).map_err(err)? })
    }

    /// Classes with `scale * T^power`, `T_ij = base^(|i-j|+1)`.
    #[staticmethod]
    fn toeplitz(base: f64, p: usize, powers: Vec<u32>, counts: Vec<usize>, scale: f64) -> PyResult<Self> {
        let t = toeplitz_covariance(base, p).map_err(err)?;
        let classes = powers
            .iter()
            .zip(&counts)
            .map(|(k, c)| {
                let mut m = DMatrix::identity(p, p);
                for _ in 0..*k {
                    m = &m * &t;
                }
                ClassModel::centered((&m + m.transpose()) * (0.5 * scale), *c).map_err(err)
            })
            .collect::<PyResult<Vec<_>>>()?;
        Ok(Self { inner: deteq::Mixture::new(classes, counts.iter().sum()).map_err(err)? })
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma()
    }

    #[pyo3(signature = (z, tol=1e-12, max_iter=10_000))]
    fn solve_delta(&self, z: f64, tol: f64, max_iter: usize) -> PyResult<FixedPoint> {
        let opts = SolverOptions::default().with_tol(tol).with_max_iter(max_iter);
        let s = deteq::solve_delta(&self.inner, z, &opts).map_err(err)?;
        Ok(FixedPoint { delta: s.delta, residual: s.residual, iterations: s.iterations, converged: s.converged })
    }

    /// Predicted `(1/p) tr Q(z)`.
    fn stieltjes(&self, z: f64) -> PyResult<f64> {
        deteq::equivalent::stieltjes_prediction(&self.inner, z, &SolverOptions::default()).map_err(err)
    }

    /// `(1/p) tr Q_delta(z)` for a given `delta`.
    fn stieltjes_at(&self, delta: Vec<f64>, z: f64) -> PyResult<f64> {
        stieltjes_at(&self.inner, &delta, z, &SolverOptions::default()).map_err(err)
    }

    /// `(density, atom_at_zero)` on an increasing positive grid.
    fn density(&self, lambdas: Vec<f64>, epsilon: f64) -> PyResult<(Vec<f64>, f64)> {
        let pred = density_prediction(&self.inner, &lambdas, epsilon, &ComplexSolverOptions::default()).map_err(err)?;
        if !pred.all_converged() {
            return Err(PyValueError::new_err("density solve did not converge at every point"));
        }
        Ok((pred.density, pred.atom_at_zero))
    }

    fn atom_at_zero(&self) -> f64 {
        atom_at_zero(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!("Mixture(k={}, p={}, n={})", self.inner.k(), self.inner.p(), self.inner.n())
    }
}

/// `p x n` standard Gaussian sample, as rows.
#[pyfunction]
fn sample_gaussian(p: usize, n: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let g = GeneratorSpec::standard_gaussian(p).map_err(err)?;
    Ok(to_rows(&sample_class(&g, n, seed).map_err(err)?))
}

/// Ascending eigenvalues of `X X^T / n`.
#[pyfunction]
fn spectrum(x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    Ok(empirical_spectrum(&to_matrix(&x)?).map_err(err)?.eigenvalues)
}

/// True iff `y` is majorized by `x`.
#[pyfunction]
fn majorizes(x: Vec<f64>, y: Vec<f64>) -> PyResult<bool> {
    majorization::majorizes(&x, &y).map_err(err)
}

/// Descending singular values.
#[pyfunction]
fn singular_values(a: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    Ok(majorization::singular_values(&to_matrix(&a)?).map_err(err)?.values().to_vec())
}

/// `(q, sigma, C, r2)` of the tail of `samples` around their median.
#[pyfunction]
fn fit_tail(samples: Vec<f64>, grid: Vec<f64>) -> PyResult<(f64, f64, f64, f64)> {
    let fit = fit_exponential_tail(&tail_profile(&samples, &grid).map_err(err)?, &TailFitOptions::default())
        .map_err(err)?;
    Ok((fit.exponent_q, fit.tail_sigma, fit.head_c, fit.r2))
}

/// Norm degree of `sup:P`, `lr:P:R`, `spectral:PxN` or `frobenius:PxN`.
#[pyfunction(name = "norm_degree")]
fn norm_degree_py(descriptor: &str) -> PyResult<f64> {
    let space: NormSpace = descriptor.parse().map_err(err)?;
    norm_degree(space).map_err(err)
}

#[pymodule]
fn deteq_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Mixture>()?;
    m.add_class::<FixedPoint>()?;
    m.add_function(wrap_pyfunction!(sample_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(majorizes, m)?)?;
    m.add_function(wrap_pyfunction!(singular_values, m)?)?;
    m.add_function(wrap_pyfunction!(fit_tail, m)?)?;
    m.add_function(wrap_pyfunction!(norm_degree_py, m)?)?;
    Ok(())
}

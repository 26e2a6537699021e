//! Class mixtures, covariance builders and class-statistics estimation.

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};

use crate::error::{param, structural, Error, Result};
use crate::fixed_point::JointBasis;
use crate::linalg::{self, asymmetry, symmetrize_from_lower};

/// Statistics of one class: uncentered second moment `E[y y^T]`, mean and sample count.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassModel {
    sigma: DMatrix<f64>,
    mean: DVector<f64>,
    count: usize,
}

impl ClassModel {
    /// Validates and wraps class statistics.
    ///
    /// `sigma` must be square, finite and symmetric up to `1e-12` relative round-off (it is
    /// then made exactly symmetric), and `sigma - mean mean^T` must be positive semidefinite
    /// up to `-1e-10 * ||sigma||`.
    pub fn new(mut sigma: DMatrix<f64>, mean: DVector<f64>, count: usize) -> Result<Self> {
        let p = sigma.nrows();
        if sigma.ncols() != p {
            return Err(structural(format!(
                "second-moment matrix is {}x{}, expected square",
                p,
                sigma.ncols()
            )));
        }
        if mean.len() != p {
            return Err(structural(format!(
                "mean has length {}, second moment is {p}x{p}",
                mean.len()
            )));
        }
        if count == 0 {
            return Err(param("class count must be at least 1"));
        }
        if sigma.iter().chain(mean.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Data("class statistics contain non-finite entries".into()));
        }
        let scale = sigma.amax().max(f64::MIN_POSITIVE);
        let asym = asymmetry(&sigma);
        if asym > 1e-12 * scale.max(1.0) {
            return Err(structural(format!("second-moment matrix is not symmetric (gap {asym:e})")));
        }
        if asym > 0.0 {
            let t = sigma.transpose();
            sigma = (&sigma + t) * 0.5;
            symmetrize_from_lower(&mut sigma);
        }
        if p > 0 {
            let centered = &sigma - &mean * mean.transpose();
            let norm = linalg::sym_spectral_norm(&sigma);
            let min_eig = linalg::sym_eigenvalues(&centered)[0];
            if min_eig < -1e-10 * norm {
                return Err(Error::Data(format!(
                    "second moment minus mean outer product is not PSD (min eigenvalue {min_eig:e})"
                )));
            }
        }
        Ok(Self { sigma, mean, count })
    }

    /// Zero-mean class with the given second moment.
    pub fn centered(sigma: DMatrix<f64>, count: usize) -> Result<Self> {
        let p = sigma.nrows();
        Self::new(sigma, DVector::zeros(p), count)
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    /// `sigma - mean mean^T`.
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.sigma - &self.mean * self.mean.transpose()
    }

    /// Copy with the second moment multiplied by `a` (mean scaled by `sqrt(a)`).
    pub fn scaled(&self, a: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(param(format!("scale must be positive, got {a}")));
        }
        Self::new(&self.sigma * a, &self.mean * a.sqrt(), self.count)
    }
}

/// `k` classes sharing one ambient dimension, plus the derived ratios.
#[derive(Debug, Clone)]
pub struct Mixture {
    classes: Vec<ClassModel>,
    n: usize,
    p: usize,
    gamma: f64,
    population: DMatrix<f64>,
    joint: OnceLock<Option<Arc<JointBasis>>>,
}

impl Mixture {
    /// Validates the class list against the total count `n`.
    pub fn new(classes: Vec<ClassModel>, n: usize) -> Result<Self> {
        let first = classes
            .first()
            .ok_or_else(|| param("a mixture needs at least one class"))?;
        let p = first.dim();
        if p == 0 {
            return Err(param("dimension must be at least 1"));
        }
        if let Some((l, c)) = classes.iter().enumerate().find(|(_, c)| c.dim() != p) {
            return Err(structural(format!(
                "class {l} has dimension {}, class 0 has {p}",
                c.dim()
            )));
        }
        let total: usize = classes.iter().map(ClassModel::count).sum();
        if total != n {
            return Err(Error::Count { expected: n, got: total });
        }
        let mut population = DMatrix::zeros(p, p);
        for c in &classes {
            population += c.sigma() * (c.count() as f64 / n as f64);
        }
        symmetrize_from_lower(&mut population);
        Ok(Self {
            classes,
            n,
            p,
            gamma: p as f64 / n as f64,
            population,
            joint: OnceLock::new(),
        })
    }

    pub fn classes(&self) -> &[ClassModel] {
        &self.classes
    }

    pub fn k(&self) -> usize {
        self.classes.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// `p / n`.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `1 + p / n`.
    pub fn gamma_bar(&self) -> f64 {
        1.0 + self.gamma
    }

    /// Class proportions `n_l / n`.
    pub fn weights(&self) -> Vec<f64> {
        self.classes
            .iter()
            .map(|c| c.count() as f64 / self.n as f64)
            .collect()
    }

    /// Population second moment `sum_l (n_l / n) sigma_l`.
    pub fn population_second_moment(&self) -> &DMatrix<f64> {
        &self.population
    }

    /// Copy with every class second moment multiplied by `a`.
    pub fn scaled(&self, a: f64) -> Result<Self> {
        let classes = self
            .classes
            .iter()
            .map(|c| c.scaled(a))
            .collect::<Result<Vec<_>>>()?;
        Self::new(classes, self.n)
    }

    /// Common eigenbasis of the class matrices, when they commute.
    pub fn joint_basis(&self) -> Option<&JointBasis> {
        self.joint
            .get_or_init(|| JointBasis::try_new(self).map(Arc::new))
            .as_deref()
    }
}

/// Symmetric Toeplitz matrix with entries `a^(|i-j|+1)`.
pub fn toeplitz_covariance(a: f64, p: usize) -> Result<DMatrix<f64>> {
    if !(a > 0.0 && a < 1.0) {
        return Err(param(format!("Toeplitz base must lie in (0, 1), got {a}")));
    }
    if p < 1 {
        return Err(param("dimension must be at least 1"));
    }
    let powers: Vec<f64> = (0..p).map(|d| a.powi(d as i32 + 1)).collect();
    Ok(DMatrix::from_fn(p, p, |i, j| powers[i.abs_diff(j)]))
}

/// Class statistics from a `p x m` sample matrix (columns are observations).
///
/// The second moment is uncentered: `samples * samples^T / m`.
pub fn estimate_class_model(samples: &DMatrix<f64>, count: usize) -> Result<ClassModel> {
    let m = samples.ncols();
    if m == 0 {
        return Err(Error::EmptyData);
    }
    if let Some(pos) = samples.iter().position(|v| !v.is_finite()) {
        let (r, c) = (pos % samples.nrows(), pos / samples.nrows());
        return Err(Error::Data(format!("non-finite sample at row {r}, column {c}")));
    }
    let inv_m = 1.0 / m as f64;
    let mean = samples.column_sum() * inv_m;
    let mut sigma = samples * samples.transpose() * inv_m;
    symmetrize_from_lower(&mut sigma);
    ClassModel::new(sigma, mean, count)
}

/// How latent noise is turned into an observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorKind {
    /// `mean + factor * g`, `g` standard normal.
    Gaussian,
    /// `mean + f(factor * g)` with `f` applied entrywise.
    LipschitzOfGaussian,
    /// `mean + factor * u`, `u` with independent symmetric entries in `[-1, 1]`.
    BoundedAffine,
}

/// Entrywise 1-Lipschitz maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nonlinearity {
    Identity,
    Tanh,
    Relu,
    Abs,
}

impl Nonlinearity {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Identity => x,
            Nonlinearity::Tanh => x.tanh(),
            Nonlinearity::Relu => x.max(0.0),
            Nonlinearity::Abs => x.abs(),
        }
    }
}

/// Law of the latent coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentLaw {
    StandardNormal,
    /// Uniform signs `{-1, +1}`.
    Rademacher,
    /// Uniform on `[-1, 1]`; the factor is rescaled by `sqrt(3)` to keep unit variance.
    Uniform,
}

impl LatentLaw {
    /// Multiplier applied to the factor so that the latent coordinates have unit variance.
    pub fn unit_variance_scale(self) -> f64 {
        match self {
            LatentLaw::Uniform => 3f64.sqrt(),
            _ => 1.0,
        }
    }
}

macro_rules! named_enum {
    ($ty:ty, $what:literal, { $($name:literal => $variant:expr),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($name => Ok($variant),)+
                    other => Err(param(format!(concat!("unknown ", $what, " '{}'"), other))),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let name = match self {
                    $(v if *v == $variant => $name,)+
                    _ => unreachable!(),
                };
                f.write_str(name)
            }
        }
    };
}

named_enum!(GeneratorKind, "generator kind", {
    "gaussian" => GeneratorKind::Gaussian,
    "lipschitz-of-gaussian" => GeneratorKind::LipschitzOfGaussian,
    "bounded-affine" => GeneratorKind::BoundedAffine,
});

named_enum!(Nonlinearity, "nonlinearity", {
    "identity" => Nonlinearity::Identity,
    "tanh" => Nonlinearity::Tanh,
    "relu" => Nonlinearity::Relu,
    "abs" => Nonlinearity::Abs,
});

named_enum!(LatentLaw, "latent law", {
    "standard-normal" => LatentLaw::StandardNormal,
    "rademacher" => LatentLaw::Rademacher,
    "uniform" => LatentLaw::Uniform,
});

/// Recipe for drawing i.i.d. observations of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    kind: GeneratorKind,
    mean: DVector<f64>,
    factor: DMatrix<f64>,
    nonlinearity: Nonlinearity,
    latent: LatentLaw,
}

impl GeneratorSpec {
    /// General constructor enforcing the kind/latent/nonlinearity compatibility rules.
    pub fn new(
        kind: GeneratorKind,
        mean: DVector<f64>,
        factor: DMatrix<f64>,
        nonlinearity: Nonlinearity,
        latent: LatentLaw,
    ) -> Result<Self> {
        if factor.nrows() != mean.len() {
            return Err(structural(format!(
                "factor has {} rows but mean has length {}",
                factor.nrows(),
                mean.len()
            )));
        }
        if factor.ncols() == 0 || mean.is_empty() {
            return Err(structural("generator dimensions must be at least 1"));
        }
        if factor.iter().chain(mean.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Data("generator parameters contain non-finite entries".into()));
        }
        match kind {
            GeneratorKind::Gaussian => {
                if nonlinearity != Nonlinearity::Identity || latent != LatentLaw::StandardNormal {
                    return Err(param(
                        "gaussian generators use the identity map and standard-normal latents",
                    ));
                }
            }
            GeneratorKind::LipschitzOfGaussian => {
                if latent != LatentLaw::StandardNormal {
                    return Err(param("lipschitz-of-gaussian generators use standard-normal latents"));
                }
            }
            GeneratorKind::BoundedAffine => {
                if nonlinearity != Nonlinearity::Identity {
                    return Err(param("bounded-affine generators are affine"));
                }
                if latent == LatentLaw::StandardNormal {
                    return Err(param("bounded-affine generators need a bounded latent law"));
                }
            }
        }
        Ok(Self { kind, mean, factor, nonlinearity, latent })
    }

    pub fn gaussian(mean: DVector<f64>, factor: DMatrix<f64>) -> Result<Self> {
        Self::new(
            GeneratorKind::Gaussian,
            mean,
            factor,
            Nonlinearity::Identity,
            LatentLaw::StandardNormal,
        )
    }

    pub fn lipschitz_of_gaussian(
        mean: DVector<f64>,
        factor: DMatrix<f64>,
        nonlinearity: Nonlinearity,
    ) -> Result<Self> {
        Self::new(
            GeneratorKind::LipschitzOfGaussian,
            mean,
            factor,
            nonlinearity,
            LatentLaw::StandardNormal,
        )
    }

    pub fn bounded_affine(mean: DVector<f64>, factor: DMatrix<f64>, latent: LatentLaw) -> Result<Self> {
        Self::new(GeneratorKind::BoundedAffine, mean, factor, Nonlinearity::Identity, latent)
    }

    /// Standard Gaussian in dimension `p`.
    pub fn standard_gaussian(p: usize) -> Result<Self> {
        Self::gaussian(DVector::zeros(p), DMatrix::identity(p, p))
    }

    /// Gaussian whose second moment and mean match `model`; the factor is the principal
    /// square root of `sigma - mean mean^T`.
    pub fn gaussian_matching(model: &ClassModel) -> Result<Self> {
        Self::gaussian(model.mean().clone(), linalg::psd_sqrt(&model.covariance()))
    }

    /// Bounded-affine generator whose second moment and mean match `model`.
    pub fn bounded_matching(model: &ClassModel, latent: LatentLaw) -> Result<Self> {
        Self::bounded_affine(model.mean().clone(), linalg::psd_sqrt(&model.covariance()), latent)
    }

    pub fn kind(&self) -> GeneratorKind {
        self.kind
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn nonlinearity(&self) -> Nonlinearity {
        self.nonlinearity
    }

    pub fn latent(&self) -> LatentLaw {
        self.latent
    }

    /// Observation dimension `p`.
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Latent dimension `d`.
    pub fn latent_dim(&self) -> usize {
        self.factor.ncols()
    }

    /// `E[y y^T]` when it is available in closed form (affine generators).
    pub fn second_moment(&self) -> Option<DMatrix<f64>> {
        if self.nonlinearity != Nonlinearity::Identity {
            return None;
        }
        let mut m = &self.factor * self.factor.transpose() + &self.mean * self.mean.transpose();
        symmetrize_from_lower(&mut m);
        Some(m)
    }

    /// Class model with `count` samples, when the second moment is known in closed form.
    pub fn class_model(&self, count: usize) -> Option<Result<ClassModel>> {
        self.second_moment()
            .map(|m| ClassModel::new(m, self.mean.clone(), count))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toeplitz_three_by_three() {
        let t = toeplitz_covariance(0.1, 3).unwrap();
        let expected = DMatrix::from_row_slice(
            3,
            3,
            &[0.1, 0.01, 0.001, 0.01, 0.1, 0.01, 0.001, 0.01, 0.1],
        );
        assert!((&t - &expected).amax() < 1e-17);
        assert_eq!(toeplitz_covariance(0.1, 1).unwrap()[(0, 0)], 0.1);
    }

    #[test]
    fn toeplitz_is_bitwise_symmetric_with_power_first_row() {
        let t = toeplitz_covariance(0.37, 17).unwrap();
        assert_eq!(asymmetry(&t), 0.0);
        for j in 0..17 {
            assert_eq!(t[(0, j)], 0.37f64.powi(j as i32 + 1));
        }
    }

    #[test]
    fn toeplitz_fifty_is_positive_definite() {
        let t = toeplitz_covariance(0.1, 50).unwrap();
        assert!(linalg::sym_eigenvalues(&t)[0] > 0.0);
    }

    #[test]
    fn toeplitz_rejects_bad_parameters() {
        for a in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
            assert!(matches!(toeplitz_covariance(a, 3), Err(Error::Parameter(_))));
        }
        assert!(matches!(toeplitz_covariance(0.5, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn single_class_mixture_ratios() {
        let c = ClassModel::centered(DMatrix::identity(4, 4), 8).unwrap();
        let m = Mixture::new(vec![c], 8).unwrap();
        assert_eq!(m.k(), 1);
        assert_eq!(m.gamma(), 0.5);
        assert_eq!(m.gamma_bar(), 1.5);
    }

    #[test]
    fn figure_two_mixture_builds() {
        let p = 1000;
        let t = toeplitz_covariance(0.1, p).unwrap();
        let c1 = ClassModel::centered(&t * 10.0, 100).unwrap();
        let c2 = ClassModel::centered(&t * &t * 10.0, 900).unwrap();
        let m = Mixture::new(vec![c1, c2], 1000).unwrap();
        assert_eq!((m.k(), m.p(), m.n()), (2, 1000, 1000));
        assert_eq!(m.gamma(), 1.0);
        // Both classes mix back to T + 9 T^2.
        let target = &t + &t * &t * 9.0;
        assert!((m.population_second_moment() - target).amax() < 1e-14);
    }

    #[test]
    fn mixture_rejects_mismatched_dimensions_and_counts() {
        let a = ClassModel::centered(DMatrix::identity(3, 3), 2).unwrap();
        let b = ClassModel::centered(DMatrix::identity(4, 4), 2).unwrap();
        assert!(matches!(Mixture::new(vec![a.clone(), b], 4), Err(Error::Structural(_))));
        assert!(matches!(
            Mixture::new(vec![a], 5),
            Err(Error::Count { expected: 5, got: 2 })
        ));
        assert!(Mixture::new(vec![], 0).is_err());
    }

    #[test]
    fn trace_of_population_is_weighted_class_traces() {
        let t = toeplitz_covariance(0.3, 6).unwrap();
        let c1 = ClassModel::centered(&t * 2.0, 3).unwrap();
        let c2 = ClassModel::centered(DMatrix::identity(6, 6), 9).unwrap();
        let m = Mixture::new(vec![c1.clone(), c2.clone()], 12).unwrap();
        let expected = 0.25 * c1.sigma().trace() + 0.75 * c2.sigma().trace();
        assert!((m.population_second_moment().trace() - expected).abs() < 1e-13);
    }

    #[test]
    fn class_model_rejects_mean_dominating_second_moment() {
        let sigma = DMatrix::identity(2, 2);
        let mean = DVector::from_vec(vec![2.0, 0.0]);
        assert!(matches!(ClassModel::new(sigma, mean, 1), Err(Error::Data(_))));
    }

    #[test]
    fn class_model_rejects_asymmetry() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(ClassModel::centered(sigma, 1), Err(Error::Structural(_))));
    }

    #[test]
    fn estimate_direct_formula() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        let c = estimate_class_model(&x, 2).unwrap();
        assert_eq!(c.mean().as_slice(), &[1.0, 0.0]);
        assert_eq!(c.sigma(), &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn estimate_rejects_empty_and_non_finite() {
        assert_eq!(estimate_class_model(&DMatrix::zeros(3, 0), 1), Err(Error::EmptyData));
        let mut x = DMatrix::zeros(2, 2);
        x[(1, 0)] = f64::NAN;
        assert!(matches!(estimate_class_model(&x, 2), Err(Error::Data(_))));
    }

    #[test]
    fn single_column_gives_rank_one_moment() {
        let y = DMatrix::from_column_slice(3, 1, &[1.0, -2.0, 0.5]);
        let c = estimate_class_model(&y, 1).unwrap();
        assert!((c.sigma() - &y * y.transpose()).amax() < 1e-15);
    }

    #[test]
    fn generator_rules() {
        let mean = DVector::zeros(2);
        let f = DMatrix::identity(2, 2);
        assert!(GeneratorSpec::new(
            GeneratorKind::Gaussian,
            mean.clone(),
            f.clone(),
            Nonlinearity::Tanh,
            LatentLaw::StandardNormal
        )
        .is_err());
        assert!(GeneratorSpec::bounded_affine(mean.clone(), f.clone(), LatentLaw::StandardNormal).is_err());
        assert!(matches!(
            GeneratorSpec::gaussian(DVector::zeros(3), f.clone()),
            Err(Error::Structural(_))
        ));
        let g = GeneratorSpec::lipschitz_of_gaussian(mean, f, Nonlinearity::Relu).unwrap();
        assert!(g.second_moment().is_none());
    }

    #[test]
    fn names_round_trip() {
        for k in [GeneratorKind::Gaussian, GeneratorKind::LipschitzOfGaussian, GeneratorKind::BoundedAffine] {
            assert_eq!(k.to_string().parse::<GeneratorKind>().unwrap(), k);
        }
        assert_eq!("TANH".parse::<Nonlinearity>().unwrap(), Nonlinearity::Tanh);
        assert!("sigmoid".parse::<Nonlinearity>().is_err());
    }

    #[test]
    fn matching_generators_reproduce_second_moment() {
        let t = toeplitz_covariance(0.4, 5).unwrap();
        let mean = DVector::from_vec(vec![0.1, 0.0, -0.2, 0.0, 0.3]);
        let sigma = &t + &mean * mean.transpose();
        let model = ClassModel::new(sigma.clone(), mean, 3).unwrap();
        for g in [
            GeneratorSpec::gaussian_matching(&model).unwrap(),
            GeneratorSpec::bounded_matching(&model, LatentLaw::Rademacher).unwrap(),
        ] {
            assert!((g.second_moment().unwrap() - &sigma).amax() < 1e-12);
        }
    }
}

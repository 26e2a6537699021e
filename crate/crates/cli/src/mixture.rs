//! Builds populations (class statistics plus generators) from configuration.

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use deteq::io::{read_matrix, DelimitedOptions};
use deteq::model::{toeplitz_covariance, ClassModel, GeneratorKind, LatentLaw, Mixture, Nonlinearity};
use deteq::sampler::derive_seed;
use deteq::{GeneratorSpec, Population};
use nalgebra::{DMatrix, DVector};

use crate::config::{ClassConfig, CovarianceConfig, MixtureConfig, MixtureFile, Surrogate};

const MOMENT_STREAM: u64 = 0x6d6f_6d65_6e74;

fn read_vector(path: &Path, p: usize) -> Result<DVector<f64>> {
    let m = read_matrix(path, &DelimitedOptions::default())?;
    ensure!(
        m.len() == p && (m.ncols() == 1 || m.nrows() == 1),
        "{}: expected a vector of length {p}, got {}x{}",
        path.display(),
        m.nrows(),
        m.ncols()
    );
    Ok(DVector::from_column_slice(m.as_slice()))
}

fn covariance(c: &CovarianceConfig, p: Option<usize>) -> Result<DMatrix<f64>> {
    Ok(match c {
        CovarianceConfig::File { path } => {
            let m = read_matrix(path, &DelimitedOptions::default())?;
            ensure!(m.is_square(), "{}: covariance must be square", path.display());
            m
        }
        other => {
            let p = p.context("built-in covariance needs `mixture.p`")?;
            match other {
                CovarianceConfig::Identity => DMatrix::identity(p, p),
                CovarianceConfig::Zero => DMatrix::zeros(p, p),
                CovarianceConfig::Toeplitz { base, power } => {
                    let t = toeplitz_covariance(*base, p)?;
                    ensure!(*power >= 1, "toeplitz power must be at least 1");
                    let mut m = t.clone();
                    for _ in 1..*power {
                        m = &m * &t;
                    }
                    // Products of symmetric Toeplitz matrices are symmetric only up to rounding.
                    (&m + m.transpose()) * 0.5
                }
                CovarianceConfig::File { .. } => unreachable!(),
            }
        }
    })
}

fn class_generator(c: &ClassConfig, model: &ClassModel) -> Result<GeneratorSpec> {
    let kind: GeneratorKind = c.generator.parse()?;
    let latent = |default: LatentLaw| -> Result<LatentLaw> {
        c.latent.as_deref().map_or(Ok(default), |s| Ok(s.parse()?))
    };
    Ok(match kind {
        GeneratorKind::Gaussian => {
            ensure!(c.nonlinearity.is_none(), "gaussian classes take no nonlinearity");
            ensure!(
                c.latent.is_none() || latent(LatentLaw::StandardNormal)? == LatentLaw::StandardNormal,
                "gaussian classes use a standard normal latent"
            );
            GeneratorSpec::gaussian_matching(model)?
        }
        GeneratorKind::BoundedAffine => {
            ensure!(c.nonlinearity.is_none(), "bounded-affine classes take no nonlinearity");
            GeneratorSpec::bounded_matching(model, latent(LatentLaw::Rademacher)?)?
        }
        GeneratorKind::LipschitzOfGaussian => {
            let nl: Nonlinearity = c.nonlinearity.as_deref().unwrap_or("identity").parse()?;
            let factor = GeneratorSpec::gaussian_matching(model)?.factor().clone();
            GeneratorSpec::lipschitz_of_gaussian(model.mean().clone(), factor, nl)?
        }
    })
}

/// Class statistics and generators. Nonlinear generators get estimated second moments, which
/// needs a seed.
pub fn build_population(m: &MixtureConfig, seed: Option<u64>) -> Result<Population> {
    if let Some(file) = &m.file {
        return load_mixture_file(file, m.surrogate, m.n);
    }
    let mut models = Vec::with_capacity(m.classes.len());
    let mut generators = Vec::with_capacity(m.classes.len());
    for (l, c) in m.classes.iter().enumerate() {
        let build = || -> Result<(ClassModel, GeneratorSpec)> {
            ensure!(c.scale >= 0.0 && c.scale.is_finite(), "scale must be nonnegative");
            let cov = covariance(&c.covariance, m.p)? * c.scale;
            let p = cov.nrows();
            let mean = match &c.mean {
                Some(path) => read_vector(path, p)?,
                None => DVector::zeros(p),
            };
            let sigma = cov + &mean * mean.transpose();
            let model = ClassModel::new(sigma, mean, c.count)?;
            let generator = class_generator(c, &model)?;
            Ok((model, generator))
        };
        let (model, generator) = build().with_context(|| format!("mixture class {l}"))?;
        models.push(model);
        generators.push(generator);
    }
    let n = m.n.unwrap_or_else(|| models.iter().map(ClassModel::count).sum());
    if generators.iter().any(|g| g.second_moment().is_none()) {
        let seed = seed.context("nonlinear generators need a seed to estimate second moments")?;
        let counts = models.iter().map(ClassModel::count);
        let classes: Vec<(GeneratorSpec, usize)> = generators.into_iter().zip(counts).collect();
        ensure!(
            classes.iter().map(|(_, c)| c).sum::<usize>() == n,
            "class counts do not sum to n = {n}"
        );
        return Ok(Population::estimated(classes, m.moment_samples, derive_seed(seed, MOMENT_STREAM))?);
    }
    Ok(Population::with_mixture(Mixture::new(models, n)?, generators)?)
}

/// Reads a descriptor written by `ingest`; classes are sampled from matched surrogates.
pub fn load_mixture_file(path: &Path, surrogate: Surrogate, n_override: Option<usize>) -> Result<Population> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let desc: MixtureFile = toml::from_str(&text).with_context(|| format!("invalid mixture file {}", path.display()))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let opts = DelimitedOptions::default();
    let mut models = Vec::with_capacity(desc.classes.len());
    let mut generators = Vec::with_capacity(desc.classes.len());
    for (l, c) in desc.classes.iter().enumerate() {
        let sigma = read_matrix(&base.join(&c.second_moment), &opts)?;
        let mean = read_vector(&base.join(&c.mean), desc.p)?;
        if sigma.shape() != (desc.p, desc.p) {
            bail!("class {l}: second moment is {}x{}, expected p = {}", sigma.nrows(), sigma.ncols(), desc.p);
        }
        let model = ClassModel::new(sigma, mean, c.count).with_context(|| format!("class {l} of {}", path.display()))?;
        generators.push(match surrogate {
            Surrogate::Gaussian => GeneratorSpec::gaussian_matching(&model)?,
            Surrogate::Rademacher => GeneratorSpec::bounded_matching(&model, LatentLaw::Rademacher)?,
            Surrogate::Uniform => GeneratorSpec::bounded_matching(&model, LatentLaw::Uniform)?,
        });
        models.push(model);
    }
    let n = n_override.unwrap_or(desc.n);
    Ok(Population::with_mixture(Mixture::new(models, n)?, generators)?)
}

//! Seeded data generation, empirical spectra and histograms.
//!
//! Every column is drawn from its own ChaCha8 stream (key = seed, stream = column index), so
//! output is independent of how columns are scheduled across threads.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{param, structural, Error, Result};
use crate::linalg::{stable_sum, sym_eigenvalues};
use crate::model::{ClassModel, GeneratorSpec, LatentLaw, Mixture, Nonlinearity};

/// SplitMix64 finalizer; used to derive independent seeds for trials and substreams.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn latent_column(law: LatentLaw, d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match law {
        LatentLaw::StandardNormal => (0..d).map(|_| rng.sample(StandardNormal)).collect(),
        LatentLaw::Rademacher => (0..d)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect(),
        LatentLaw::Uniform => (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect(),
    }
}

/// Draws `count` columns of `spec` using streams `first_stream..first_stream + count`, so a
/// long sample can be produced in chunks with the same result as one call.
pub fn sample_columns(spec: &GeneratorSpec, count: usize, seed: u64, first_stream: u64) -> DMatrix<f64> {
    let d = spec.latent_dim();
    let latent: Vec<Vec<f64>> = (0..count)
        .into_par_iter()
        .map(|j| {
            let mut rng = stream_rng(seed, first_stream + j as u64);
            latent_column(spec.latent(), d, &mut rng)
        })
        .collect();
    let mut u = DMatrix::zeros(d, count);
    for (j, col) in latent.iter().enumerate() {
        u.column_mut(j).copy_from_slice(col);
    }
    let mut y = spec.factor() * u;
    let scale = spec.latent().unit_variance_scale();
    if scale != 1.0 {
        y *= scale;
    }
    if spec.nonlinearity() != Nonlinearity::Identity {
        let f = spec.nonlinearity();
        y.apply(|v| *v = f.apply(*v));
    }
    for mut col in y.column_iter_mut() {
        col += spec.mean();
    }
    y
}

/// `count` i.i.d. observations of `spec` as the columns of a `p x count` matrix.
pub fn sample_class(spec: &GeneratorSpec, count: usize, seed: u64) -> Result<DMatrix<f64>> {
    if count == 0 {
        return Err(param("sample count must be at least 1"));
    }
    Ok(sample_columns(spec, count, seed, 0))
}

/// A data matrix together with the class of each column.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub x: DMatrix<f64>,
    pub labels: Vec<usize>,
}

impl LabeledSample {
    /// Column range of class `l`.
    pub fn class_columns(&self, l: usize) -> std::ops::Range<usize> {
        let start = self.labels.iter().position(|c| *c == l).unwrap_or(self.labels.len());
        let len = self.labels[start..].iter().take_while(|c| **c == l).count();
        start..start + len
    }
}

/// Concatenates the classes in order; class `l` occupies a contiguous block of columns.
pub fn sample_mixture(classes: &[(GeneratorSpec, usize)], n: usize, seed: u64) -> Result<LabeledSample> {
    let (first, _) = classes.first().ok_or_else(|| param("no classes given"))?;
    let p = first.dim();
    if let Some((l, (g, _))) = classes.iter().enumerate().find(|(_, (g, _))| g.dim() != p) {
        return Err(structural(format!("class {l} has dimension {}, class 0 has {p}", g.dim())));
    }
    let total: usize = classes.iter().map(|(_, c)| c).sum();
    if total != n {
        return Err(Error::Count { expected: n, got: total });
    }
    let mut x = DMatrix::zeros(p, n);
    let mut labels = Vec::with_capacity(n);
    let mut offset = 0;
    for (l, (spec, count)) in classes.iter().enumerate() {
        if *count == 0 {
            continue;
        }
        let block = sample_columns(spec, *count, seed, offset as u64);
        x.columns_mut(offset, *count).copy_from(&block);
        labels.extend(std::iter::repeat_n(l, *count));
        offset += count;
    }
    Ok(LabeledSample { x, labels })
}

/// Generators paired with the class statistics used for predictions.
#[derive(Debug, Clone)]
pub struct Population {
    mixture: Mixture,
    generators: Vec<GeneratorSpec>,
}

impl Population {
    /// Builds the mixture from closed-form second moments of affine generators.
    pub fn from_generators(classes: Vec<(GeneratorSpec, usize)>) -> Result<Self> {
        let n = classes.iter().map(|(_, c)| c).sum();
        let models = classes
            .iter()
            .enumerate()
            .map(|(l, (g, c))| {
                g.class_model(*c).unwrap_or_else(|| {
                    Err(param(format!(
                        "class {l}: second moment of a nonlinear generator must be estimated"
                    )))
                })
            })
            .collect::<Result<Vec<ClassModel>>>()?;
        let mixture = Mixture::new(models, n)?;
        Ok(Self {
            mixture,
            generators: classes.into_iter().map(|(g, _)| g).collect(),
        })
    }

    /// Pairs generators with externally supplied (e.g. estimated) class statistics.
    pub fn with_mixture(mixture: Mixture, generators: Vec<GeneratorSpec>) -> Result<Self> {
        if generators.len() != mixture.k() {
            return Err(structural(format!(
                "{} generators for {} classes",
                generators.len(),
                mixture.k()
            )));
        }
        if let Some(g) = generators.iter().find(|g| g.dim() != mixture.p()) {
            return Err(structural(format!(
                "generator dimension {} differs from mixture dimension {}",
                g.dim(),
                mixture.p()
            )));
        }
        Ok(Self { mixture, generators })
    }

    /// Estimates each class model from `samples_per_class` fresh draws, then pairs them.
    pub fn estimated(classes: Vec<(GeneratorSpec, usize)>, samples_per_class: usize, seed: u64) -> Result<Self> {
        let n = classes.iter().map(|(_, c)| c).sum();
        let models = classes
            .iter()
            .enumerate()
            .map(|(l, (g, c))| {
                let data = sample_class(g, samples_per_class, derive_seed(seed, l as u64))?;
                crate::model::estimate_class_model(&data, *c)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::with_mixture(
            Mixture::new(models, n)?,
            classes.into_iter().map(|(g, _)| g).collect(),
        )
    }

    pub fn mixture(&self) -> &Mixture {
        &self.mixture
    }

    pub fn generators(&self) -> &[GeneratorSpec] {
        &self.generators
    }

    pub fn classes(&self) -> Vec<(GeneratorSpec, usize)> {
        self.generators
            .iter()
            .cloned()
            .zip(self.mixture.classes().iter().map(ClassModel::count))
            .collect()
    }

    pub fn sample(&self, seed: u64) -> Result<LabeledSample> {
        sample_mixture(&self.classes(), self.mixture.n(), seed)
    }
}

/// Sorted eigenvalues of `S = X X^T / n` from one draw.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalSpectrum {
    /// Ascending, nonnegative.
    pub eigenvalues: Vec<f64>,
    pub p: usize,
    pub n: usize,
    pub seed: Option<u64>,
}

impl EmpiricalSpectrum {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    /// `(1/p) sum_i 1 / (l_i + z)`.
    pub fn stieltjes(&self, z: f64) -> f64 {
        stable_sum(self.eigenvalues.iter().map(|l| 1.0 / (l + z))) / self.p as f64
    }

    pub fn trace(&self) -> f64 {
        stable_sum(self.eigenvalues.iter().copied())
    }

    /// Empirical CDF `F(t) = #{l_i <= t} / p`.
    pub fn cdf(&self, t: f64) -> f64 {
        self.eigenvalues.partition_point(|l| *l <= t) as f64 / self.p as f64
    }

    /// Kolmogorov distance `sup_t |F(t) - G(t)|` between two spectral CDFs.
    pub fn kolmogorov_distance(&self, other: &EmpiricalSpectrum) -> f64 {
        self.eigenvalues
            .iter()
            .chain(&other.eigenvalues)
            .map(|t| (self.cdf(*t) - other.cdf(*t)).abs())
            .fold(0.0, f64::max)
    }
}

/// Eigenvalues of `X X^T / n`; when `p > n` the `n x n` Gram matrix is used and the spectrum
/// is padded with zeros. Values below `1e-10 * max` are clamped to zero.
pub fn empirical_spectrum(x: &DMatrix<f64>) -> Result<EmpiricalSpectrum> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("data matrix has non-finite entries".into()));
    }
    let (p, n) = x.shape();
    let inv_n = 1.0 / n.max(1) as f64;
    let mut ev = if n == 0 {
        vec![0.0; p]
    } else if p > n {
        let g = x.transpose() * x * inv_n;
        let mut ev = sym_eigenvalues(&g);
        ev.extend(std::iter::repeat_n(0.0, p - n));
        ev
    } else {
        sym_eigenvalues(&(x * x.transpose() * inv_n))
    };
    let top = ev.iter().fold(0.0f64, |m, v| m.max(*v));
    for v in ev.iter_mut() {
        if *v <= 1e-10 * top {
            *v = 0.0;
        }
    }
    ev.sort_by(|a, b| a.total_cmp(b));
    Ok(EmpiricalSpectrum { eigenvalues: ev, p, n, seed: None })
}

/// Bin specification.
#[derive(Debug, Clone, PartialEq)]
pub enum Bins {
    /// Equal-width bins spanning the transformed values.
    Count(usize),
    /// Explicit increasing edges; the last bin is closed on the right.
    Edges(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    /// Relative counts, summing to one.
    pub mass: Vec<f64>,
    /// Exponent applied to eigenvalues before binning.
    pub transform: Option<f64>,
}

/// Relative-frequency histogram of `lambda^transform` (nonpositive eigenvalues map to 0).
pub fn histogram(spectrum: &EmpiricalSpectrum, bins: &Bins, transform: Option<f64>) -> Result<Histogram> {
    if let Some(t) = transform {
        if !(t > 0.0 && t.is_finite()) {
            return Err(param(format!("transform exponent must be positive, got {t}")));
        }
    }
    let values: Vec<f64> = spectrum
        .eigenvalues
        .iter()
        .map(|l| {
            let l = l.max(0.0);
            match transform {
                Some(t) if t != 1.0 => l.powf(t),
                _ => l,
            }
        })
        .collect();
    if values.is_empty() {
        return Err(Error::EmptyData);
    }
    let edges = match bins {
        Bins::Count(0) => return Err(param("need at least one bin")),
        Bins::Count(k) => {
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi <= lo {
                hi = lo + 1.0;
            }
            let w = (hi - lo) / *k as f64;
            let mut e: Vec<f64> = (0..=*k).map(|i| lo + w * i as f64).collect();
            e[*k] = hi;
            e
        }
        Bins::Edges(e) => {
            if e.len() < 2 {
                return Err(param("need at least two bin edges"));
            }
            if e.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(param("bin edges must be strictly increasing"));
            }
            e.clone()
        }
    };
    let nb = edges.len() - 1;
    let (lo, hi) = (edges[0], edges[nb]);
    let mut counts = vec![0usize; nb];
    for v in &values {
        if *v < lo || *v > hi {
            return Err(param(format!("value {v} lies outside the histogram range [{lo}, {hi}]")));
        }
        let idx = edges.partition_point(|e| e <= v).saturating_sub(1).min(nb - 1);
        counts[idx] += 1;
    }
    let total = values.len() as f64;
    Ok(Histogram {
        bin_edges: edges,
        mass: counts.iter().map(|c| *c as f64 / total).collect(),
        transform,
    })
}

/// Second moment `X X^T / m` of a sample, as a convenience for moment checks.
pub fn empirical_second_moment(x: &DMatrix<f64>) -> DMatrix<f64> {
    crate::equivalent::sample_covariance(x)
}

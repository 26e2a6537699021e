//! TOML experiment configuration.
//!
//! Relative paths are resolved against the directory of the configuration file. Every check
//! that can fail before computation (syntax, grids, referenced files, seed) runs in
//! [`ExperimentConfig::load`] or [`ExperimentConfig::require_seed`], so a rejected
//! configuration never leaves files behind.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub mixture: Option<MixtureConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    pub predict: Option<PredictConfig>,
    pub simulate: Option<SimulateConfig>,
    pub compare: Option<CompareConfig>,
    pub conclab: Option<ConclabConfig>,
    pub ingest: Option<IngestConfig>,
}

/// Classes given inline, or a mixture descriptor file written by `ingest`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureConfig {
    pub file: Option<PathBuf>,
    /// Dimension for built-in covariances.
    pub p: Option<usize>,
    /// Total sample count; defaults to the sum of class counts.
    pub n: Option<usize>,
    /// Draws per class used to estimate second moments of nonlinear generators.
    #[serde(default = "default_moment_samples")]
    pub moment_samples: usize,
    /// Law used to sample classes loaded from a descriptor file.
    #[serde(default)]
    pub surrogate: Surrogate,
    #[serde(default, rename = "class")]
    pub classes: Vec<ClassConfig>,
}

fn default_moment_samples() -> usize {
    20_000
}

#[derive(Debug, Clone, Copy, Deserialize, Default, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Surrogate {
    #[default]
    Gaussian,
    Rademacher,
    Uniform,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassConfig {
    pub count: usize,
    /// Covariance `E[(x - mu)(x - mu)^T]` before scaling.
    pub covariance: CovarianceConfig,
    #[serde(default = "one")]
    pub scale: f64,
    /// Column vector file.
    pub mean: Option<PathBuf>,
    #[serde(default = "default_generator")]
    pub generator: String,
    pub latent: Option<String>,
    pub nonlinearity: Option<String>,
}

fn one() -> f64 {
    1.0
}

fn default_generator() -> String {
    "gaussian".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CovarianceConfig {
    Identity,
    Zero,
    /// Entries `base^(|i-j|+1)`, raised to a matrix power.
    Toeplitz {
        base: f64,
        #[serde(default = "one_u32")]
        power: u32,
    },
    File {
        path: PathBuf,
    },
}

fn one_u32() -> u32 {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub backend: String,
    pub complex_tol: f64,
    pub complex_max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 10_000,
            backend: "auto".into(),
            complex_tol: 1e-10,
            complex_max_iter: 50_000,
        }
    }
}

/// Explicit points or an inclusive `count`-point range (geometric when `log` is set).
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum GridConfig {
    Points(Vec<f64>),
    Range {
        start: f64,
        stop: f64,
        count: usize,
        #[serde(default)]
        log: bool,
    },
}

impl GridConfig {
    pub fn points(&self) -> Result<Vec<f64>> {
        let pts = match self {
            GridConfig::Points(v) => v.clone(),
            GridConfig::Range { start, stop, count, log } => {
                ensure!(*count >= 1, "grid count must be at least 1");
                if *count == 1 {
                    vec![*start]
                } else if *log {
                    ensure!(*start > 0.0 && *stop > 0.0, "log grid needs positive endpoints");
                    let (a, b) = (start.ln(), stop.ln());
                    (0..*count)
                        .map(|i| (a + (b - a) * i as f64 / (*count - 1) as f64).exp())
                        .collect()
                } else {
                    (0..*count)
                        .map(|i| start + (stop - start) * i as f64 / (*count - 1) as f64)
                        .collect()
                }
            }
        };
        ensure!(!pts.is_empty(), "grid is empty");
        ensure!(pts.iter().all(|v| v.is_finite()), "grid has non-finite points");
        ensure!(pts.windows(2).all(|w| w[1] > w[0]), "grid must be strictly increasing");
        Ok(pts)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    pub z: GridConfig,
    /// Point at which `delta.csv` is reported; defaults to the first `z`.
    pub delta_z: Option<f64>,
    /// Defaults to 400 points up to a Marchenko-Pastur-type bound on the spectrum.
    pub lambda: Option<GridConfig>,
    /// Defaults to `1e-3` times the span of the lambda grid.
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub bins: Option<usize>,
    pub edges: Option<Vec<f64>>,
    /// Histogram of `lambda^transform`.
    pub transform: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub z: GridConfig,
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Midpoints per bin used to integrate the predicted density.
    #[serde(default = "default_subdivisions")]
    pub subdivisions: usize,
    pub epsilon: Option<f64>,
    pub max_sup_err: Option<f64>,
    pub max_l1: Option<f64>,
}

fn default_trials() -> usize {
    10
}

fn default_bins() -> usize {
    20
}

fn default_subdivisions() -> usize {
    20
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ConclabConfig {
    #[serde(default, rename = "check")]
    pub checks: Vec<CheckConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CheckConfig {
    /// Exponent of the tail of a functional of a standard Gaussian vector.
    TailFit {
        p: usize,
        #[serde(default = "default_tail_samples")]
        samples: usize,
        #[serde(default = "default_functional")]
        functional: String,
        grid: GridConfig,
        #[serde(default = "default_q_min")]
        q_min: f64,
        #[serde(default = "default_q_max")]
        q_max: f64,
    },
    /// Diameters of standard Gaussian vectors across dimensions.
    ObservableDiameter {
        dims: Vec<usize>,
        #[serde(default = "default_diameter_trials")]
        trials: usize,
        #[serde(default = "default_functionals")]
        functionals: Vec<String>,
        #[serde(default = "default_max_ratio")]
        max_ratio: f64,
    },
    /// `Z^T A Z` for standard Gaussian `Z`.
    QuadraticForm {
        p: usize,
        trials: usize,
        #[serde(default = "default_quadratic_matrix")]
        matrix: String,
        #[serde(default = "default_max_sigmas")]
        max_sigmas: f64,
    },
    /// `||delta_hat - delta'||_inf` for identity covariance across sizes.
    DeltaGap {
        sizes: Vec<usize>,
        #[serde(default = "default_ratio")]
        ratio: f64,
        #[serde(default = "one")]
        z: f64,
        #[serde(default = "default_rate_trials")]
        trials: usize,
        #[serde(default = "default_max_slope")]
        max_slope: f64,
    },
    /// `||mean(Q) - Q_delta'||` for identity covariance across sizes.
    ResolventError {
        sizes: Vec<usize>,
        #[serde(default = "default_ratio")]
        ratio: f64,
        #[serde(default = "one")]
        z: f64,
        #[serde(default = "default_rate_trials")]
        trials: usize,
        #[serde(default = "default_max_slope")]
        max_slope: f64,
        #[serde(default = "yes")]
        require_decreasing: bool,
    },
}

fn default_tail_samples() -> usize {
    100_000
}
fn default_functional() -> String {
    "norm".into()
}
fn default_q_min() -> f64 {
    1.6
}
fn default_q_max() -> f64 {
    2.4
}
fn default_diameter_trials() -> usize {
    2000
}
fn default_functionals() -> Vec<String> {
    vec!["norm".into()]
}
fn default_max_ratio() -> f64 {
    2.0
}
fn default_quadratic_matrix() -> String {
    "identity".into()
}
fn default_max_sigmas() -> f64 {
    3.0
}
fn default_ratio() -> f64 {
    0.5
}
fn default_rate_trials() -> usize {
    100
}
fn default_max_slope() -> f64 {
    -0.35
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    pub classes: Vec<IngestClass>,
    #[serde(default = "default_delimiter")]
    pub delimiter: String,
    #[serde(default)]
    pub header_lines: usize,
    /// Stem of the written descriptor and matrix files.
    #[serde(default = "default_name")]
    pub name: String,
}

/// One sample per column; `count` defaults to the number of columns.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestClass {
    pub path: PathBuf,
    pub count: Option<usize>,
}

fn default_delimiter() -> String {
    ",".into()
}

fn default_name() -> String {
    "mixture".into()
}

impl IngestConfig {
    pub fn delimiter_char(&self) -> Result<char> {
        match self.delimiter.as_str() {
            "whitespace" | " " => Ok(' '),
            "tab" | "\t" => Ok('\t'),
            s if s.chars().count() == 1 => Ok(s.chars().next().unwrap_or(',')),
            s => bail!("delimiter must be a single character, got '{s}'"),
        }
    }
}

/// Mixture descriptor written by `ingest` and read through `mixture.file`.
#[derive(Debug, Clone, Deserialize, serde::Serialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureFile {
    pub n: usize,
    pub p: usize,
    #[serde(rename = "class")]
    pub classes: Vec<MixtureFileClass>,
}

#[derive(Debug, Clone, Deserialize, serde::Serialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureFileClass {
    pub count: usize,
    /// Uncentered second moment `E[x x^T]`.
    pub second_moment: PathBuf,
    pub mean: PathBuf,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn require_file(p: &Path) -> Result<()> {
    ensure!(p.is_file(), "file not found: {}", p.display());
    Ok(())
}

impl ExperimentConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).context("invalid configuration")?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base).with_context(|| format!("in {}", path.display()))
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let Some(m) = &mut self.mixture {
            if let Some(f) = &mut m.file {
                resolve(base, f);
            }
            for c in &mut m.classes {
                if let Some(mean) = &mut c.mean {
                    resolve(base, mean);
                }
                if let CovarianceConfig::File { path } = &mut c.covariance {
                    resolve(base, path);
                }
            }
        }
        if let Some(i) = &mut self.ingest {
            for c in &mut i.classes {
                resolve(base, &mut c.path);
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if let Some(m) = &self.mixture {
            match (&m.file, m.classes.is_empty()) {
                (Some(f), true) => require_file(f)?,
                (Some(_), false) => bail!("mixture: give either `file` or inline classes, not both"),
                (None, true) => bail!("mixture: no classes given"),
                (None, false) => {}
            }
            for (l, c) in m.classes.iter().enumerate() {
                if let Some(mean) = &c.mean {
                    require_file(mean).with_context(|| format!("mixture class {l}"))?;
                }
                match &c.covariance {
                    CovarianceConfig::File { path } => require_file(path).with_context(|| format!("mixture class {l}"))?,
                    _ => ensure!(m.p.is_some(), "mixture class {l}: built-in covariance needs `mixture.p`"),
                }
            }
        }
        if let Some(p) = &self.predict {
            p.z.points()?;
            if let Some(l) = &p.lambda {
                l.points()?;
            }
        }
        if let Some(c) = &self.compare {
            c.z.points()?;
        }
        if let Some(s) = &self.simulate {
            ensure!(
                s.bins.is_none() || s.edges.is_none(),
                "simulate: give either `bins` or `edges`, not both"
            );
        }
        if let Some(i) = &self.ingest {
            i.delimiter_char()?;
            for c in &i.classes {
                require_file(&c.path)?;
            }
        }
        Ok(())
    }

    pub fn require_seed(&self, override_seed: Option<u64>) -> Result<u64> {
        override_seed
            .or(self.seed)
            .context("a seed is required: set `seed` in the config or pass --seed")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        let g = GridConfig::Range { start: 1.0, stop: 3.0, count: 3, log: false };
        assert_eq!(g.points().unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(GridConfig::Points(vec![1.0, 1.0]).points().is_err());
        let g = GridConfig::Range { start: 1.0, stop: 100.0, count: 3, log: true };
        assert!((g.points().unwrap()[1] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::parse("sed = 3", Path::new(".")).is_err());
        assert!(ExperimentConfig::parse("[predict]\nz = [1.0]\nfoo = 1", Path::new(".")).is_err());
    }

    #[test]
    fn inline_mixture_parses() {
        let text = r#"
            seed = 7
            [mixture]
            p = 10
            [[mixture.class]]
            count = 5
            covariance = { kind = "toeplitz", base = 0.1, power = 2 }
            scale = 10.0
            [[mixture.class]]
            count = 5
            covariance = { kind = "identity" }
            generator = "bounded-affine"
            latent = "rademacher"
        "#;
        let cfg = ExperimentConfig::parse(text, Path::new(".")).unwrap();
        assert_eq!(cfg.mixture.as_ref().unwrap().classes.len(), 2);
        assert_eq!(cfg.require_seed(None).unwrap(), 7);
        assert_eq!(cfg.require_seed(Some(9)).unwrap(), 9);
    }

    #[test]
    fn missing_files_are_named() {
        let err = ExperimentConfig::parse("[mixture]\nfile = \"nope.toml\"", Path::new("/tmp")).unwrap_err();
        assert!(format!("{err:#}").contains("/tmp/nope.toml"));
    }
}

//! `conclab`: concentration checks as line-oriented records.

use anyhow::{bail, ensure, Result};
use deteq::conc_lab::{
    delta_gap_sweep, fit_exponential_tail, observable_diameter, quadratic_form_check, resolvent_error_sweep,
    tail_profile, Functional, ScalingReport, TailFitOptions,
};
use deteq::sampler::{derive_seed, sample_class, sample_columns};
use deteq::{GeneratorSpec, Population};
use nalgebra::DMatrix;

use crate::config::{CheckConfig, ExperimentConfig};
use crate::output::{Cell, OutputFile, Table};
use crate::Report;

const CHUNK: usize = 4096;

/// One line of the report.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub value: f64,
    pub stderr: Option<f64>,
    pub n: usize,
    pub seed: u64,
    /// `None` for informational records.
    pub pass: Option<bool>,
}

impl Record {
    fn info(name: impl Into<String>, value: f64, stderr: Option<f64>, n: usize, seed: u64) -> Self {
        Self { name: name.into(), value, stderr, n, seed, pass: None }
    }

    fn gate(name: impl Into<String>, value: f64, stderr: Option<f64>, n: usize, seed: u64, pass: bool) -> Self {
        Self { name: name.into(), value, stderr, n, seed, pass: Some(pass) }
    }
}

/// Standard Gaussian class with `p = round(ratio * n)`.
fn identity_population(n: usize, ratio: f64) -> deteq::Result<Population> {
    let p = ((n as f64) * ratio).round() as usize;
    Population::from_generators(vec![(GeneratorSpec::standard_gaussian(p)?, n)])
}

fn quadratic_matrix(kind: &str, p: usize, seed: u64) -> Result<DMatrix<f64>> {
    let random = || sample_class(&GeneratorSpec::standard_gaussian(p)?, p, seed).map(|m| m / (p as f64).sqrt());
    Ok(match kind {
        "identity" => DMatrix::identity(p, p),
        "zero" => DMatrix::zeros(p, p),
        "random-symmetric" => {
            let r = random()?;
            (&r + r.transpose()) * 0.5
        }
        "antisymmetric-plus-identity" => {
            let r = random()?;
            (&r - r.transpose()) * 0.5 + DMatrix::identity(p, p)
        }
        other => bail!("unknown quadratic-form matrix '{other}'"),
    })
}

fn rate_records(prefix: &str, r: &ScalingReport, max_slope: f64, decreasing: Option<bool>, seed: u64) -> Vec<Record> {
    let mut out: Vec<Record> = r
        .sizes
        .iter()
        .zip(&r.errors)
        .map(|(n, e)| Record::info(format!("{prefix}_error"), *e, None, *n, seed))
        .collect();
    let n_max = r.sizes.iter().copied().max().unwrap_or(0);
    out.push(Record::gate(format!("{prefix}_slope"), r.slope, None, n_max, seed, r.slope <= max_slope));
    if let Some(required) = decreasing {
        if required {
            let ok = r.strictly_decreasing();
            out.push(Record::gate(format!("{prefix}_decreasing"), f64::from(u8::from(ok)), None, n_max, seed, ok));
        }
    }
    out
}

pub fn run_check(check: &CheckConfig, seed: u64) -> Result<Vec<Record>> {
    Ok(match check {
        CheckConfig::TailFit { p, samples, functional, grid, q_min, q_max } => {
            let f: Functional = functional.parse()?;
            let g = GeneratorSpec::standard_gaussian(*p)?;
            let mut values = Vec::with_capacity(*samples);
            let mut done = 0;
            while done < *samples {
                let m = CHUNK.min(samples - done);
                let x = sample_columns(&g, m, seed, done as u64);
                values.extend(x.column_iter().map(|c| f.eval(c)));
                done += m;
            }
            let fit = fit_exponential_tail(&tail_profile(&values, &grid.points()?)?, &TailFitOptions::default())?;
            let ok = (*q_min..=*q_max).contains(&fit.exponent_q);
            vec![
                Record::gate("tail_q", fit.exponent_q, None, *samples, seed, ok),
                Record::info("tail_sigma", fit.tail_sigma, None, *samples, seed),
                Record::info("tail_head", fit.head_c, None, *samples, seed),
                Record::info("tail_r2", fit.r2, None, *samples, seed),
            ]
        }
        CheckConfig::ObservableDiameter { dims, trials, functionals, max_ratio } => {
            ensure!(!dims.is_empty(), "observable-diameter needs at least one dimension");
            let fs = functionals.iter().map(|s| s.parse()).collect::<deteq::Result<Vec<Functional>>>()?;
            let mut out = Vec::new();
            let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
            for (i, p) in dims.iter().enumerate() {
                let est = observable_diameter(&GeneratorSpec::standard_gaussian(*p)?, &fs, *trials, derive_seed(seed, i as u64))?;
                let stderr = est
                    .per_functional
                    .iter()
                    .find(|(_, v, _)| *v == est.diameter)
                    .map(|(_, _, s)| *s);
                out.push(Record::info(format!("diameter_p{p}"), est.diameter, stderr, *trials, seed));
                lo = lo.min(est.diameter);
                hi = hi.max(est.diameter);
            }
            let ratio = if lo > 0.0 { hi / lo } else { f64::INFINITY };
            out.push(Record::gate("diameter_ratio", ratio, None, *trials, seed, ratio <= *max_ratio));
            out
        }
        CheckConfig::QuadraticForm { p, trials, matrix, max_sigmas } => {
            let a = quadratic_matrix(matrix, *p, derive_seed(seed, 1))?;
            let s = quadratic_form_check(&GeneratorSpec::standard_gaussian(*p)?, &a, *trials, seed, None)?;
            let ok = s.bias.abs() <= max_sigmas * s.stderr || (s.bias == 0.0 && s.stderr == 0.0);
            vec![
                Record::info("quadratic_mean", s.mean, Some(s.stderr), *trials, seed),
                Record::info("quadratic_pivot", s.pivot, None, *trials, seed),
                Record::gate("quadratic_bias", s.bias, Some(s.stderr), *trials, seed, ok),
                Record::info("quadratic_std", s.std, None, *trials, seed),
            ]
        }
        CheckConfig::DeltaGap { sizes, ratio, z, trials, max_slope } => {
            let r = delta_gap_sweep(sizes, |n| identity_population(n, *ratio), *z, *trials, seed)?;
            rate_records("delta_gap", &r, *max_slope, None, seed)
        }
        CheckConfig::ResolventError { sizes, ratio, z, trials, max_slope, require_decreasing } => {
            let r = resolvent_error_sweep(sizes, |n| identity_population(n, *ratio), *z, *trials, seed)?;
            rate_records("resolvent_error", &r, *max_slope, Some(*require_decreasing), seed)
        }
    })
}

pub fn conclab(cfg: &ExperimentConfig, seed: Option<u64>, report: &mut Report) -> Result<Vec<OutputFile>> {
    let checks = cfg.conclab.as_ref().map(|c| c.checks.as_slice()).unwrap_or_default();
    let mut table = Table::new(&[], &["name", "value", "stderr", "n", "seed", "pass"]);
    if !checks.is_empty() {
        let seed = cfg.require_seed(seed)?;
        for (i, check) in checks.iter().enumerate() {
            let s = derive_seed(seed, i as u64);
            for r in run_check(check, s)? {
                if r.pass == Some(false) {
                    report.fail(format!("{} = {} failed its threshold", r.name, r.value));
                }
                table.row(&[
                    Cell::S(r.name.clone()),
                    Cell::F(r.value),
                    r.stderr.map_or(Cell::S(String::new()), Cell::F),
                    Cell::U(r.n as u64),
                    Cell::U(r.seed),
                    Cell::S(match r.pass {
                        Some(true) => "pass".into(),
                        Some(false) => "fail".into(),
                        None => String::new(),
                    }),
                ]);
            }
        }
    }
    report.note(format!("{} checks", checks.len()));
    Ok(vec![table.finish("conclab.csv")])
}

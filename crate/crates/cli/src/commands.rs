//! `predict`, `simulate`, `compare` and `ingest`.

use anyhow::{bail, ensure, Context, Result};
use deteq::equivalent::{atom_at_zero, density_prediction, stieltjes_at};
use deteq::io::{format_matrix, read_matrix, DelimitedOptions};
use deteq::linalg::{sym_eigenvalues, RunningStats};
use deteq::model::{estimate_class_model, Mixture};
use deteq::sampler::{derive_seed, empirical_spectrum, histogram, Bins, EmpiricalSpectrum};
use deteq::{solve_delta, Backend, ComplexSolverOptions, Population, SolverOptions};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, MixtureFile, MixtureFileClass, SolverConfig};
use crate::mixture::build_population;
use crate::output::{Cell, OutputFile, Table};
use crate::Report;

const DEFAULT_LAMBDA_POINTS: usize = 400;

fn backend(s: &str) -> Result<Backend> {
    match s {
        "auto" => Ok(Backend::Auto),
        "dense" => Ok(Backend::Dense),
        "joint" => Ok(Backend::Joint),
        other => bail!("unknown solver backend '{other}' (auto, dense, joint)"),
    }
}

fn real_options(s: &SolverConfig) -> Result<SolverOptions> {
    Ok(SolverOptions::default()
        .with_tol(s.tol)
        .with_max_iter(s.max_iter)
        .with_backend(backend(&s.backend)?))
}

fn complex_options(s: &SolverConfig) -> Result<ComplexSolverOptions> {
    Ok(ComplexSolverOptions {
        tol: s.complex_tol,
        max_iter: s.complex_max_iter,
        backend: backend(&s.backend)?,
        ..Default::default()
    })
}

fn population(cfg: &ExperimentConfig, seed: Option<u64>) -> Result<Population> {
    build_population(cfg.mixture.as_ref().context("missing [mixture] section")?, seed)
}

/// Upper end of the default density grid: `(1 + sqrt(gamma))^2 max_l ||sigma_l||`.
fn spectrum_bound(m: &Mixture) -> f64 {
    let top = m
        .classes()
        .iter()
        .map(|c| sym_eigenvalues(c.sigma()).last().copied().unwrap_or(0.0))
        .fold(0.0, f64::max);
    let b = (1.0 + m.gamma().sqrt()).powi(2) * top;
    if b > 0.0 {
        b * 1.05
    } else {
        1.0
    }
}

/// Predicted `Q` statistics at each `z` with convergence flags.
fn stieltjes_curve(m: &Mixture, zs: &[f64], opts: &SolverOptions) -> Result<Vec<(f64, bool)>> {
    zs.par_iter()
        .map(|z| {
            let sol = solve_delta(m, *z, opts)?;
            Ok((stieltjes_at(m, &sol.delta, *z, opts)?, sol.converged))
        })
        .collect()
}

pub fn predict(cfg: &ExperimentConfig, seed: Option<u64>, report: &mut Report) -> Result<Vec<OutputFile>> {
    let pc = cfg.predict.as_ref().context("missing [predict] section")?;
    let pop = population(cfg, seed)?;
    let m = pop.mixture();
    let opts = real_options(&cfg.solver)?;
    let zs = pc.z.points()?;
    let delta_z = pc.delta_z.unwrap_or(zs[0]);

    let sol = solve_delta(m, delta_z, &opts)?;
    if !sol.converged {
        report.fail(format!(
            "delta at z = {delta_z} did not converge (residual {:.3e} after {} iterations)",
            sol.residual, sol.iterations
        ));
    }
    let mut delta = Table::new(
        &[format!("z = {}", deteq::io::format_float(delta_z)), format!("converged = {}", sol.converged)],
        &["class_index", "delta_prime", "residual", "iterations"],
    );
    for (l, d) in sol.delta.iter().enumerate() {
        delta.row(&[Cell::U(l as u64), Cell::F(*d), Cell::F(sol.residual), Cell::U(sol.iterations as u64)]);
    }

    let mut stieltjes = Table::new(&[], &["z", "m_pred"]);
    for (z, (v, ok)) in zs.iter().zip(stieltjes_curve(m, &zs, &opts)?) {
        if !ok {
            report.fail(format!("fixed point at z = {z} did not converge"));
        }
        stieltjes.row(&[Cell::F(*z), Cell::F(v)]);
    }

    let lambdas = match &pc.lambda {
        Some(g) => g.points()?,
        None => {
            let top = spectrum_bound(m);
            let k = DEFAULT_LAMBDA_POINTS;
            (1..=k).map(|i| top * i as f64 / k as f64).collect()
        }
    };
    let span = (lambdas[lambdas.len() - 1] - lambdas[0]).max(lambdas[lambdas.len() - 1]);
    let eps = pc.epsilon.unwrap_or(1e-3 * span);
    let pred = density_prediction(m, &lambdas, eps, &complex_options(&cfg.solver)?)?;
    let failed = pred.converged.iter().filter(|c| !**c).count();
    if failed > 0 {
        report.fail(format!("{failed} of {} density points did not converge", lambdas.len()));
    }
    let mut density = Table::new(
        &[
            format!("atom_at_zero = {}", deteq::io::format_float(pred.atom_at_zero)),
            format!("epsilon = {}", deteq::io::format_float(eps)),
        ],
        &["lambda", "density"],
    );
    for (l, d) in lambdas.iter().zip(&pred.density) {
        density.row(&[Cell::F(*l), Cell::F(*d)]);
    }
    report.note(format!("atom at zero {:.6}, {} classes, p = {}, n = {}", pred.atom_at_zero, m.k(), m.p(), m.n()));
    Ok(vec![delta.finish("delta.csv"), stieltjes.finish("stieltjes.csv"), density.finish("density.csv")])
}

fn spectrum_files(spectrum: &EmpiricalSpectrum, bins: &Bins, transform: Option<f64>) -> Result<Vec<OutputFile>> {
    let mut s = Table::new(&[], &["index", "eigenvalue"]);
    for (i, v) in spectrum.eigenvalues.iter().enumerate() {
        s.row(&[Cell::U(i as u64), Cell::F(*v)]);
    }
    let h = histogram(spectrum, bins, transform)?;
    let mut comments = vec![];
    if let Some(t) = transform {
        comments.push(format!("transform = {}", deteq::io::format_float(t)));
    }
    let mut t = Table::new(&comments, &["bin_left", "bin_right", "mass"]);
    for (i, m) in h.mass.iter().enumerate() {
        t.row(&[Cell::F(h.bin_edges[i]), Cell::F(h.bin_edges[i + 1]), Cell::F(*m)]);
    }
    Ok(vec![s.finish("spectrum.csv"), t.finish("histogram.csv")])
}

pub fn simulate(cfg: &ExperimentConfig, seed: Option<u64>, report: &mut Report) -> Result<Vec<OutputFile>> {
    let seed = cfg.require_seed(seed)?;
    let pop = population(cfg, Some(seed))?;
    let sc = cfg.simulate.clone().unwrap_or(crate::config::SimulateConfig { bins: None, edges: None, transform: None });
    let bins = match (&sc.bins, &sc.edges) {
        (_, Some(e)) => Bins::Edges(e.clone()),
        (Some(b), None) => Bins::Count(*b),
        (None, None) => Bins::Count(20),
    };
    let sample = pop.sample(seed)?;
    let spectrum = empirical_spectrum(&sample.x)?.with_seed(seed);
    report.note(format!(
        "{} eigenvalues, trace {:.6}",
        spectrum.eigenvalues.len(),
        spectrum.trace()
    ));
    spectrum_files(&spectrum, &bins, sc.transform)
}

pub fn compare(cfg: &ExperimentConfig, seed: Option<u64>, report: &mut Report) -> Result<Vec<OutputFile>> {
    let cc = cfg.compare.as_ref().context("missing [compare] section")?;
    ensure!(cc.trials >= 1, "compare needs at least one trial");
    ensure!(cc.bins >= 1 && cc.subdivisions >= 1, "bins and subdivisions must be positive");
    let seed = cfg.require_seed(seed)?;
    let pop = population(cfg, Some(seed))?;
    let m = pop.mixture();
    let zs = cc.z.points()?;
    ensure!(zs[0] > 0.0, "compare z grid must be positive");

    let spectra: Vec<EmpiricalSpectrum> = (0..cc.trials)
        .into_par_iter()
        .map(|t| {
            let s = derive_seed(seed, t as u64);
            Ok(empirical_spectrum(&pop.sample(s)?.x)?.with_seed(s))
        })
        .collect::<Result<_>>()?;

    let opts = real_options(&cfg.solver)?;
    let predicted = stieltjes_curve(m, &zs, &opts)?;
    let mut table = Table::new(&[], &["z", "m_emp_mean", "m_emp_std", "m_pred", "abs_err"]);
    let mut sup_err = 0.0f64;
    for (z, (pred, ok)) in zs.iter().zip(&predicted) {
        if !ok {
            report.fail(format!("fixed point at z = {z} did not converge"));
        }
        let mut stats = RunningStats::default();
        for s in &spectra {
            stats.push(s.stieltjes(*z));
        }
        let err = (stats.mean() - pred).abs();
        sup_err = sup_err.max(err);
        table.row(&[Cell::F(*z), Cell::F(stats.mean()), Cell::F(stats.std()), Cell::F(*pred), Cell::F(err)]);
    }

    // Pooled histogram on [0, max eigenvalue] against the binned prediction.
    let mut pooled: Vec<f64> = spectra.iter().flat_map(|s| s.eigenvalues.iter().copied()).collect();
    pooled.sort_by(|a, b| a.total_cmp(b));
    let top = pooled.last().copied().unwrap_or(0.0);
    let hi = if top > 0.0 { top } else { 1.0 };
    let width = hi / cc.bins as f64;
    let edges: Vec<f64> = (0..=cc.bins).map(|i| if i == cc.bins { hi } else { width * i as f64 }).collect();
    let pooled = EmpiricalSpectrum { eigenvalues: pooled, p: m.p() * cc.trials, n: m.n(), seed: Some(seed) };
    let emp = histogram(&pooled, &Bins::Edges(edges.clone()), None)?;
    let k = cc.subdivisions;
    let mids: Vec<f64> = (0..cc.bins * k).map(|j| (j as f64 + 0.5) * width / k as f64).collect();
    let eps = cc.epsilon.unwrap_or(1e-3 * hi);
    let dens = density_prediction(m, &mids, eps, &complex_options(&cfg.solver)?)?;
    let failed = dens.converged.iter().filter(|c| !**c).count();
    if failed > 0 {
        report.fail(format!("{failed} density points did not converge"));
    }
    let mut pred_mass: Vec<f64> = dens.density.chunks(k).map(|c| c.iter().sum::<f64>() * width / k as f64).collect();
    pred_mass[0] += atom_at_zero(m);
    let l1: f64 = emp.mass.iter().zip(&pred_mass).map(|(a, b)| (a - b).abs()).sum();
    let mut hist = Table::new(&[], &["bin_left", "bin_right", "empirical_mass", "predicted_mass"]);
    for b in 0..cc.bins {
        hist.row(&[Cell::F(edges[b]), Cell::F(edges[b + 1]), Cell::F(emp.mass[b]), Cell::F(pred_mass[b])]);
    }

    let mut summary = Table::new(&[], &["name", "value", "threshold", "pass"]);
    for (name, value, gate) in [("sup_err", sup_err, cc.max_sup_err), ("l1_histogram", l1, cc.max_l1)] {
        let pass = gate.is_none_or(|g| value <= g);
        if !pass {
            report.fail(format!("{name} = {value:.6} exceeds {}", gate.unwrap_or(f64::NAN)));
        }
        summary.row(&[
            Cell::S(name.into()),
            Cell::F(value),
            gate.map_or(Cell::S(String::new()), Cell::F),
            Cell::S(if gate.is_some() { pass.to_string() } else { String::new() }),
        ]);
    }
    report.note(format!("sup_err {sup_err:.6}, l1_histogram {l1:.6} over {} trials", cc.trials));
    Ok(vec![table.finish("compare.csv"), hist.finish("compare_histogram.csv"), summary.finish("compare_summary.csv")])
}

pub fn ingest(cfg: &ExperimentConfig, report: &mut Report) -> Result<Vec<OutputFile>> {
    let ic = cfg.ingest.as_ref().context("missing [ingest] section")?;
    ensure!(!ic.classes.is_empty(), "ingest: no class files given");
    let opts = DelimitedOptions { delimiter: ic.delimiter_char()?, header_lines: ic.header_lines };
    let mut files = Vec::new();
    let mut classes = Vec::new();
    let mut p = None;
    for (l, c) in ic.classes.iter().enumerate() {
        let data = read_matrix(&c.path, &opts)?;
        if let Some(p) = p {
            ensure!(
                data.nrows() == p,
                "{}: {} rows, but earlier classes have {p}",
                c.path.display(),
                data.nrows()
            );
        }
        p = Some(data.nrows());
        let count = c.count.unwrap_or(data.ncols());
        let model = estimate_class_model(&data, count).with_context(|| format!("{}", c.path.display()))?;
        let sm = format!("{}_class{l}_second_moment.csv", ic.name);
        let mean = format!("{}_class{l}_mean.csv", ic.name);
        files.push(OutputFile { name: sm.clone(), contents: format_matrix(model.sigma(), ',') });
        files.push(OutputFile {
            name: mean.clone(),
            contents: format_matrix(&nalgebra::DMatrix::from_column_slice(model.dim(), 1, model.mean().as_slice()), ','),
        });
        classes.push(MixtureFileClass { count, second_moment: sm.into(), mean: mean.into() });
        report.note(format!("class {l}: {} samples of dimension {} from {}", data.ncols(), data.nrows(), c.path.display()));
    }
    let desc = MixtureFile { n: classes.iter().map(|c| c.count).sum(), p: p.unwrap_or(0), classes };
    files.push(OutputFile { name: format!("{}.toml", ic.name), contents: toml::to_string(&desc)? });
    Ok(files)
}

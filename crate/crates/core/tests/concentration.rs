use deteq::conc_lab::{
    delta_empirical, fit_exponential_tail, observable_diameter, quadratic_form_check, tail_profile, Functional,
    HeldOut, ScalingReport, TailFitOptions,
};
use deteq::sampler::{derive_seed, sample_class};
use deteq::{GeneratorSpec, Population};
use nalgebra::DMatrix;

#[test]
fn quadratic_form_bias_within_three_standard_errors() {
    let p = 40;
    let g = GeneratorSpec::standard_gaussian(p).unwrap();
    let r = sample_class(&GeneratorSpec::standard_gaussian(p).unwrap(), p, 77).unwrap();
    let sym = (&r + r.transpose()) / 2.0;
    let anti = (&r - r.transpose()) / 2.0 + DMatrix::identity(p, p);
    for (i, a) in [DMatrix::identity(p, p), sym, anti].iter().enumerate() {
        let s = quadratic_form_check(&g, a, 10_000, derive_seed(5, i as u64), None).unwrap();
        assert!(s.bias.abs() <= 3.0 * s.stderr, "matrix {i}: {s:?}");
    }
}

#[test]
fn observable_diameter_is_dimension_free() {
    let d: Vec<f64> = [64, 256, 1024]
        .iter()
        .map(|p| {
            let g = GeneratorSpec::standard_gaussian(*p).unwrap();
            observable_diameter(&g, &[Functional::Norm, Functional::FirstCoordinate], 2000, 3)
                .unwrap()
                .diameter
        })
        .collect();
    let (lo, hi) = d.iter().fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
    assert!(hi <= 2.0 * lo, "{d:?}");
}

/// `P(|N(0, s^2)| >= t)` by midpoint integration of the density.
fn normal_two_sided_tail(t: f64, s: f64) -> f64 {
    let steps = 20_000;
    let h = t / s / steps as f64;
    let inner: f64 = (0..steps).map(|i| (-0.5 * ((i as f64 + 0.5) * h).powi(2)).exp()).sum();
    (1.0 - 2.0 * inner * h / (2.0 * std::f64::consts::PI).sqrt()).max(0.0)
}

#[test]
fn gaussian_norm_tail_fit_matches_normal_oracle() {
    let p = 256;
    let g = GeneratorSpec::standard_gaussian(p).unwrap();
    let x = sample_class(&g, 100_000, 8).unwrap();
    let norms: Vec<f64> = x.column_iter().map(|c| c.norm()).collect();
    let grid: Vec<f64> = (1..80).map(|i| 0.05 * i as f64).collect();
    let opts = TailFitOptions::default();
    let fit = fit_exponential_tail(&tail_profile(&norms, &grid).unwrap(), &opts).unwrap();
    // ||Z|| is close to N(sqrt(p - 1/2), 1/2) at this dimension.
    let exact = deteq::conc_lab::TailProfile {
        exceedance: grid.iter().map(|t| normal_two_sided_tail(*t, 0.5f64.sqrt())).collect(),
        grid: grid.clone(),
        pivot: 0.0,
    };
    let reference = fit_exponential_tail(&exact, &opts).unwrap();
    assert!((fit.exponent_q - reference.exponent_q).abs() < 0.1, "{fit:?} vs {reference:?}");
    assert!((fit.tail_sigma - reference.tail_sigma).abs() < 0.1);
    for (t, p) in grid.iter().zip(&tail_profile(&norms, &grid).unwrap().exceedance) {
        if *p > opts.p_min && *p < opts.p_max {
            assert!(fit.bound(*t) * 2.0 >= *p, "bound fails to majorize at t={t}");
        }
    }
}

#[test]
fn delta_trial_spread_shrinks_with_n() {
    let sizes = [100, 200, 400, 800];
    let spreads: Vec<f64> = sizes
        .iter()
        .map(|n| {
            let pop = Population::from_generators(vec![(GeneratorSpec::standard_gaussian(n / 2).unwrap(), *n)]).unwrap();
            delta_empirical(&pop, 1.0, 20, 11, HeldOut::OnePerClass).unwrap().trial_std[0]
        })
        .collect();
    let report = ScalingReport::new(sizes.to_vec(), spreads).unwrap();
    assert!(report.slope <= -0.35, "{report:?}");
}

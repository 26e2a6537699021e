use deteq::equivalent::{
    density_prediction, empirical_resolvent, empirical_stieltjes, stieltjes_prediction, ResolventNorms,
};
use deteq::model::{toeplitz_covariance, ClassModel, Mixture};
use deteq::sampler::{derive_seed, empirical_spectrum, sample_class};
use deteq::{ComplexSolverOptions, GeneratorSpec, SolverOptions};
use nalgebra::DMatrix;

fn identity_mixture(p: usize, n: usize) -> Mixture {
    Mixture::new(vec![ClassModel::centered(DMatrix::identity(p, p), n).unwrap()], n).unwrap()
}

#[test]
fn resolvent_bounds_on_a_thousand_random_inputs() {
    for case in 0..1000u64 {
        let s = derive_seed(99, case);
        let p = 1 + (s % 40) as usize;
        let n = 1 + ((s >> 8) % 40) as usize;
        let z = 10f64.powf(-2.0 + 3.0 * ((s >> 16) % 1000) as f64 / 1000.0);
        let scale = 10f64.powf(-1.0 + 2.0 * ((s >> 32) % 1000) as f64 / 1000.0);
        let x = sample_class(&GeneratorSpec::standard_gaussian(p).unwrap(), n, s).unwrap() * scale;
        let norms = ResolventNorms::compute(&x, z).unwrap();
        assert!(norms.within_bounds(z, 1e-10), "case {case}: p={p} n={n} z={z} {norms:?}");
    }
}

#[test]
fn two_by_two_resolvent() {
    let x = DMatrix::<f64>::identity(2, 2) * 2f64.sqrt();
    let z = 0.3;
    let q = empirical_resolvent(&x, z).unwrap();
    assert!((&q - DMatrix::identity(2, 2) / (1.0 + z)).amax() < 1e-15);
    assert!((empirical_stieltjes(&x, z).unwrap() - 1.0 / (1.0 + z)).abs() < 1e-15);
}

#[test]
fn gaussian_stieltjes_matches_prediction() {
    let (p, n) = (200, 200);
    let x = sample_class(&GeneratorSpec::standard_gaussian(p).unwrap(), n, 4).unwrap();
    let pred = stieltjes_prediction(&identity_mixture(p, n), 1.0, &SolverOptions::default()).unwrap();
    assert!((empirical_stieltjes(&x, 1.0).unwrap() - pred).abs() <= 0.05);
}

#[test]
fn prediction_is_bounded_and_decreasing() {
    let t = toeplitz_covariance(0.1, 40).unwrap();
    let m = Mixture::new(
        vec![
            ClassModel::centered(&t * 10.0, 4).unwrap(),
            ClassModel::centered(&t * &t * 10.0, 36).unwrap(),
        ],
        40,
    )
    .unwrap();
    let opts = SolverOptions::default();
    let mut prev = f64::INFINITY;
    for i in 1..=40 {
        let z = 0.05 * i as f64;
        let v = stieltjes_prediction(&m, z, &opts).unwrap();
        assert!(v > 0.0 && v <= 1.0 / z);
        assert!(v < prev);
        prev = v;
    }
    for a in [0.1, 10.0] {
        let scaled = m.scaled(a).unwrap();
        let lhs = stieltjes_prediction(&scaled, a * 0.7, &opts).unwrap();
        let rhs = stieltjes_prediction(&m, 0.7, &opts).unwrap() / a;
        assert!((lhs - rhs).abs() <= 10.0 * opts.tol * rhs.max(1.0), "a={a}");
    }
}

#[test]
fn density_converges_as_epsilon_halves() {
    let m = identity_mixture(50, 50);
    let grid: Vec<f64> = (0..26).map(|i| 0.5 + 0.1 * i as f64).collect();
    let o = ComplexSolverOptions::default();
    let eps = 1e-2;
    let d = |e: f64| density_prediction(&m, &grid, e, &o).unwrap().density;
    let (d2, d1, dh) = (d(2.0 * eps), d(eps), d(eps / 2.0));
    for j in 0..grid.len() {
        assert!((d1[j] - dh[j]).abs() <= 2.0 * (d2[j] - d1[j]).abs() + 1e-9, "lambda={}", grid[j]);
    }
}

#[test]
fn spectrum_trace_identity() {
    for (p, n, seed) in [(30, 50, 1), (50, 30, 2), (1, 7, 3), (64, 64, 4)] {
        let x = sample_class(&GeneratorSpec::standard_gaussian(p).unwrap(), n, seed).unwrap();
        let spec = empirical_spectrum(&x).unwrap();
        let frob = x.norm_squared() / n as f64;
        assert!((spec.trace() - frob).abs() <= 1e-8 * frob);
    }
}

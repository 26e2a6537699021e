//! Rearrangements, the majorization preorder and singular-value inequalities.
//!
//! Spectra are ordered descending everywhere.

use nalgebra::DMatrix;

use crate::error::{structural, Error, Result};
use crate::linalg::spectral_norm;

const MAJORIZATION_TOL: f64 = 1e-12;
const SINGULAR_TOL: f64 = 1e-10;

/// Nonnegative values sorted descending.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderedSpectrum {
    values: Vec<f64>,
}

impl OrderedSpectrum {
    /// Sorts the input; rejects negative or non-finite entries.
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::Data(format!("spectrum entries must be finite and nonnegative, got {v}")));
        }
        values.sort_by(|a, b| b.total_cmp(a));
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn largest(&self) -> Option<f64> {
        self.values.first().copied()
    }
}

pub fn decreasing_rearrangement(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

fn partial_sums(x: &[f64]) -> Vec<f64> {
    decreasing_rearrangement(x)
        .iter()
        .scan(0.0, |s, v| {
            *s += v;
            Some(*s)
        })
        .collect()
}

fn check_lengths(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(structural(format!("vectors of length {} and {}", x.len(), y.len())));
    }
    Ok(())
}

/// Worst partial-sum excess `max_k (sum y_down[..k] - sum x_down[..k])` and the index attaining it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MajorizationGap {
    pub excess: f64,
    pub index: usize,
    /// `sum x - sum y`.
    pub total_gap: f64,
    /// Tolerance the excess was compared against.
    pub tolerance: f64,
}

pub fn majorization_gap(x: &[f64], y: &[f64]) -> Result<MajorizationGap> {
    check_lengths(x, y)?;
    let (sx, sy) = (partial_sums(x), partial_sums(y));
    let (mut excess, mut index) = (f64::NEG_INFINITY, 0);
    for (k, (a, b)) in sx.iter().zip(&sy).enumerate() {
        if b - a > excess {
            excess = b - a;
            index = k;
        }
    }
    let (tx, ty) = (sx.last().copied().unwrap_or(0.0), sy.last().copied().unwrap_or(0.0));
    let scale = tx.abs().max(ty.abs()).max(f64::MIN_POSITIVE);
    Ok(MajorizationGap {
        excess: if x.is_empty() { 0.0 } else { excess },
        index,
        total_gap: tx - ty,
        tolerance: MAJORIZATION_TOL * scale.max(1.0),
    })
}

/// `y ≺ x`: partial sums of `y_down` never exceed those of `x_down` and the totals agree.
pub fn majorizes(x: &[f64], y: &[f64]) -> Result<bool> {
    let g = majorization_gap(x, y)?;
    Ok(g.excess <= g.tolerance && g.total_gap.abs() <= g.tolerance)
}

/// Weak (sub)majorization `y ≺_w x`: partial-sum dominance only.
pub fn weakly_majorizes(x: &[f64], y: &[f64]) -> Result<bool> {
    let g = majorization_gap(x, y)?;
    Ok(g.excess <= g.tolerance)
}

/// The `min(p, n)` singular values, descending.
pub fn singular_values(a: &DMatrix<f64>) -> Result<OrderedSpectrum> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("matrix has non-finite entries".into()));
    }
    if a.is_empty() {
        return OrderedSpectrum::new(Vec::new());
    }
    let sv = a.clone().svd(false, false).singular_values;
    OrderedSpectrum::new(sv.iter().map(|v| v.max(0.0)).collect())
}

fn check_shapes(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(structural(format!(
            "matrices of shape {}x{} and {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    Ok(())
}

/// Outcome of a singular-value inequality check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InequalityCheck {
    pub holds: bool,
    /// Bound minus the checked quantity at the tightest point; negative when violated.
    pub slack: f64,
    /// Partial-sum or singular-value index of the tightest point.
    pub index: usize,
}

/// `sigma(A + B)` against `sigma(A) + sigma(B)` in the partial-sum order.
///
/// Totals are not compared: `B = -A` gives `sigma(0) = 0`, so only the weak form can hold.
pub fn check_singular_triangle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<InequalityCheck> {
    check_shapes(a, b)?;
    let sa = singular_values(a)?;
    let sb = singular_values(b)?;
    let sum: Vec<f64> = sa.values().iter().zip(sb.values()).map(|(x, y)| x + y).collect();
    let ssum = singular_values(&(a + b))?;
    let g = majorization_gap(&sum, ssum.values())?;
    let scale = sum.iter().sum::<f64>().max(1.0);
    Ok(InequalityCheck {
        holds: g.excess <= SINGULAR_TOL * scale,
        slack: -g.excess,
        index: g.index,
    })
}

/// `max_i |sigma_i(A) - sigma_i(B)| <= ||A - B||`.
pub fn check_sigma_lipschitz(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<InequalityCheck> {
    check_shapes(a, b)?;
    let sa = singular_values(a)?;
    let sb = singular_values(b)?;
    let (mut worst, mut index) = (0.0f64, 0);
    for (i, (x, y)) in sa.values().iter().zip(sb.values()).enumerate() {
        if (x - y).abs() > worst {
            worst = (x - y).abs();
            index = i;
        }
    }
    let bound = if a.is_empty() { 0.0 } else { spectral_norm(&(a - b)) };
    let scale = sa.largest().unwrap_or(0.0).max(sb.largest().unwrap_or(0.0)).max(1.0);
    let slack = bound - worst;
    Ok(InequalityCheck {
        holds: slack >= -SINGULAR_TOL * scale,
        slack,
        index,
    })
}

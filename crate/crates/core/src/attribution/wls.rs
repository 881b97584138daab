//! Weighted least squares over mask designs.
//!
//! Minimizes `sum_j w_j (y_j - coef . z_j - b)^2 + ridge * |coef|^2` through
//! the normal equations and a Cholesky factorization. The intercept is
//! never penalized.

use super::kernels::KernelWeights;
use super::masks::MaskMatrix;
use crate::error::{Error, Result};

pub const RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct WlsSolution {
    pub coefficients: Vec<f64>,
    pub intercept: Option<f64>,
}

pub fn weighted_least_squares(
    masks: &MaskMatrix,
    targets: &[f64],
    weights: &KernelWeights,
    fit_intercept: bool,
) -> Result<WlsSolution> {
    let (m, l) = (masks.len(), masks.width());
    if targets.len() != m || weights.len() != m {
        return Err(Error::invalid(format!(
            "{m} mask rows but {} targets and {} weights",
            targets.len(),
            weights.len()
        )));
    }
    if let Some(t) = targets.iter().find(|t| !t.is_finite()) {
        return Err(Error::invalid(format!("non-finite target {t}")));
    }
    let p = l + usize::from(fit_intercept);

    // Normal matrix (lower triangle) and right-hand side. Masks are 0/1 so
    // the accumulation only touches present columns.
    let mut gram = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    let mut present = Vec::with_capacity(p);
    for ((row, &y), &w) in masks.rows().zip(targets).zip(weights.as_slice()) {
        present.clear();
        present.extend(row.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i));
        if fit_intercept {
            present.push(l);
        }
        for (a, &i) in present.iter().enumerate() {
            rhs[i] += w * y;
            for &k in &present[..=a] {
                gram[i * p + k] += w;
            }
        }
    }
    for i in 0..l {
        gram[i * p + i] += RIDGE;
    }

    let solution = cholesky_solve(&mut gram, &mut rhs, p)?;
    let (coefficients, intercept) = if fit_intercept {
        (solution[..l].to_vec(), Some(solution[l]))
    } else {
        (solution, None)
    };
    if coefficients
        .iter()
        .chain(intercept.iter())
        .any(|v| !v.is_finite())
    {
        return Err(Error::SingularSystem {
            pivot_ratio: f64::NAN,
            dim: p,
        });
    }
    Ok(WlsSolution {
        coefficients,
        intercept,
    })
}

/// In-place Cholesky of a symmetric positive definite matrix stored in the
/// lower triangle of `a`, followed by forward and back substitution.
fn cholesky_solve(a: &mut [f64], b: &mut [f64], n: usize) -> Result<Vec<f64>> {
    let mut min_pivot = f64::INFINITY;
    let mut max_pivot = 0.0f64;
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !d.is_finite() || d <= 0.0 {
            return Err(Error::SingularSystem {
                pivot_ratio: if max_pivot > 0.0 {
                    d / max_pivot
                } else {
                    f64::NAN
                },
                dim: n,
            });
        }
        min_pivot = min_pivot.min(d);
        max_pivot = max_pivot.max(d);
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    log::trace!("cholesky pivot ratio {:e}", min_pivot / max_pivot);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * n + k] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[k * n + i] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    Ok(b.to_vec())
}

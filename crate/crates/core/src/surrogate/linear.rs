//! Affine maps `ŷ = A x + b` fitted by least squares, optionally ridge-penalized.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reciprocal condition estimate below which the normal equations are
/// treated as singular.
const RCOND_MIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs × inputs`, row-major.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl Affine {
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.a
            .chunks(self.inputs)
            .zip(&self.b)
            .map(|(row, b)| b + row.iter().zip(x).map(|(a, x)| a * x).sum::<f64>())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.a.len() != self.inputs * self.outputs || self.b.len() != self.outputs {
            return Err(Error::invalid("regressor.a", "dimension mismatch"));
        }
        if self.a.iter().chain(&self.b).any(|v| !v.is_finite()) {
            return Err(Error::invalid("regressor.a", "non-finite coefficient"));
        }
        Ok(())
    }
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let d = rows[0].len();
    DMatrix::from_fn(n, d, |i, j| rows[i][j])
}

/// Minimizes `‖Y − XAᵀ − 1bᵀ‖² + α‖A‖²` in closed form on centered data.
/// With `α = 0` and singular normal equations the minimum-norm solution is
/// returned together with a warning.
pub fn fit_affine(x: &[Vec<f64>], y: &[Vec<f64>], alpha: f64) -> Result<(Affine, Option<String>)> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::invalid(
            "training_set",
            "need matching, non-empty X and Y",
        ));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::invalid("alpha", "must be ≥ 0"));
    }
    let xm = to_matrix(x);
    let ym = to_matrix(y);
    let x_mean: DVector<f64> = xm.row_mean().transpose();
    let y_mean: DVector<f64> = ym.row_mean().transpose();
    let xc = DMatrix::from_fn(xm.nrows(), xm.ncols(), |i, j| xm[(i, j)] - x_mean[j]);
    let yc = DMatrix::from_fn(ym.nrows(), ym.ncols(), |i, j| ym[(i, j)] - y_mean[j]);

    let mut gram = xc.transpose() * &xc;
    for i in 0..gram.nrows() {
        gram[(i, i)] += alpha;
    }
    let rhs = xc.transpose() * &yc;

    let mut warning = None;
    let chol = gram.clone().cholesky().filter(|c| {
        let d = c.l_dirty().diagonal();
        let (lo, hi) = d.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        hi > 0.0 && (lo / hi).powi(2) >= RCOND_MIN
    });
    // w is inputs × outputs
    let w = match chol {
        Some(c) => c.solve(&rhs),
        None if alpha > 0.0 => {
            return Err(Error::Numerical(format!(
                "ridge system with alpha={alpha} is not positive definite"
            )))
        }
        None => {
            warning = Some(
                "singular normal equations with alpha=0; using the minimum-norm solution"
                    .to_string(),
            );
            let svd = xc.clone().svd(true, true);
            let tol = svd.singular_values.max() * 1e-10 * xc.nrows().max(xc.ncols()) as f64;
            svd.solve(&yc, tol)
                .map_err(|e| Error::Numerical(format!("pseudo-inverse failed: {e}")))?
        }
    };
    let a_mat = w.transpose();
    let b = &y_mean - &a_mat * &x_mean;
    let affine = Affine {
        inputs: a_mat.ncols(),
        outputs: a_mat.nrows(),
        a: (0..a_mat.nrows())
            .flat_map(|i| a_mat.row(i).iter().copied().collect::<Vec<_>>())
            .collect(),
        b: b.iter().copied().collect(),
    };
    affine.validate()?;
    Ok((affine, warning))
}

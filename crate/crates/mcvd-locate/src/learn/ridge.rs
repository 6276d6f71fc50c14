//! Ridge regression baseline on the closed-form normal equations.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Appends an all-ones intercept column (as the last column).
pub fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(x.nrows(), x.ncols() + 1);
    out.view_mut((0, 0), (x.nrows(), x.ncols())).copy_from(x);
    out.column_mut(x.ncols()).fill(1.0);
    out
}

/// Solves (X^T X + alpha I) W = X^T Y by Cholesky factorization. With
/// `intercept`, the last column of X is treated as the intercept and left
/// out of the penalty.
pub fn ridge_fit(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    alpha: f64,
    intercept: bool,
) -> Result<DMatrix<f64>> {
    if x.nrows() != y.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "X has {} rows, Y has {}",
            x.nrows(),
            y.nrows()
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::invalid("ridge needs at least one row"));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::invalid("alpha must be a non-negative real"));
    }
    let mut gram = x.transpose() * x;
    let penalized = if intercept { x.ncols() - 1 } else { x.ncols() };
    for i in 0..penalized {
        gram[(i, i)] += alpha;
    }
    let chol = gram.cholesky().ok_or_else(|| {
        Error::Numeric(format!(
            "normal equations are singular at alpha = {alpha}; try alpha > 0"
        ))
    })?;
    Ok(chol.solve(&(x.transpose() * y)))
}

/// The affine map: predictions = X W.
pub fn ridge_predict(weights: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    x * weights
}

/// Log-spaced default grid 10^-3 .. 10^3.
pub fn default_alpha_grid() -> Vec<f64> {
    (-3..=3).map(|e| 10f64.powi(e)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaSelection {
    pub alpha: f64,
    pub val_mse: f64,
    /// true when the winner sits on the grid boundary — a sign the grid
    /// should be widened
    pub on_boundary: bool,
}

/// Fits one ridge model per grid value and keeps the alpha with the lowest
/// validation MSE; ties break toward the smaller alpha.
pub fn select_ridge_alpha(
    x_train: &DMatrix<f64>,
    y_train: &DMatrix<f64>,
    x_val: &DMatrix<f64>,
    y_val: &DMatrix<f64>,
    grid: &[f64],
) -> Result<AlphaSelection> {
    if grid.is_empty() {
        return Err(Error::invalid("alpha grid must be non-empty"));
    }
    let mut best: Option<AlphaSelection> = None;
    for &alpha in grid {
        let w = ridge_fit(x_train, y_train, alpha, true)?;
        let resid = ridge_predict(&w, x_val) - y_val;
        let mse = resid.iter().map(|v| v * v).sum::<f64>() / resid.len() as f64;
        let better = match &best {
            None => true,
            Some(b) => mse < b.val_mse || (mse == b.val_mse && alpha < b.alpha),
        };
        if better {
            best = Some(AlphaSelection {
                alpha,
                val_mse: mse,
                on_boundary: false,
            });
        }
    }
    let mut sel = best.expect("non-empty grid");
    let lo = grid.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    sel.on_boundary = grid.len() > 1 && (sel.alpha == lo || sel.alpha == hi);
    Ok(sel)
}

//! Small dense-matrix helpers shared by the lecture and graph geometry builders.

use ndarray::Array2;

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;

/// Min-max normalize the off-diagonal entries of a square matrix into [0, 1].
///
/// The diagonal of the output is exactly zero. A matrix whose off-diagonal
/// entries are constant (including the 1×1 case) maps to the zero matrix.
pub fn minmax_offdiag(m: &Matrix) -> Matrix {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                lo = lo.min(m[[i, j]]);
                hi = hi.max(m[[i, j]]);
            }
        }
    }
    let mut out = Matrix::zeros((n, n));
    let span = hi - lo;
    if !(span > 0.0) {
        return out;
    }
    for i in 0..n {
        for j in 0..n {
            if i != j {
                out[[i, j]] = ((m[[i, j]] - lo) / span).clamp(0.0, 1.0);
            }
        }
    }
    out
}

/// Convex combination `Σ w_k · m_k`, accumulated in the order given.
pub fn weighted_sum(parts: &[(&Matrix, f64)]) -> Matrix {
    let shape = parts[0].0.dim();
    let mut out = Matrix::zeros(shape);
    for (m, w) in parts {
        out.zip_mut_with(m, |o, &x| *o += w * x);
    }
    out
}

/// Checks that weights are nonnegative, finite and sum to one within `1e-9`.
pub fn check_convex_weights(weights: &[f64]) -> Result<()> {
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidWeights(format!(
            "weights must be nonnegative: {weights:?}"
        )));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidWeights(format!(
            "weights sum to {total}, expected 1"
        )));
    }
    Ok(())
}

pub fn is_symmetric(m: &Matrix) -> bool {
    let n = m.nrows();
    n == m.ncols() && (0..n).all(|i| (0..i).all(|j| m[[i, j]] == m[[j, i]]))
}

/// Converts a matrix to nested row vectors for serialization.
pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::ShapeMismatch("ragged matrix rows".into()));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Matrix::from_shape_vec((n, m), flat).map_err(|e| Error::ShapeMismatch(e.to_string()))
}

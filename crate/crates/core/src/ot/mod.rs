//! Entropic optimal transport and the fused Gromov-Wasserstein distortion.

mod fgw;
mod gw;
mod sinkhorn;

use serde::Serialize;

use crate::matrix::{self, Matrix};

pub use fgw::{fgw, FgwResult, SolverConfig};
pub use gw::{distortion_terms, gw_gradient, structure_value};
pub use sinkhorn::{round_to_polytope, sinkhorn, sinkhorn_report, SinkhornReport};

/// Transport plan between two discrete measures.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub matrix: Matrix,
    pub mu_row: Vec<f64>,
    pub mu_col: Vec<f64>,
}

impl Coupling {
    pub fn new(matrix: Matrix, mu_row: Vec<f64>, mu_col: Vec<f64>) -> Self {
        debug_assert_eq!(matrix.dim(), (mu_row.len(), mu_col.len()));
        Self { matrix, mu_row, mu_col }
    }

    /// Independent coupling `mu · nuᵀ`.
    pub fn product(mu: &[f64], nu: &[f64]) -> Self {
        let mut m = Matrix::zeros((mu.len(), nu.len()));
        for ((i, j), x) in m.indexed_iter_mut() {
            *x = mu[i] * nu[j];
        }
        Self::new(m, mu.to_vec(), nu.to_vec())
    }

    pub fn shape(&self) -> (usize, usize) {
        self.matrix.dim()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.matrix.rows().into_iter().map(|r| r.sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        self.matrix.columns().into_iter().map(|c| c.sum()).collect()
    }

    /// Largest absolute deviation of any row or column sum from its marginal.
    pub fn marginal_residual(&self) -> f64 {
        let r = self.row_sums().into_iter().zip(&self.mu_row).map(|(a, b)| (a - b).abs());
        let c = self.col_sums().into_iter().zip(&self.mu_col).map(|(a, b)| (a - b).abs());
        r.chain(c).fold(0.0, f64::max)
    }

    /// Column index carrying the most mass in row `i`; lowest index wins ties.
    pub fn row_argmax(&self, i: usize) -> usize {
        let row = self.matrix.row(i);
        let mut best = 0;
        for j in 1..row.len() {
            if row[j] > row[best] {
                best = j;
            }
        }
        best
    }

    pub fn dump(&self) -> CouplingDump {
        CouplingDump {
            shape: [self.matrix.nrows(), self.matrix.ncols()],
            rows: matrix::to_rows(&self.matrix),
            marginal_residual: self.marginal_residual(),
        }
    }
}

/// Debug serialization of a coupling.
#[derive(Debug, Clone, Serialize)]
pub struct CouplingDump {
    pub shape: [usize; 2],
    pub rows: Vec<Vec<f64>>,
    pub marginal_residual: f64,
}

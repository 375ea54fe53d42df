//! Coupling statistics that drive the edit operators.

use crate::error::{Error, Result};
use crate::kg::RelationEdge;
use crate::matrix::Matrix;
use crate::ot::Coupling;

/// Row mass restricted to semantically close nodes: `ρ'_i = Σ_j π_ij · 1[M(i,j) ≤ tol]`.
pub fn covered_row_mass(pi: &Coupling, m_feat: &Matrix, tol: f64) -> Result<Vec<f64>> {
    if pi.shape() != m_feat.dim() {
        return Err(Error::ShapeMismatch(format!(
            "coupling {:?} vs feature cost {:?}",
            pi.shape(),
            m_feat.dim()
        )));
    }
    Ok(pi
        .matrix
        .rows()
        .into_iter()
        .zip(m_feat.rows())
        .map(|(p, c)| p.iter().zip(c.iter()).filter(|(_, &c)| c <= tol).map(|(&p, _)| p).sum())
        .collect())
}

/// Shannon entropy of each column after normalizing it to a distribution.
pub fn column_entropy_raw(pi: &Coupling) -> Vec<f64> {
    pi.matrix
        .columns()
        .into_iter()
        .map(|col| {
            let s = col.sum();
            if s <= 0.0 {
                return 0.0;
            }
            -col.iter()
                .filter(|&&x| x > 0.0)
                .map(|&x| {
                    let p = x / s;
                    p * p.ln()
                })
                .sum::<f64>()
        })
        .collect()
}

/// Column entropy divided by `ln N`, in `[0, 1]`.
pub fn column_entropy(pi: &Coupling) -> Vec<f64> {
    let n = pi.shape().0;
    let scale = (n as f64).ln();
    column_entropy_raw(pi)
        .into_iter()
        .map(|h| if scale > 0.0 { (h / scale).clamp(0.0, 1.0) } else { 0.0 })
        .collect()
}

fn smoothed(p: &[f64], s: f64) -> Vec<f64> {
    let total: f64 = p.iter().map(|x| x + s).sum();
    p.iter().map(|x| (x + s) / total).collect()
}

/// `½(KL(p‖q) + KL(q‖p))` after adding `smoothing` to every entry and renormalizing.
pub fn symmetric_kl(p: &[f64], q: &[f64], smoothing: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::ShapeMismatch(format!("distributions of length {} and {}", p.len(), q.len())));
    }
    let (p, q) = (smoothed(p, smoothing), smoothed(q, smoothing));
    let kl = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .filter(|(&x, _)| x > 0.0)
            .map(|(&x, &y)| x * (x / y).ln())
            .sum()
    };
    Ok((0.5 * (kl(&p, &q) + kl(&q, &p))).max(0.0))
}

/// Column masses of `π`, one per KG node.
pub fn column_mass(pi: &Coupling) -> Vec<f64> {
    pi.col_sums()
}

/// `s(a, b) = (Σ_i π_ia)·(Σ_i π_ib)` with columns looked up by node id.
pub fn edge_support(col_mass: &[f64], col_ids: &[String], edge: &RelationEdge) -> Result<f64> {
    let col = |id: &str| {
        col_ids
            .iter()
            .position(|c| c == id)
            .map(|j| col_mass[j])
            .ok_or_else(|| Error::UnmappedEndpoint(id.to_string()))
    };
    Ok(col(&edge.src)? * col(&edge.dst)?)
}

/// Indices of the `k` largest entries of column `j`, ties by lowest row.
pub fn top_rows(pi: &Coupling, j: usize, k: usize) -> Vec<usize> {
    let col = pi.matrix.column(j);
    let mut idx: Vec<usize> = (0..col.len()).collect();
    idx.sort_by(|&a, &b| col[b].total_cmp(&col[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

//! Quadratic Gromov-Wasserstein term via the square-loss decomposition.
//!
//! For `L(a, b) = (a − b)²` the four-index sum
//! `Σ_{i,j,k,l} |C1(i,k) − C2(j,l)|² π(i,j) π(k,l)` factors as
//! `⟨c_const − 2·C1·π·C2ᵀ, π⟩` with `c_const(i,j) = (C1²·p)_i + (C2²·q)_j`,
//! where `p`, `q` are the marginals of `π`. Nothing of size N²M² is ever built.

use super::Coupling;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

fn check_shapes(c1: &Matrix, c2: &Matrix, pi: &Matrix) -> Result<()> {
    let (n, m) = pi.dim();
    if c1.dim() != (n, n) || c2.dim() != (m, m) {
        return Err(Error::ShapeMismatch(format!(
            "coupling is {n}x{m} but structure matrices are {:?} and {:?}",
            c1.dim(),
            c2.dim()
        )));
    }
    Ok(())
}

/// `c_const(i,j) = Σ_k C1(i,k)² p_k + Σ_l C2(j,l)² q_l`.
fn const_term(c1: &Matrix, c2: &Matrix, p: &[f64], q: &[f64]) -> Matrix {
    let a = c1.mapv(|x| x * x).dot(&ndarray::ArrayView1::from(p));
    let b = c2.mapv(|x| x * x).dot(&ndarray::ArrayView1::from(q));
    let mut out = Matrix::zeros((p.len(), q.len()));
    for ((i, j), o) in out.indexed_iter_mut() {
        *o = a[i] + b[j];
    }
    out
}

fn marginals(pi: &Matrix) -> (Vec<f64>, Vec<f64>) {
    (
        pi.rows().into_iter().map(|r| r.sum()).collect(),
        pi.columns().into_iter().map(|c| c.sum()).collect(),
    )
}

/// `C1 · π · C2ᵀ`.
pub(crate) fn sandwich(c1: &Matrix, pi: &Matrix, c2: &Matrix) -> Matrix {
    c1.dot(pi).dot(&c2.t())
}

/// Gradient of the structure term at `π`: `2·c_const − 4·C1·π·C2ᵀ`
/// (symmetric `C1`, `C2`; marginals held fixed).
pub fn gw_gradient(c1: &Matrix, c2: &Matrix, pi: &Coupling) -> Result<Matrix> {
    check_shapes(c1, c2, &pi.matrix)?;
    let cc = const_term(c1, c2, &pi.mu_row, &pi.mu_col);
    let s = sandwich(c1, &pi.matrix, c2);
    Ok(2.0 * cc - 4.0 * s)
}

/// Exact value of the four-index structure sum at `π`, using `π`'s own marginals.
pub fn structure_value(c1: &Matrix, c2: &Matrix, pi: &Matrix) -> Result<f64> {
    check_shapes(c1, c2, pi)?;
    let (p, q) = marginals(pi);
    let cc = const_term(c1, c2, &p, &q);
    let s = sandwich(c1, pi, c2);
    let v: f64 = cc
        .iter()
        .zip(s.iter())
        .zip(pi.iter())
        .map(|((c, s), w)| (c - 2.0 * s) * w)
        .sum();
    Ok(v.max(0.0))
}

/// Structure and feature terms of the fused objective at a given coupling.
pub fn distortion_terms(pi: &Matrix, d_z: &Matrix, d_v: &Matrix, m_feat: &Matrix) -> Result<(f64, f64)> {
    if m_feat.dim() != pi.dim() {
        return Err(Error::ShapeMismatch(format!(
            "feature cost is {:?} but coupling is {:?}",
            m_feat.dim(),
            pi.dim()
        )));
    }
    let structure = structure_value(d_z, d_v, pi)?;
    let feature: f64 = m_feat.iter().zip(pi.iter()).map(|(c, w)| c * w).sum();
    Ok((structure, feature.max(0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn four_index(c1: &Matrix, c2: &Matrix, pi: &Matrix) -> f64 {
        let (n, m) = pi.dim();
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..m {
                for k in 0..n {
                    for l in 0..m {
                        s += (c1[[i, k]] - c2[[j, l]]).powi(2) * pi[[i, j]] * pi[[k, l]];
                    }
                }
            }
        }
        s
    }

    #[test]
    fn zero_structures() {
        let z2 = Matrix::zeros((2, 2));
        let z3 = Matrix::zeros((3, 3));
        let pi = Coupling::product(&[0.5, 0.5], &[1.0 / 3.0; 3]);
        assert!(gw_gradient(&z2, &z3, &pi).unwrap().iter().all(|&x| x == 0.0));
        assert_eq!(structure_value(&z2, &z3, &pi.matrix).unwrap(), 0.0);
    }

    #[test]
    fn diagonal_coupling_matches_oracle() {
        let c = array![[0.0, 0.7], [0.7, 0.0]];
        let pi = array![[0.5, 0.0], [0.0, 0.5]];
        let v = structure_value(&c, &c, &pi).unwrap();
        assert!((v - four_index(&c, &c, &pi)).abs() < 1e-12);
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let c1 = array![[0.0, 0.3, 0.9], [0.3, 0.0, 0.4], [0.9, 0.4, 0.0]];
        let c2 = array![[0.0, 0.6], [0.6, 0.0]];
        let pi = Coupling::new(
            array![[0.1, 0.2], [0.15, 0.15], [0.25, 0.15]],
            vec![0.3, 0.3, 0.4],
            vec![0.5, 0.5],
        );
        let g = gw_gradient(&c1, &c2, &pi).unwrap();
        // directional derivative along a zero-marginal direction
        let dir = array![[0.01, -0.01], [-0.01, 0.01], [0.0, 0.0]];
        let h = 1e-5;
        let f = |t: f64| four_index(&c1, &c2, &(&pi.matrix + &(t * &dir)));
        let fd = (f(h) - f(-h)) / (2.0 * h);
        let analytic: f64 = g.iter().zip(dir.iter()).map(|(a, b)| a * b).sum();
        assert!((fd - analytic).abs() < 1e-8, "{fd} vs {analytic}");
    }

    #[test]
    fn shape_mismatch() {
        let pi = Coupling::product(&[0.5, 0.5], &[0.5, 0.5]);
        assert!(gw_gradient(&Matrix::zeros((3, 3)), &Matrix::zeros((2, 2)), &pi).is_err());
        assert!(distortion_terms(&pi.matrix, &Matrix::zeros((2, 2)), &Matrix::zeros((2, 2)), &Matrix::zeros((2, 3))).is_err());
    }

    #[test]
    fn product_coupling_constant_feature() {
        let pi = Coupling::product(&[0.2, 0.3, 0.5], &[0.25; 4]);
        let m = Matrix::from_elem((3, 4), 0.8);
        let (_, f) = distortion_terms(&pi.matrix, &Matrix::zeros((3, 3)), &Matrix::zeros((4, 4)), &m).unwrap();
        assert!((f - 0.8).abs() < 1e-15);
    }
}

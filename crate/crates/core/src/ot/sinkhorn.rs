//! Log-domain Sinkhorn for entropy-regularized linear optimal transport.

use super::Coupling;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Row-marginal residual below which iterations stop early.
const STOP_TOL: f64 = 1e-10;
/// Residual that ends a warm-up stage of the ε schedule.
const WARMUP_TOL: f64 = 1e-6;
/// Geometric decay of ε between warm-up stages.
const EPS_DECAY: f64 = 0.5;

/// Decreasing ε values ending at `epsilon`, starting from the cost range.
fn epsilon_schedule(cost: &[f64], epsilon: f64, budget: usize) -> Vec<f64> {
    let (lo, hi) = cost.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let mut schedule = Vec::new();
    let mut eps = hi - lo;
    while eps > epsilon && budget > 1 {
        schedule.push(eps);
        eps *= EPS_DECAY;
    }
    schedule.push(epsilon);
    schedule
}

/// Per-stage cap for warm-up stages; the final stage keeps at least half the budget.
fn warmup_iterations(budget: usize, stages: usize) -> usize {
    if stages <= 1 {
        return 0;
    }
    (budget / 2 / (stages - 1)).max(1)
}

#[derive(Debug, Clone)]
pub struct SinkhornReport {
    /// Coupling after the final rounding onto the transport polytope.
    pub coupling: Coupling,
    pub iterations: usize,
    /// Max marginal violation of the scaled iterate before rounding.
    pub residual: f64,
}

pub(crate) fn validate_marginal(v: &[f64]) -> Result<()> {
    for (index, &x) in v.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::NonFinite("marginal"));
        }
        if x <= 0.0 {
            return Err(Error::NonPositiveMarginal { index });
        }
    }
    Ok(())
}

/// Entropic OT coupling for `cost` between `mu` and `nu`.
pub fn sinkhorn(cost: &Matrix, mu: &[f64], nu: &[f64], epsilon: f64, max_iters: usize) -> Result<Coupling> {
    sinkhorn_report(cost, mu, nu, epsilon, max_iters).map(|r| r.coupling)
}

/// Like [`sinkhorn`], also reporting iteration count and pre-rounding residual.
pub fn sinkhorn_report(
    cost: &Matrix,
    mu: &[f64],
    nu: &[f64],
    epsilon: f64,
    max_iters: usize,
) -> Result<SinkhornReport> {
    let (n, m) = cost.dim();
    if n != mu.len() || m != nu.len() {
        return Err(Error::ShapeMismatch(format!(
            "cost is {n}x{m}, marginals have lengths {} and {}",
            mu.len(),
            nu.len()
        )));
    }
    if n == 0 || m == 0 {
        return Err(Error::EmptyMatrix);
    }
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidConfig(format!("epsilon must be positive, got {epsilon}")));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("cost matrix"));
    }
    validate_marginal(mu)?;
    validate_marginal(nu)?;

    let c = cost.as_standard_layout();
    let c = c.as_slice().expect("standard layout");
    let log_mu: Vec<f64> = mu.iter().map(|x| x.ln()).collect();
    let log_nu: Vec<f64> = nu.iter().map(|x| x.ln()).collect();

    let budget = max_iters.max(1);
    let schedule = epsilon_schedule(c, epsilon, budget);
    let warmup_cap = warmup_iterations(budget, schedule.len());

    // Potentials are kept in units of the current ε: f̃ = f/ε, g̃ = g/ε.
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut col_max = vec![0.0; m];
    let mut col_sum = vec![0.0; m];
    let mut iterations = 0;
    let mut prev_eps = schedule[0];

    for (stage, &eps) in schedule.iter().enumerate() {
        let last = stage + 1 == schedule.len();
        let k = prev_eps / eps;
        f.iter_mut().for_each(|x| *x *= k);
        g.iter_mut().for_each(|x| *x *= k);
        prev_eps = eps;
        let inv = 1.0 / eps;
        let (cap, tol) = if last {
            (budget - iterations, STOP_TOL)
        } else {
            (warmup_cap, WARMUP_TOL)
        };
        for it in 0..cap {
            iterations += 1;
            // f-update; the log-partition also yields the current row sums.
            let mut row_err: f64 = 0.0;
            for i in 0..n {
                let row = &c[i * m..(i + 1) * m];
                let mut mx = f64::NEG_INFINITY;
                for j in 0..m {
                    mx = mx.max(g[j] - row[j] * inv);
                }
                let s: f64 = (0..m).map(|j| (g[j] - row[j] * inv - mx).exp()).sum();
                let lse = mx + s.ln();
                row_err = row_err.max(((f[i] + lse).exp() - mu[i]).abs());
                f[i] = log_mu[i] - lse;
            }
            // g-update, accumulated row by row for cache locality.
            col_max.iter_mut().for_each(|x| *x = f64::NEG_INFINITY);
            for i in 0..n {
                let row = &c[i * m..(i + 1) * m];
                for j in 0..m {
                    col_max[j] = col_max[j].max(f[i] - row[j] * inv);
                }
            }
            col_sum.iter_mut().for_each(|x| *x = 0.0);
            for i in 0..n {
                let row = &c[i * m..(i + 1) * m];
                for j in 0..m {
                    col_sum[j] += (f[i] - row[j] * inv - col_max[j]).exp();
                }
            }
            for j in 0..m {
                g[j] = log_nu[j] - (col_max[j] + col_sum[j].ln());
            }
            if it > 0 && row_err <= tol {
                break;
            }
        }
    }
    let inv = 1.0 / epsilon;

    let mut plan = Matrix::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            plan[[i, j]] = (f[i] + g[j] - c[i * m + j] * inv).exp();
        }
    }
    if plan.iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericalFailure { iteration: iterations });
    }
    let rows: Vec<f64> = plan.rows().into_iter().map(|r| r.sum()).collect();
    let cols: Vec<f64> = plan.columns().into_iter().map(|c| c.sum()).collect();
    let residual = rows
        .iter()
        .zip(mu)
        .chain(cols.iter().zip(nu))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let plan = round_to_polytope(plan, mu, nu);
    Ok(SinkhornReport {
        coupling: Coupling::new(plan, mu.to_vec(), nu.to_vec()),
        iterations,
        residual,
    })
}

/// Projects a nonnegative plan onto `Π(mu, nu)` by row/column down-scaling
/// followed by a rank-one correction of the remaining deficit.
pub fn round_to_polytope(mut plan: Matrix, mu: &[f64], nu: &[f64]) -> Matrix {
    let (n, m) = plan.dim();
    for i in 0..n {
        let s = plan.row(i).sum();
        if s > mu[i] {
            let k = mu[i] / s;
            plan.row_mut(i).mapv_inplace(|x| x * k);
        }
    }
    for j in 0..m {
        let s = plan.column(j).sum();
        if s > nu[j] {
            let k = nu[j] / s;
            plan.column_mut(j).mapv_inplace(|x| x * k);
        }
    }
    let err_r: Vec<f64> = (0..n).map(|i| (mu[i] - plan.row(i).sum()).max(0.0)).collect();
    let err_c: Vec<f64> = (0..m).map(|j| (nu[j] - plan.column(j).sum()).max(0.0)).collect();
    let total: f64 = err_r.iter().sum();
    if total > 0.0 {
        for i in 0..n {
            for j in 0..m {
                plan[[i, j]] += err_r[i] * err_c[j] / total;
            }
        }
    }
    plan
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn trivial_problem() {
        let c = sinkhorn(&array![[3.7]], &[1.0], &[1.0], 0.05, 10).unwrap();
        assert!((c.matrix[[0, 0]] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_by_two_diagonal() {
        let c = sinkhorn(&array![[0.0, 1.0], [1.0, 0.0]], &[0.5, 0.5], &[0.5, 0.5], 0.01, 200).unwrap();
        let target = array![[0.5, 0.0], [0.0, 0.5]];
        assert!(c.matrix.iter().zip(target.iter()).all(|(a, b)| (a - b).abs() < 1e-3));
        assert!(c.marginal_residual() <= 1e-6);
    }

    #[test]
    fn marginals_respected_on_rectangular_problem() {
        let cost = array![[0.1, 1.9, 0.7], [1.2, 0.3, 0.0], [0.4, 0.4, 2.0], [1.0, 0.0, 0.5]];
        let mu = [0.1, 0.2, 0.3, 0.4];
        let nu = [0.5, 0.25, 0.25];
        for eps in [0.5, 0.05, 0.005] {
            let c = sinkhorn(&cost, &mu, &nu, eps, 200).unwrap();
            assert!(c.marginal_residual() <= 1e-6, "eps {eps}: {}", c.marginal_residual());
            assert!(c.matrix.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let cost = array![[0.0, f64::NAN]];
        assert!(matches!(
            sinkhorn(&cost, &[1.0], &[0.5, 0.5], 0.1, 10),
            Err(Error::NonFinite(_))
        ));
        let cost = array![[0.0, 1.0]];
        assert!(matches!(
            sinkhorn(&cost, &[1.0], &[1.0, 0.0], 0.1, 10),
            Err(Error::NonPositiveMarginal { index: 1 })
        ));
        assert!(sinkhorn(&cost, &[1.0], &[1.0], 0.1, 10).is_err());
    }

    #[test]
    fn rounding_fixes_marginals() {
        let plan = array![[0.4, 0.2], [0.1, 0.1]];
        let r = round_to_polytope(plan, &[0.5, 0.5], &[0.5, 0.5]);
        for i in 0..2 {
            assert!((r.row(i).sum() - 0.5).abs() < 1e-15);
            assert!((r.column(i).sum() - 0.5).abs() < 1e-15);
        }
    }
}

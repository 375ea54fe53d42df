//! Fused Gromov-Wasserstein by conditional gradient with entropic linear subproblems.

use serde::{Deserialize, Serialize};

use super::gw::{distortion_terms, gw_gradient, sandwich};
use super::sinkhorn::{sinkhorn_report, validate_marginal};
use super::Coupling;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Weight of the feature term; `1 − lambda_feat` weights the structure term.
    pub lambda_feat: f64,
    pub epsilon: f64,
    pub sinkhorn_iters: usize,
    pub fw_iters: usize,
    pub fw_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda_feat: 0.6,
            epsilon: 0.05,
            sinkhorn_iters: 200,
            fw_iters: 50,
            fw_tol: 1e-6,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_feat) {
            return Err(Error::InvalidConfig(format!("lambda_feat {} outside [0,1]", self.lambda_feat)));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidConfig(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.sinkhorn_iters == 0 || self.fw_iters == 0 {
            return Err(Error::InvalidConfig("iteration counts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FgwResult {
    pub coupling: Coupling,
    /// Unregularized fused objective at `coupling`.
    pub distortion: f64,
    pub structure_term: f64,
    pub feature_term: f64,
    pub outer_iterations: usize,
    pub converged: bool,
    /// Objective at the initial coupling followed by one value per outer step.
    pub objective_history: Vec<f64>,
    /// Largest pre-rounding marginal violation across the inner solves.
    pub sinkhorn_residual: f64,
}

fn fused(lambda: f64, structure: f64, feature: f64) -> f64 {
    (1.0 - lambda) * structure + lambda * feature
}

fn frobenius(a: &Matrix, b: &Matrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Exact minimizer over `[0, 1]` of `a·t² + b·t`.
fn quadratic_step(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        (-b / (2.0 * a)).clamp(0.0, 1.0)
    } else if a + b < 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Solves the fused problem between `(d_z, mu_z)` and `(d_v, mu_v)` with feature cost `m_feat`.
pub fn fgw(
    d_z: &Matrix,
    d_v: &Matrix,
    m_feat: &Matrix,
    mu_z: &[f64],
    mu_v: &[f64],
    config: &SolverConfig,
) -> Result<FgwResult> {
    config.validate()?;
    let (n, m) = (mu_z.len(), mu_v.len());
    if d_z.dim() != (n, n) || d_v.dim() != (m, m) || m_feat.dim() != (n, m) {
        return Err(Error::ShapeMismatch(format!(
            "d_z {:?}, d_v {:?}, m_feat {:?} for marginals of length {n} and {m}",
            d_z.dim(),
            d_v.dim(),
            m_feat.dim()
        )));
    }
    if n == 0 || m == 0 {
        return Err(Error::EmptyMatrix);
    }
    for (what, mtx) in [("d_z", d_z), ("d_v", d_v), ("feature cost", m_feat)] {
        if mtx.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(what));
        }
    }
    validate_marginal(mu_z)?;
    validate_marginal(mu_v)?;

    let lambda = config.lambda_feat;
    let objective = |pi: &Matrix| -> Result<(f64, f64, f64)> {
        let (s, f) = distortion_terms(pi, d_z, d_v, m_feat)?;
        Ok((fused(lambda, s, f), s, f))
    };

    let mut pi = Coupling::product(mu_z, mu_v);
    let (mut value, mut structure, mut feature) = objective(&pi.matrix)?;
    let mut history = vec![value];
    let mut converged = false;
    let mut iterations = 0;
    let mut residual: f64 = 0.0;

    for k in 0..config.fw_iters {
        iterations = k + 1;
        let grad = gw_gradient(d_z, d_v, &pi)?;
        let lin = (1.0 - lambda) * grad + lambda * m_feat;
        if lin.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericalFailure { iteration: k });
        }
        let direction = match sinkhorn_report(&lin, mu_z, mu_v, config.epsilon, config.sinkhorn_iters) {
            Ok(r) => r,
            Err(Error::NumericalFailure { .. }) => return Err(Error::NumericalFailure { iteration: k }),
            Err(e) => return Err(e),
        };
        residual = residual.max(direction.residual);
        let delta = &direction.coupling.matrix - &pi.matrix;

        let b = frobenius(&lin, &delta);
        let a = -2.0 * (1.0 - lambda) * frobenius(&sandwich(d_z, &delta, d_v), &delta);
        let step = quadratic_step(a, b);
        if !step.is_finite() {
            return Err(Error::NumericalFailure { iteration: k });
        }
        if step == 0.0 {
            converged = true;
            history.push(value);
            break;
        }
        let candidate = &pi.matrix + &(step * &delta);
        let (v, s, f) = objective(&candidate)?;
        if !v.is_finite() {
            return Err(Error::NumericalFailure { iteration: k });
        }
        if v > value {
            // rounding noise on a flat segment; keep the incumbent
            converged = true;
            history.push(value);
            break;
        }
        let decrease = value - v;
        pi.matrix = candidate;
        (value, structure, feature) = (v, s, f);
        history.push(value);
        if value == 0.0 || decrease <= config.fw_tol * history[history.len() - 2].abs() {
            converged = true;
            break;
        }
    }

    Ok(FgwResult {
        coupling: pi,
        distortion: value,
        structure_term: structure,
        feature_term: feature,
        outer_iterations: iterations,
        converged,
        objective_history: history,
        sinkhorn_residual: residual,
    })
}

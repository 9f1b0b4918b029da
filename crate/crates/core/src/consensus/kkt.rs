use serde::{Deserialize, Serialize};

use super::{ConsensusOutcome, GradientSet};
use crate::error::{Error, Result};
use crate::numerics::{dot, norm_sq};

/// Reconstructed dual certificate for a consensus outcome.
///
/// Stationarity of `½ cᵀPc` under `sum(c) = 1, c >= 0` reads
/// `<g_j, u*> = λ + μ_j` with `μ_j >= 0` and `c_j μ_j = 0`. Multiplying by `c_j`
/// and summing gives `λ = ‖u*‖²`, so both duals are determined by `u*` alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// Dual of the sum constraint.
    pub lambda: f64,
    /// Duals of the nonnegativity constraints.
    pub mu: Vec<f64>,
    /// Largest violation over dual feasibility, complementary slackness,
    /// primal feasibility and the representation `u* = sum c_j g_j`.
    pub max_violation: f64,
    pub pass: bool,
}

pub fn verify_kkt(set: &GradientSet, outcome: &ConsensusOutcome, eps: f64) -> Result<KktReport> {
    let u = &outcome.u_star;
    if u.len() != set.dim() {
        return Err(Error::DimensionMismatch {
            context: "kkt check (consensus direction vs gradients)",
            index: 0,
            expected: set.dim(),
            found: u.len(),
        });
    }
    if outcome.weights.len() != set.len() {
        return Err(Error::DimensionMismatch {
            context: "kkt check (weights vs gradient count)",
            index: 0,
            expected: set.len(),
            found: outcome.weights.len(),
        });
    }
    let lambda = norm_sq(u);
    let mu = set
        .gradients()
        .iter()
        .map(|g| Ok(dot(g, u)? - lambda))
        .collect::<Result<Vec<f64>>>()?;

    let mut violation = 0.0_f64;
    for (&m, &c) in mu.iter().zip(outcome.weights.iter()) {
        violation = violation.max(-m).max((c * m).abs()).max(-c);
    }
    violation = violation.max(outcome.weights.sum_residual().abs());
    let represented = set.combine(&outcome.weights);
    violation = violation.max(represented.max_abs_diff(u)?);

    Ok(KktReport {
        lambda,
        mu,
        max_violation: violation,
        pass: violation <= eps,
    })
}

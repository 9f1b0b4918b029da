//! The consensus operator: the minimum-norm point of the convex hull of the
//! agents' gradients, its optimality certificate, and the update directions
//! built from it.
//!
//! For gradients `g_1..g_N` the operator returns `u* = sum_i c_i g_i` where
//! `c` minimises `½ cᵀPc` over the probability simplex and `P` is the Gram
//! matrix. Optimality of `c` implies `<g_j, u*> >= ‖u*‖²` for every agent, so
//! `u*` never decreases any agent's objective to first order.

mod aligned;
mod kkt;
mod solver;

pub use aligned::{geometric_aligned_direction, geometric_aligned_factor};
pub use kkt::{verify_kkt, KktReport};
pub use solver::{solve_consensus_qp, solve_with, QpMethod, SolverConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, norm_sq, DenseVector, SimplexWeights};

/// The per-agent gradients fed to the consensus operator.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    gradients: Vec<DenseVector>,
}

impl GradientSet {
    /// Validates `N >= 1`, a common dimension `D >= 1`, and finite entries.
    pub fn new(gradients: Vec<DenseVector>) -> Result<Self> {
        let first = gradients.first().ok_or(Error::Empty("gradient set"))?;
        let dim = first.len();
        if dim == 0 {
            return Err(Error::Empty("gradient dimension"));
        }
        for (index, g) in gradients.iter().enumerate() {
            if g.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "gradient set (relative to gradient 0)",
                    index,
                    expected: dim,
                    found: g.len(),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient {index}")));
            }
        }
        Ok(GradientSet { gradients })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows.into_iter().map(DenseVector::new).collect())
    }

    pub fn len(&self) -> usize {
        self.gradients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gradients.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.gradients[0].len()
    }

    pub fn gradients(&self) -> &[DenseVector] {
        &self.gradients
    }

    pub fn get(&self, agent: usize) -> &DenseVector {
        &self.gradients[agent]
    }

    /// `sum_i c_i g_i`
    pub fn combine(&self, weights: &[f64]) -> DenseVector {
        let mut u = DenseVector::zeros(self.dim());
        for (g, &c) in self.gradients.iter().zip(weights) {
            if c != 0.0 {
                for (ui, gi) in u.as_mut_slice().iter_mut().zip(g.iter()) {
                    *ui += c * gi;
                }
            }
        }
        u
    }

    pub fn scaled(&self, alpha: f64) -> GradientSet {
        GradientSet {
            gradients: self.gradients.iter().map(|g| g.scaled(alpha)).collect(),
        }
    }

    /// `min_j (<g_j, u> - ‖u‖²)`; nonnegative (up to solver tolerance) when
    /// `u` is the consensus direction of this set.
    pub fn pareto_margin(&self, u: &[f64]) -> Result<f64> {
        let lambda = norm_sq(u);
        let mut worst = f64::INFINITY;
        for g in &self.gradients {
            worst = worst.min(dot(g, u)? - lambda);
        }
        Ok(worst)
    }
}

/// Result of the consensus QP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusOutcome {
    pub u_star: DenseVector,
    pub weights: SimplexWeights,
    pub iterations: usize,
    /// `½‖u*‖²`
    pub objective: f64,
    /// Frank-Wolfe gap of the returned weights.
    pub gap: f64,
    pub converged: bool,
}

impl ConsensusOutcome {
    pub fn norm(&self) -> f64 {
        self.u_star.norm()
    }

    /// The direction and weights of an outcome that puts `weights` on `set`.
    pub(crate) fn from_weights(
        set: &GradientSet,
        weights: SimplexWeights,
        iterations: usize,
        gap: f64,
        converged: bool,
    ) -> Self {
        let u_star = set.combine(&weights);
        let objective = 0.5 * norm_sq(&u_star);
        ConsensusOutcome {
            u_star,
            weights,
            iterations,
            objective,
            gap,
            converged,
        }
    }
}

/// Closed-form minimum-norm point of the segment `[g1, g2]`.
///
/// Minimising `‖c g1 + (1 - c) g2‖²` gives
/// `c = clamp(<g2 - g1, g2> / ‖g1 - g2‖², 0, 1)`. Used as an independent check
/// on [`solve_consensus_qp`].
pub fn min_norm_pair_oracle(g1: &DenseVector, g2: &DenseVector) -> Result<ConsensusOutcome> {
    let set = GradientSet::new(vec![g1.clone(), g2.clone()])?;
    let diff: Vec<f64> = g1.iter().zip(g2.iter()).map(|(a, b)| a - b).collect();
    let denom = norm_sq(&diff);
    let c = if denom == 0.0 {
        1.0
    } else {
        let num: f64 = g2.iter().zip(&diff).map(|(b, d)| -b * d).sum();
        (num / denom).clamp(0.0, 1.0)
    };
    let weights = SimplexWeights::from_raw(vec![c, 1.0 - c]);
    Ok(ConsensusOutcome::from_weights(&set, weights, 0, 0.0, true))
}

/// The realigned update direction `g_i + u*`.
pub fn realigned_direction(gradient: &DenseVector, u_star: &DenseVector) -> Result<DenseVector> {
    gradient.add(u_star)
}

/// `‖u*‖ <= tol`: no joint direction improves every agent.
pub fn equilibrium_check(outcome: &ConsensusOutcome, tol: f64) -> bool {
    outcome.norm() <= tol
}

use crate::config::TrainConfig;
use crate::consensus::{solve_with, GradientSet, SolverConfig};
use crate::envs::TeamQuadratic;
use crate::error::{Error, Result};
use crate::numerics::{dot, norm_sq, RngStream};

use super::keys;

/// The team objective and its starting point for a given seed.
pub fn quadratic_problem(config: &TrainConfig) -> Result<(TeamQuadratic, Vec<f64>)> {
    let mut rng = RngStream::keyed(config.seed, &[keys::PROBLEM]);
    let problem = TeamQuadratic::random(config.env.n_agents, config.env.block_dim, &mut rng)?;
    let mut rng = RngStream::keyed(config.seed, &[keys::THETA_INIT]);
    let theta = rng.uniform_vec(problem.dim(), -1.0, 1.0);
    Ok((problem, theta))
}

/// Worst-case results of the consensus-margin check.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginReport {
    pub cases: usize,
    pub etas: Vec<f64>,
    /// Largest `|ΔJ - ΔJ_first-order| - C η²` (must be ≤ the round-off slack).
    pub worst_expansion_excess: f64,
    /// Largest first-order mismatch `|ΔJ - ΔJ_first-order|` seen at the
    /// smallest step size.
    pub worst_first_order_error: f64,
    /// Smallest `Σ⟨g_i, u*⟩ - N ‖u*‖²` (must be ≥ -1e-8).
    pub worst_pareto_residual: f64,
    /// Smallest `(ΔJ_on - ΔJ_off) - (η N ‖u*‖² - C η²)` (must be ≥ -slack).
    pub worst_gain_excess: f64,
    /// Steps below the improvement threshold that nevertheless decreased J.
    pub threshold_violations: usize,
    /// Smallest improvement threshold `η* = 2 gᵀd / dᵀQd` encountered.
    pub min_threshold: f64,
    pub pass: bool,
}

/// Accounts for floating-point error in `J(θ + ηd) - J(θ)`.
fn roundoff(a: f64, b: f64) -> f64 {
    64.0 * f64::EPSILON * (a.abs() + b.abs()) + 1e-300
}

/// Checks the monotone-improvement margin of the consensus step
/// `θ_i ← θ_i + η (g_i + u*)` on random points of `problem`.
///
/// With `d = g + u*` and `C = ½ ‖Q‖₂ ‖d‖²`, the exact change is
/// `ΔJ = η gᵀd - ½ η² dᵀQd`, so `|ΔJ - η gᵀd| ≤ C η²`. Since
/// `gᵀd = Σ‖g_i‖² + Σ⟨g_i, u*⟩` and the KKT conditions give
/// `Σ⟨g_i, u*⟩ ≥ N ‖u*‖²`, the consensus term gains at least
/// `η N ‖u*‖² - C η²` over the plain step.
pub fn quadratic_margin_check(
    problem: &TeamQuadratic,
    etas: &[f64],
    cases: usize,
    solver: &SolverConfig,
    rng: &mut RngStream,
) -> Result<MarginReport> {
    if etas.is_empty() || etas.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::InvalidArgument(
            "margin check needs positive step sizes".into(),
        ));
    }
    let n = problem.n_agents() as f64;
    let spectral = problem.spectral_norm();
    let smallest = etas.iter().copied().fold(f64::INFINITY, f64::min);
    let mut report = MarginReport {
        cases,
        etas: etas.to_vec(),
        worst_expansion_excess: f64::NEG_INFINITY,
        worst_first_order_error: 0.0,
        worst_pareto_residual: f64::INFINITY,
        worst_gain_excess: f64::INFINITY,
        threshold_violations: 0,
        min_threshold: f64::INFINITY,
        pass: false,
    };
    let mut pass = true;
    for case in 0..cases {
        // the first case sits at the optimum, where every term vanishes
        let theta = if case == 0 {
            problem.theta_star().to_vec()
        } else {
            problem
                .theta_star()
                .iter()
                .map(|t| t + rng.uniform(-2.0, 2.0))
                .collect()
        };
        let (j0, grads) = problem.eval(&theta)?;
        let set = GradientSet::new(grads)?;
        let outcome = solve_with(&set, solver)?;
        let u = outcome.u_star.as_slice();
        let u_sq = norm_sq(u);
        let g_flat: Vec<f64> = set
            .gradients()
            .iter()
            .flat_map(|g| g.iter().copied())
            .collect();
        let d_on: Vec<f64> = set
            .gradients()
            .iter()
            .flat_map(|g| g.iter().zip(u).map(|(a, b)| a + b).collect::<Vec<_>>())
            .collect();
        let cross: f64 = set
            .gradients()
            .iter()
            .map(|g| dot(g, u))
            .sum::<Result<f64>>()?;
        let pareto = cross - n * u_sq;
        report.worst_pareto_residual = report.worst_pareto_residual.min(pareto);
        pass &= pareto >= -1e-8;

        let first_on = dot(&g_flat, &d_on)?;
        let c = 0.5 * spectral * norm_sq(&d_on);
        let curvature = problem.curvature(&d_on);
        if curvature > 0.0 {
            report.min_threshold = report.min_threshold.min(2.0 * first_on / curvature);
        }
        for &eta in etas {
            let step = |d: &[f64]| -> Result<f64> {
                let moved: Vec<f64> = theta.iter().zip(d).map(|(t, x)| t + eta * x).collect();
                problem.value(&moved)
            };
            let j_on = step(&d_on)?;
            let j_off = step(&g_flat)?;
            let delta_on = j_on - j0;
            let delta_off = j_off - j0;
            let slack = roundoff(j_on, j0) + roundoff(j_off, j0);

            let error = (delta_on - eta * first_on).abs();
            report.worst_expansion_excess =
                report.worst_expansion_excess.max(error - c * eta * eta);
            pass &= error <= c * eta * eta + slack;
            if eta == smallest {
                report.worst_first_order_error = report.worst_first_order_error.max(error);
            }

            let below_threshold = curvature <= 0.0 || eta < 2.0 * first_on / curvature;
            if below_threshold && delta_on < -slack {
                report.threshold_violations += 1;
                pass = false;
            }

            let gain = (delta_on - delta_off) - (eta * n * u_sq - c * eta * eta);
            report.worst_gain_excess = report.worst_gain_excess.min(gain);
            pass &= gain >= -slack;
        }
    }
    report.pass = pass;
    Ok(report)
}

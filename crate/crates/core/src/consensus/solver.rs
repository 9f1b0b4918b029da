use serde::{Deserialize, Serialize};

use super::{ConsensusOutcome, GradientSet};
use crate::error::{Error, Result};
use crate::numerics::{gram_matrix, project_to_simplex, GramMatrix, SimplexWeights};

/// Which iterative method minimises `½ cᵀPc` over the simplex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpMethod {
    /// Accelerated projected gradient with step `1 / λ_max(P)` and adaptive
    /// restart.
    #[default]
    ProjectedGradient,
    /// Frank-Wolfe with away steps and exact line search.
    FrankWolfe,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: QpMethod,
    /// Stopping threshold on the Frank-Wolfe gap.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            method: QpMethod::ProjectedGradient,
            tol: 1e-12,
            max_iter: 10_000,
        }
    }
}

/// Solves `min ½‖sum_i c_i g_i‖²` over the probability simplex with the
/// default (projected-gradient) method.
pub fn solve_consensus_qp(
    set: &GradientSet,
    tol: f64,
    max_iter: usize,
) -> Result<ConsensusOutcome> {
    solve_with(
        set,
        &SolverConfig {
            method: QpMethod::ProjectedGradient,
            tol,
            max_iter,
        },
    )
}

pub fn solve_with(set: &GradientSet, config: &SolverConfig) -> Result<ConsensusOutcome> {
    if !(config.tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "consensus tolerance must be positive, got {}",
            config.tol
        )));
    }
    if config.max_iter == 0 {
        return Err(Error::InvalidArgument(
            "consensus max_iter must be at least 1".into(),
        ));
    }
    let gram = gram_matrix(set.gradients())?;
    if !gram.is_finite() {
        return Err(Error::NonFinite("gram matrix".into()));
    }
    let n = gram.n();
    if n == 1 {
        return Ok(ConsensusOutcome::from_weights(
            set,
            SimplexWeights::vertex(1, 0),
            0,
            0.0,
            true,
        ));
    }
    if gram.max_diag() == 0.0 {
        // Every gradient is zero, so every weight vector is optimal.
        return Ok(ConsensusOutcome::from_weights(
            set,
            SimplexWeights::uniform(n),
            0,
            0.0,
            true,
        ));
    }
    let (weights, iterations, gap) = match config.method {
        QpMethod::ProjectedGradient => projected_gradient(&gram, config),
        QpMethod::FrankWolfe => away_step_frank_wolfe(&gram, config),
    }?;
    Ok(ConsensusOutcome::from_weights(
        set,
        weights,
        iterations,
        gap,
        gap <= config.tol,
    ))
}

/// `max_j (cᵀPc - (Pc)_j)`, clipped at zero.
pub(crate) fn frank_wolfe_gap(gram: &GramMatrix, c: &[f64]) -> f64 {
    let pc = gram.mul_vec(c);
    fw_gap_from(&pc, c)
}

fn fw_gap_from(pc: &[f64], c: &[f64]) -> f64 {
    let q: f64 = pc.iter().zip(c).map(|(a, b)| a * b).sum();
    let min = pc.iter().copied().fold(f64::INFINITY, f64::min);
    (q - min).max(0.0)
}

fn objective(gram: &GramMatrix, c: &[f64]) -> f64 {
    0.5 * gram.quad_form(c)
}

fn projected_gradient(
    gram: &GramMatrix,
    config: &SolverConfig,
) -> Result<(SimplexWeights, usize, f64)> {
    let n = gram.n();
    // λ_max >= max diagonal and <= trace for a PSD matrix; the power estimate
    // is a lower bound, so pad it slightly.
    let lipschitz = (1.02 * gram.lambda_max())
        .max(gram.max_diag())
        .min(gram.trace());
    let step = 1.0 / lipschitz;

    let mut c = SimplexWeights::uniform(n);
    let mut gap = frank_wolfe_gap(gram, &c);
    if gap <= config.tol {
        return Ok((c, 0, gap));
    }
    let mut f_c = objective(gram, &c);
    let mut y = c.to_vec();
    let mut momentum = 1.0_f64;

    for iteration in 1..=config.max_iter {
        let grad = gram.mul_vec(&y);
        let trial: Vec<f64> = y.iter().zip(&grad).map(|(yi, gi)| yi - step * gi).collect();
        let mut next = project_to_simplex(&trial)?;
        let mut f_next = objective(gram, &next);
        if f_next > f_c {
            // Restart from the last iterate with a plain projected step.
            momentum = 1.0;
            let grad = gram.mul_vec(&c);
            let trial: Vec<f64> = c.iter().zip(&grad).map(|(ci, gi)| ci - step * gi).collect();
            next = project_to_simplex(&trial)?;
            f_next = objective(gram, &next);
        }
        let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let beta = (momentum - 1.0) / next_momentum;
        y = next
            .iter()
            .zip(c.iter())
            .map(|(a, b)| a + beta * (a - b))
            .collect();
        momentum = next_momentum;
        c = next;
        f_c = f_next;

        gap = frank_wolfe_gap(gram, &c);
        if gap <= config.tol {
            return Ok((c, iteration, gap));
        }
    }
    Ok((c, config.max_iter, gap))
}

fn away_step_frank_wolfe(
    gram: &GramMatrix,
    config: &SolverConfig,
) -> Result<(SimplexWeights, usize, f64)> {
    let n = gram.n();
    let mut c = vec![1.0 / n as f64; n];
    let mut pc = gram.mul_vec(&c);
    let mut gap = fw_gap_from(&pc, &c);
    let mut iterations = 0;

    while gap > config.tol && iterations < config.max_iter {
        iterations += 1;
        let q: f64 = pc.iter().zip(&c).map(|(a, b)| a * b).sum();
        let toward = argmin(&pc);
        let away = (0..n)
            .filter(|&j| c[j] > 0.0)
            .max_by(|&a, &b| pc[a].total_cmp(&pc[b]))
            .unwrap_or(toward);
        let fw_progress = q - pc[toward];
        let away_progress = pc[away] - q;

        // Direction d as a sparse update: c + γ d.
        let (direction, max_step) = if fw_progress >= away_progress || c[away] >= 1.0 {
            let mut d: Vec<f64> = c.iter().map(|x| -x).collect();
            d[toward] += 1.0;
            (d, 1.0)
        } else {
            let mut d = c.clone();
            d[away] -= 1.0;
            (d, c[away] / (1.0 - c[away]))
        };
        let pd = gram.mul_vec(&direction);
        let slope: f64 = direction.iter().zip(&pc).map(|(a, b)| a * b).sum();
        let curvature: f64 = direction.iter().zip(&pd).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            break;
        }
        let step = if curvature > 0.0 {
            (-slope / curvature).min(max_step)
        } else {
            max_step
        };
        for j in 0..n {
            c[j] = (c[j] + step * direction[j]).max(0.0);
            pc[j] += step * pd[j];
        }
        if step == max_step && fw_progress < away_progress {
            c[away] = 0.0;
        }
        let total: f64 = c.iter().sum();
        c.iter_mut().for_each(|x| *x /= total);
        pc = gram.mul_vec(&c);
        gap = fw_gap_from(&pc, &c);
    }
    Ok((SimplexWeights::from_raw(c), iterations, gap))
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::{min_norm_pair_oracle, verify_kkt};
    use crate::numerics::{norm_sq, DenseVector, RngStream};
    use proptest::prelude::*;

    fn set(rows: &[&[f64]]) -> GradientSet {
        GradientSet::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    fn random_set(rng: &mut RngStream, n: usize, d: usize) -> GradientSet {
        GradientSet::from_rows((0..n).map(|_| rng.uniform_vec(d, -1.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn single_agent_is_its_own_consensus() {
        let g = set(&[&[1.5, -2.0, 0.25]]);
        let o = solve_consensus_qp(&g, 1e-8, 10).unwrap();
        assert_eq!(o.u_star.as_slice(), &[1.5, -2.0, 0.25]);
        assert_eq!(o.weights.as_slice(), &[1.0]);
        assert!(o.converged);
    }

    #[test]
    fn opposed_pair_reaches_origin() {
        let g = set(&[&[2.0, -1.0], &[-2.0, 1.0]]);
        for method in [QpMethod::ProjectedGradient, QpMethod::FrankWolfe] {
            let o = solve_with(
                &g,
                &SolverConfig {
                    method,
                    ..Default::default()
                },
            )
            .unwrap();
            assert!(o.norm() <= 1e-8, "{method:?}: {}", o.norm());
        }
    }

    #[test]
    fn orthonormal_pair() {
        let g = set(&[&[1.0, 0.0], &[0.0, 1.0]]);
        for method in [QpMethod::ProjectedGradient, QpMethod::FrankWolfe] {
            let o = solve_with(
                &g,
                &SolverConfig {
                    method,
                    ..Default::default()
                },
            )
            .unwrap();
            assert!((o.u_star[0] - 0.5).abs() < 1e-8 && (o.u_star[1] - 0.5).abs() < 1e-8);
            assert!((o.weights[0] - 0.5).abs() < 1e-8);
            assert!((o.objective - 0.25).abs() < 1e-8);
        }
    }

    #[test]
    fn dominated_pair_picks_shorter_gradient() {
        let g = set(&[&[2.0, 0.0], &[1.0, 0.0]]);
        let o = solve_consensus_qp(&g, 1e-8, 10_000).unwrap();
        assert!((o.u_star[0] - 1.0).abs() < 1e-8 && o.u_star[1].abs() < 1e-12);
        assert!(o.weights[0].abs() < 1e-8 && (o.weights[1] - 1.0).abs() < 1e-8);
        let g1u = crate::numerics::dot(g.get(0), &o.u_star).unwrap();
        assert!(g1u >= norm_sq(&o.u_star));
    }

    #[test]
    fn all_zero_gradients_give_uniform_weights() {
        let g = set(&[&[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]]);
        let o = solve_consensus_qp(&g, 1e-8, 5).unwrap();
        assert_eq!(o.u_star.as_slice(), &[0.0, 0.0]);
        assert_eq!(o.weights.as_slice(), SimplexWeights::uniform(3).as_slice());
        assert_eq!(o.iterations, 0);
    }

    #[test]
    fn exhausted_budget_is_reported() {
        let mut rng = RngStream::new(3, 0);
        let g = random_set(&mut rng, 12, 40);
        let o = solve_with(
            &g,
            &SolverConfig {
                method: QpMethod::FrankWolfe,
                tol: 1e-15,
                max_iter: 2,
            },
        )
        .unwrap();
        assert!(!o.converged);
        assert_eq!(o.iterations, 2);
    }

    #[test]
    fn rejects_bad_arguments() {
        let g = set(&[&[1.0]]);
        assert!(solve_consensus_qp(&g, 0.0, 10).is_err());
        assert!(solve_consensus_qp(&g, 1e-8, 0).is_err());
    }

    #[test]
    fn both_methods_agree() {
        let mut rng = RngStream::new(17, 0);
        for _ in 0..200 {
            let n = 1 + rng.below(10);
            let d = 1 + rng.below(20);
            let g = random_set(&mut rng, n, d);
            let a = solve_with(&g, &SolverConfig::default()).unwrap();
            let b = solve_with(
                &g,
                &SolverConfig {
                    method: QpMethod::FrankWolfe,
                    max_iter: 100_000,
                    ..Default::default()
                },
            )
            .unwrap();
            assert!(a.converged && b.converged);
            assert!((a.objective - b.objective).abs() <= 2e-8);
        }
    }

    #[test]
    fn matches_pair_oracle() {
        let mut rng = RngStream::new(23, 0);
        for _ in 0..200 {
            let d = 1 + rng.below(64);
            let g1 = DenseVector::new(rng.uniform_vec(d, -1.0, 1.0));
            let g2 = DenseVector::new(rng.uniform_vec(d, -1.0, 1.0));
            let oracle = min_norm_pair_oracle(&g1, &g2).unwrap();
            let g = GradientSet::new(vec![g1, g2]).unwrap();
            let o = solve_consensus_qp(&g, 1e-8, 10_000).unwrap();
            assert!((o.objective - oracle.objective).abs() <= 1e-8);
        }
    }

    #[test]
    fn continuity_under_small_perturbations() {
        let mut rng = RngStream::new(29, 0);
        for _ in 0..100 {
            let n = 2 + rng.below(6);
            let d = 1 + rng.below(12);
            let g = random_set(&mut rng, n, d);
            let delta = 1e-4;
            let perturbed = GradientSet::new(
                g.gradients()
                    .iter()
                    .map(|gi| {
                        let noise = rng.uniform_vec(d, -1.0, 1.0);
                        let scale = delta / norm_sq(&noise).sqrt();
                        gi.iter()
                            .zip(&noise)
                            .map(|(a, b)| a + scale * b)
                            .collect::<Vec<_>>()
                            .into()
                    })
                    .collect(),
            )
            .unwrap();
            let a = solve_consensus_qp(&g, 1e-12, 100_000).unwrap();
            let b = solve_consensus_qp(&perturbed, 1e-12, 100_000).unwrap();
            let max_norm = g.gradients().iter().map(|x| x.norm()).fold(0.0, f64::max);
            let moved = norm_sq(
                &a.u_star
                    .iter()
                    .zip(b.u_star.iter())
                    .map(|(x, y)| x - y)
                    .collect::<Vec<_>>(),
            )
            .sqrt();
            assert!(moved <= 10.0 * delta * max_norm, "moved {moved}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn pareto_and_kkt_hold(seed in any::<u64>(), n in 1usize..=16, d in 1usize..=64) {
            let mut rng = RngStream::new(seed, 1);
            let g = random_set(&mut rng, n, d);
            let o = solve_consensus_qp(&g, 1e-8, 10_000).unwrap();
            prop_assert!(o.converged);
            prop_assert!(g.pareto_margin(&o.u_star).unwrap() >= -1e-6);
            let report = verify_kkt(&g, &o, 1e-6).unwrap();
            prop_assert!(report.pass, "{:?}", report);
        }

        #[test]
        fn scale_covariance(seed in any::<u64>(), alpha in 0.01f64..100.0) {
            let mut rng = RngStream::new(seed, 2);
            let n = 1 + rng.below(8);
            let d = 1 + rng.below(16);
            let g = random_set(&mut rng, n, d);
            let base = solve_consensus_qp(&g, 1e-14, 100_000).unwrap();
            let scaled = solve_consensus_qp(&g.scaled(alpha), 1e-14 * alpha * alpha, 100_000).unwrap();
            let reference = base.norm().max(1e-3);
            for (a, b) in base.u_star.iter().zip(scaled.u_star.iter()) {
                prop_assert!((alpha * a - b).abs() <= 1e-8 * alpha * reference.max(1.0) * 10.0);
            }
        }
    }
}

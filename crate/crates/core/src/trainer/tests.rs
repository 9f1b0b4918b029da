use super::*;
use crate::config::RunConfig;
use crate::envs::{climb_payoff, Observation};
use crate::optim::OptimizerKind;
use crate::policy::SampledStep;

fn config(text: &str) -> TrainConfig {
    RunConfig::from_json_str(text).unwrap().train
}

fn frozen(config: &TrainConfig) -> (PolicyParams, CriticParams) {
    let trainer = Trainer::new(config.clone()).unwrap();
    (
        trainer.policy().unwrap().clone(),
        trainer.critic().unwrap().clone(),
    )
}

#[test]
fn empty_rollout_is_an_error() {
    let mut c = config(r#"{"env": "matrix_climb"}"#);
    let (p, v) = frozen(&c);
    c.episodes_per_iteration = 0;
    assert!(matches!(
        collect_rollouts(&p, &v, &c, 0),
        Err(Error::Empty(_))
    ));
}

#[test]
fn rollouts_are_reproducible_across_worker_counts() {
    let base =
        config(r#"{"env": "grid_spread", "episodes_per_iteration": 7, "episode_length": 6}"#);
    let (p, v) = frozen(&base);
    let a = collect_rollouts(&p, &v, &base, 3).unwrap();
    let b = collect_rollouts(&p, &v, &base, 3).unwrap();
    assert_eq!(a, b);
    for workers in [2, 3, 7, 16] {
        let c = TrainConfig {
            rollout_workers: workers,
            ..base.clone()
        };
        assert_eq!(collect_rollouts(&p, &v, &c, 3).unwrap(), a);
    }
    assert_ne!(collect_rollouts(&p, &v, &base, 4).unwrap(), a);
}

#[test]
fn stored_log_probs_match_snapshot() {
    let c = config(r#"{"env": "grid_spread", "episodes_per_iteration": 3, "episode_length": 4}"#);
    let (p, v) = frozen(&c);
    let batch = collect_rollouts(&p, &v, &c, 0).unwrap();
    for (agent, steps) in batch.steps.iter().enumerate() {
        assert_eq!(steps.len(), 12);
        for s in steps {
            let lp = p.log_prob(&s.observation, s.action, agent).unwrap();
            assert!((lp - s.log_prob).abs() <= 1e-12);
        }
    }
    // truncated episodes: the advantage of the last step bootstraps from V(s_T)
    let e = &batch.episodes[0];
    assert!(!e.terminal);
    let last = e.len() - 1;
    let bootstrap = v.value(&e.final_state).unwrap();
    let expected = e.rewards[last] + c.gamma * bootstrap - batch.estimates.values_old[last];
    assert!((batch.estimates.deltas[last] - expected).abs() < 1e-15);
}

#[test]
fn uniform_climb_rewards_match_table_average() {
    let c = config(r#"{"env": "matrix_climb", "episodes_per_iteration": 1000}"#);
    let (p, v) = frozen(&c);
    let batch = collect_rollouts(&p, &v, &c, 0).unwrap();
    let payoff = climb_payoff();
    let values = payoff.values();
    let mean = values.iter().sum::<f64>() / 9.0;
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 9.0;
    let sigma = (var / 1000.0).sqrt();
    assert!(
        (batch.mean_return() - mean).abs() <= 3.0 * sigma,
        "{} vs {mean}",
        batch.mean_return()
    );
}

#[test]
fn zero_advantages_give_zero_consensus() {
    let c = config(r#"{"env": "matrix_climb", "episodes_per_iteration": 8}"#);
    let (p, v) = frozen(&c);
    let batch = collect_rollouts(&p, &v, &c, 0).unwrap();
    let zeros = vec![0.0; batch.len()];
    let (set, _, outcome) =
        compute_consensus(&p, &batch, &zeros, &SolverConfig::default(), true).unwrap();
    assert!(set.gradients().iter().all(|g| g.iter().all(|&x| x == 0.0)));
    assert_eq!(outcome.unwrap().norm(), 0.0);
}

#[test]
fn single_agent_consensus_is_its_gradient() {
    let c = config(r#"{"env": "matrix", "payoff": [1.0, 0.0, 2.0], "episodes_per_iteration": 16}"#);
    let (p, v) = frozen(&c);
    let batch = collect_rollouts(&p, &v, &c, 0).unwrap();
    let adv = batch.estimates.advantages.clone();
    let (set, _, outcome) =
        compute_consensus(&p, &batch, &adv, &SolverConfig::default(), true).unwrap();
    assert_eq!(outcome.unwrap().u_star, *set.get(0));
}

#[test]
fn mirrored_agents_share_their_gradient() {
    let c = config(r#"{"env": "matrix_climb", "episodes_per_iteration": 8}"#);
    let (p, v) = frozen(&c);
    let mut batch = collect_rollouts(&p, &v, &c, 0).unwrap();
    // make agent 1 copy agent 0's actions
    let copied: Vec<SampledStep> = batch.steps[0]
        .iter()
        .map(|s| SampledStep {
            agent: 1,
            ..s.clone()
        })
        .collect();
    batch.steps[1] = copied;
    let adv: Vec<f64> = (0..batch.len()).map(|t| (t as f64 - 3.0) / 4.0).collect();
    let (set, _, outcome) =
        compute_consensus(&p, &batch, &adv, &SolverConfig::default(), true).unwrap();
    assert_eq!(set.get(0), set.get(1));
    let u = outcome.unwrap().u_star;
    assert!(u.max_abs_diff(set.get(0)).unwrap() < 1e-15);
}

#[test]
fn surrogate_at_old_policy_is_mean_advantage() {
    let c = config(r#"{"env": "grid_spread", "episodes_per_iteration": 2, "episode_length": 5}"#);
    let (p, v) = frozen(&c);
    let batch = collect_rollouts(&p, &v, &c, 0).unwrap();
    let adv = &batch.estimates.advantages;
    let all: Vec<usize> = (0..batch.len()).collect();
    let mean = adv.iter().sum::<f64>() / adv.len() as f64;
    for agent in 0..3 {
        let (value, grad, _) = clipped_surrogate(&p, &batch, adv, agent, &all, 0.2).unwrap();
        assert!((value - mean).abs() < 1e-12);
        // with ρ = 1 the surrogate gradient is the vanilla policy gradient
        let vanilla =
            crate::policy::local_policy_gradient(&batch.steps[agent], adv, agent, &p).unwrap();
        assert!(grad.head.max_abs_diff(&vanilla.head).unwrap() < 1e-12);
    }
}

#[test]
fn fully_clipped_batch_moves_heads_by_consensus_only() {
    let c = config(
        r#"{"env": "matrix_climb", "episodes_per_iteration": 16, "optimizer": "plain", "learning_rate": 0.01}"#,
    );
    let (mut p, v) = frozen(&c);
    let mut batch = collect_rollouts(&p, &v, &c, 0).unwrap();
    // pretend the old policy made every sampled action much less likely
    for steps in batch.steps.iter_mut() {
        for s in steps.iter_mut() {
            s.log_prob -= 1.0;
        }
    }
    let adv = vec![0.5; batch.len()];
    let all: Vec<usize> = (0..batch.len()).collect();
    let (value, grad, stats) = clipped_surrogate(&p, &batch, &adv, 0, &all, 0.2).unwrap();
    assert!((value - 1.2 * 0.5).abs() < 1e-12);
    assert!(grad.head.iter().all(|&x| x == 0.0));
    assert_eq!(stats.clipped, batch.len());

    let u = DenseVector::new(vec![0.1, -0.2, 0.3]);
    let before = p.clone();
    let mut opt = Optimizer::new(OptimizerKind::Plain, 0.01, p.flat().len()).unwrap();
    let step = ActorStep {
        u_star: Some(&u),
        coefficient: 2.0,
        epsilon: 0.2,
        update_heads: true,
    };
    ppo_actor_update(&mut p, &mut opt, &batch, &adv, &all, step).unwrap();
    for agent in 0..2 {
        for ((new, old), x) in p.head(agent).iter().zip(before.head(agent)).zip(u.iter()) {
            assert!((new - old - 0.01 * 2.0 * x).abs() < 1e-15);
        }
    }
}

#[test]
fn critic_update_keeps_a_perfect_critic() {
    let c = config(r#"{"env": "matrix_climb", "episodes_per_iteration": 4, "optimizer": "plain"}"#);
    let (p, mut v) = frozen(&c);
    let mut batch = collect_rollouts(&p, &v, &c, 0).unwrap();
    let value = v.value(&Observation::Discrete(0)).unwrap();
    batch.estimates.returns = vec![value; batch.len()];
    let before = v.clone();
    let mut opt = Optimizer::new(OptimizerKind::Plain, 0.5, v.flat().len()).unwrap();
    let all: Vec<usize> = (0..batch.len()).collect();
    let loss = ppo_critic_update(&mut v, &mut opt, &batch, &all, 0.2).unwrap();
    assert_eq!(loss, 0.0);
    assert_eq!(v, before);
}

#[test]
fn zero_iterations_produce_nothing() {
    let (metrics, trainer) = train(config(r#"{"env": "matrix_climb", "iterations": 0}"#)).unwrap();
    assert!(metrics.is_empty());
    assert_eq!(trainer.completed(), 0);
}

#[test]
fn training_is_deterministic() {
    let c = config(
        r#"{"env": "grid_spread", "iterations": 3, "episodes_per_iteration": 4, "episode_length": 8, "minibatches": 2}"#,
    );
    let strip = |m: Vec<IterationMetrics>| {
        m.iter()
            .map(IterationMetrics::without_wall_time)
            .collect::<Vec<_>>()
    };
    let a = strip(train(c.clone()).unwrap().0);
    let b = strip(
        train(TrainConfig {
            rollout_workers: 3,
            ..c
        })
        .unwrap()
        .0,
    );
    assert_eq!(a, b);
    assert_eq!(a.len(), 3);
    assert_eq!(a[2].iteration, 3);
}

#[test]
fn baseline_equals_zero_coefficient_grasp() {
    for env in [r#""env": "matrix_climb""#, r#""env": "team_quadratic""#] {
        let base = config(&format!(
            r#"{{{env}, "iterations": 20, "mode": "mappo_baseline", "consensus_coefficient": 0.7}}"#
        ));
        let off = config(&format!(
            r#"{{{env}, "iterations": 20, "mode": "grasp", "consensus_coefficient": 0}}"#
        ));
        let a: Vec<_> = train(base)
            .unwrap()
            .0
            .iter()
            .map(IterationMetrics::without_wall_time)
            .collect();
        let b: Vec<_> = train(off)
            .unwrap()
            .0
            .iter()
            .map(IterationMetrics::without_wall_time)
            .collect();
        assert_eq!(a, b);
        assert!(a.iter().all(|m| m.u_star_norm == 0.0 && m.qp_iters == 0));
    }
}

#[test]
fn grasp_iterations_keep_the_pareto_margin() {
    let c = config(r#"{"env": "grid_spread", "iterations": 4, "episodes_per_iteration": 4}"#);
    let (metrics, _) = train(c).unwrap();
    for m in &metrics {
        assert!(
            m.kkt_margin >= -1e-6 * (1.0 + m.u_star_norm.powi(2)),
            "{m:?}"
        );
        assert!(m.u_star_norm > 0.0);
        assert!(m.diagnostics.qp_converged);
    }
}

#[test]
fn aligned_mode_never_harms_an_agent() {
    for env in [
        r#""env": "matrix_climb", "learning_rate": 0.05"#,
        r#""env": "team_quadratic""#,
    ] {
        let c = config(&format!(
            r#"{{{env}, "iterations": 50, "mode": "grasp_aligned"}}"#
        ));
        let (metrics, _) = train(c).unwrap();
        for m in &metrics {
            let d = &m.diagnostics;
            assert!(d.aligned_min_g_dot_v.unwrap() >= -1e-10, "{d:?}");
            assert!(d.aligned_min_u_dot_v.unwrap() >= -1e-10, "{d:?}");
            assert!(d.gamma_factors.iter().all(|&g| g <= 1.0 + 1e-12));
        }
    }
}

#[test]
fn team_quadratic_reaches_equilibrium() {
    let c = config(r#"{"env": "team_quadratic", "seed": 4}"#);
    let (metrics, trainer) = train(c).unwrap();
    assert_eq!(metrics.len(), 2000);
    let last = metrics.last().unwrap();
    assert!(last.u_star_norm < 1e-4, "{last:?}");
    let j = trainer
        .problem()
        .unwrap()
        .value(trainer.theta().unwrap())
        .unwrap();
    assert!(j > -1e-6 && j <= 0.0);
    assert!(metrics.iter().all(|m| m.kkt_margin >= -1e-6));
}

#[test]
fn critic_study_matches_linear_solve() {
    let study = critic_convergence_study(&CriticStudyConfig::default()).unwrap();
    // Bellman evaluation (I - γ P) V = r̄ with P the step-shift matrix
    let len = study.exact.len();
    let gamma = CriticStudyConfig::default().gamma;
    let r_bar = climb_payoff().values().iter().sum::<f64>() / 9.0;
    let mut a = nalgebra::DMatrix::<f64>::identity(len, len);
    for t in 0..len - 1 {
        a[(t, t + 1)] = -gamma;
    }
    let v = a
        .lu()
        .solve(&nalgebra::DVector::from_element(len, r_bar))
        .unwrap();
    for t in 0..len {
        assert!((v[t] - study.exact[t]).abs() < 1e-12);
        assert!((v[t] - study.fitted[t]).abs() < 1e-3);
    }
    let burn_in = 60;
    for w in study.errors[burn_in..].windows(2) {
        assert!(w[1] <= w[0] + 1e-15, "{} then {}", w[0], w[1]);
    }
    assert!(*study.errors.last().unwrap() < 1e-3);
}

#[test]
fn out_of_band_ratios_only_carry_gradient_on_the_pessimistic_side() {
    let c = config(r#"{"env": "grid_spread", "episodes_per_iteration": 6, "episode_length": 8}"#);
    let (p, v) = frozen(&c);
    let batch = collect_rollouts(&p, &v, &c, 0).unwrap();
    let mut rng = RngStream::new(11, 0);
    let moved: Vec<f64> = p
        .flat()
        .iter()
        .map(|x| x + rng.uniform(-0.5, 0.5))
        .collect();
    let moved = PolicyParams::from_flat(*p.arch(), moved).unwrap();
    let adv: Vec<f64> = (0..batch.len()).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let eps = 0.2;
    for agent in 0..3 {
        let mut optimistic = 0;
        let mut pessimistic = 0;
        for (t, s) in batch.steps[agent].iter().enumerate() {
            let ratio =
                (moved.log_prob(&s.observation, s.action, agent).unwrap() - s.log_prob).exp();
            if (adv[t] > 0.0 && ratio > 1.0 + eps) || (adv[t] < 0.0 && ratio < 1.0 - eps) {
                optimistic += 1;
            } else if (ratio - 1.0).abs() > eps && adv[t] != 0.0 {
                pessimistic += 1;
            }
        }
        let all: Vec<usize> = (0..batch.len()).collect();
        let (_, _, stats) = clipped_surrogate(&moved, &batch, &adv, agent, &all, eps).unwrap();
        assert!(
            optimistic > 0 && pessimistic > 0,
            "perturbation too small to exercise the clip"
        );
        assert_eq!(stats.clipped, optimistic);
        assert_eq!(stats.outside_band, pessimistic);
        assert_eq!(stats.ratio_terms + stats.clipped, batch.len());
    }
}

//! The training loop: rollouts, global advantages, per-agent gradients, the
//! consensus direction, and multi-epoch clipped actor/critic updates.
//!
//! Each iteration runs three phases against frozen snapshots of the policy
//! and critic:
//!
//! 1. collect episodes and compute advantages and return targets with the
//!    global critic;
//! 2. compute every agent's head gradient and solve the consensus QP once;
//! 3. run `ppo_epochs` passes of shuffled minibatch updates, critic first,
//!    with `u*` held fixed.
//!
//! `team_quadratic` replaces phases 1 and 3 by exact gradients and a direct
//! step `θ_i ← θ_i + η (g_i + u*)`.

mod ppo;
mod quadratic;
mod rollout;
mod study;

use std::time::Instant;

pub use ppo::{
    clipped_surrogate, compute_consensus, ppo_actor_update, ppo_critic_update, ActorStep, ClipStats,
};
pub use quadratic::{quadratic_margin_check, quadratic_problem, MarginReport};
pub use rollout::{build_env, collect_rollouts, run_episode, Episode, RolloutBatch};
pub use study::{critic_convergence_study, CriticStudy, CriticStudyConfig};

use crate::config::{EnvKind, Mode, TrainConfig};
use crate::consensus::{
    geometric_aligned_factor, verify_kkt, ConsensusOutcome, GradientSet, SolverConfig,
};
use crate::envs::{ObsSpace, TeamQuadratic};
use crate::error::{Error, Result};
use crate::estimation::{normalized, CriticArch, CriticParams};
use crate::numerics::{dot, DenseVector, RngStream};
use crate::optim::Optimizer;
use crate::policy::{PolicyArch, PolicyParams};

/// Stream keys. Every random draw in a run comes from
/// `RngStream::keyed(seed, [key, ...])` with one of these leading keys.
pub(crate) mod keys {
    pub const POLICY_INIT: u64 = 1;
    pub const CRITIC_INIT: u64 = 2;
    pub const ROLLOUT: u64 = 3;
    pub const MINIBATCH: u64 = 4;
    pub const PROBLEM: u64 = 5;
    pub const THETA_INIT: u64 = 6;
}

/// Per-iteration checks that are not part of the metrics file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    pub clip: ClipStats,
    /// Whether the QP met its tolerance (true when it was not run).
    pub qp_converged: bool,
    /// Largest KKT residual of the consensus solution (0 when not run).
    pub kkt_violation: f64,
    /// `Γ_i` per agent (`grasp_aligned` only).
    pub gamma_factors: Vec<f64>,
    /// `min_i g_iᵀ v_i` over applied aligned directions (`grasp_aligned` only).
    pub aligned_min_g_dot_v: Option<f64>,
    /// `min_i u*ᵀ v_i` over applied aligned directions (`grasp_aligned` only).
    pub aligned_min_u_dot_v: Option<f64>,
}

/// One row of the metrics file.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationMetrics {
    /// 1-based.
    pub iteration: usize,
    /// Mean undiscounted episode return (`J(θ)` for `team_quadratic`).
    pub mean_return: f64,
    pub u_star_norm: f64,
    /// `min_j g_jᵀu* - ‖u*‖²`
    pub kkt_margin: f64,
    pub g_norms: Vec<f64>,
    /// Mean clipped surrogate over agents and updates (`Σ g_iᵀ d_i` for
    /// `team_quadratic`).
    pub actor_surrogate: f64,
    /// Mean critic loss over updates (0 for `team_quadratic`).
    pub critic_loss: f64,
    pub qp_iters: usize,
    pub wall_ms: f64,
    pub diagnostics: Diagnostics,
}

impl IterationMetrics {
    /// The same record with the timing zeroed, for exact comparisons.
    pub fn without_wall_time(&self) -> Self {
        IterationMetrics {
            wall_ms: 0.0,
            ..self.clone()
        }
    }
}

struct PolicyEngine {
    policy: PolicyParams,
    critic: CriticParams,
    actor_opt: Optimizer,
    critic_opt: Optimizer,
}

struct QuadraticEngine {
    problem: TeamQuadratic,
    theta: Vec<f64>,
    optimizer: Optimizer,
}

enum Engine {
    Policy(Box<PolicyEngine>),
    Quadratic(QuadraticEngine),
}

/// Holds the learning state of one run and advances it an iteration at a
/// time.
pub struct Trainer {
    config: TrainConfig,
    completed: usize,
    engine: Engine,
}

fn solver_config(config: &TrainConfig) -> SolverConfig {
    SolverConfig {
        method: config.qp_method,
        tol: config.consensus_tol,
        max_iter: config.consensus_max_iter,
    }
}

/// Whether this configuration needs `u*` at all.
fn needs_consensus(config: &TrainConfig) -> bool {
    match config.mode {
        Mode::MappoBaseline => false,
        Mode::Grasp => config.consensus_coefficient > 0.0,
        Mode::GraspAligned => true,
    }
}

/// `u*` (zero when not solved), the KKT margin, and diagnostics.
fn consensus_summary(
    set: &GradientSet,
    outcome: Option<&ConsensusOutcome>,
) -> Result<(DenseVector, f64, Diagnostics)> {
    let mut diagnostics = Diagnostics {
        qp_converged: true,
        ..Diagnostics::default()
    };
    let u = match outcome {
        Some(o) => {
            diagnostics.qp_converged = o.converged;
            diagnostics.kkt_violation = verify_kkt(set, o, f64::INFINITY)?.max_violation;
            o.u_star.clone()
        }
        None => DenseVector::zeros(set.dim()),
    };
    if !u.is_finite() {
        return Err(Error::NonFinite("consensus direction".into()));
    }
    let margin = set.pareto_margin(&u)?;
    Ok((u, margin, diagnostics))
}

/// `Γ_i (g_i + u*)`, or zero when both vectors vanish.
fn aligned(g: &DenseVector, u: &DenseVector) -> Result<(f64, DenseVector)> {
    if g.iter().chain(u.iter()).all(|&x| x == 0.0) {
        return Ok((0.0, DenseVector::zeros(g.len())));
    }
    let gamma = geometric_aligned_factor(g, u)?;
    Ok((gamma, g.add(u)?.scaled(gamma)))
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        let engine = if config.env.kind == EnvKind::TeamQuadratic {
            let (problem, theta) = quadratic_problem(&config)?;
            let optimizer = Optimizer::new(config.optimizer, config.learning_rate, theta.len())?;
            Engine::Quadratic(QuadraticEngine {
                problem,
                theta,
                optimizer,
            })
        } else {
            let env = build_env(&config.env)?;
            let spec = env.spec().clone();
            let arch = PolicyArch::new(
                config.policy,
                spec.n_agents,
                spec.obs_space,
                spec.action_count,
                config.hidden_width,
            )?;
            let policy = PolicyParams::init(
                arch,
                &mut RngStream::keyed(config.seed, &[keys::POLICY_INIT]),
            );
            let critic_arch = match (config.policy, spec.state_space) {
                (crate::policy::PolicyFamily::Tabular, ObsSpace::Discrete(states)) => {
                    CriticArch::Tabular { states }
                }
                (_, input) => CriticArch::Mlp {
                    input,
                    hidden: config.hidden_width,
                },
            };
            let critic = CriticParams::new(
                critic_arch,
                &mut RngStream::keyed(config.seed, &[keys::CRITIC_INIT]),
            )?;
            let actor_opt =
                Optimizer::new(config.optimizer, config.learning_rate, policy.flat().len())?;
            let critic_opt = Optimizer::new(
                config.optimizer,
                config.critic_learning_rate,
                critic.flat().len(),
            )?;
            Engine::Policy(Box::new(PolicyEngine {
                policy,
                critic,
                actor_opt,
                critic_opt,
            }))
        };
        Ok(Trainer {
            config,
            completed: 0,
            engine,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Number of completed iterations.
    pub fn completed(&self) -> usize {
        self.completed
    }

    pub fn policy(&self) -> Option<&PolicyParams> {
        match &self.engine {
            Engine::Policy(e) => Some(&e.policy),
            Engine::Quadratic(_) => None,
        }
    }

    pub fn critic(&self) -> Option<&CriticParams> {
        match &self.engine {
            Engine::Policy(e) => Some(&e.critic),
            Engine::Quadratic(_) => None,
        }
    }

    pub fn theta(&self) -> Option<&[f64]> {
        match &self.engine {
            Engine::Quadratic(e) => Some(&e.theta),
            Engine::Policy(_) => None,
        }
    }

    pub fn problem(&self) -> Option<&TeamQuadratic> {
        match &self.engine {
            Engine::Quadratic(e) => Some(&e.problem),
            Engine::Policy(_) => None,
        }
    }

    /// Runs one full iteration. Non-finite numbers anywhere abort it with
    /// [`Error::NumericAbort`].
    pub fn step(&mut self) -> Result<IterationMetrics> {
        let iteration = self.completed + 1;
        let start = Instant::now();
        let result = match &mut self.engine {
            Engine::Policy(engine) => policy_iteration(&self.config, engine, self.completed),
            Engine::Quadratic(engine) => quadratic_iteration(&self.config, engine),
        };
        let mut metrics = result.map_err(|e| match e {
            Error::NonFinite(message) => Error::NumericAbort { iteration, message },
            other => other,
        })?;
        metrics.iteration = iteration;
        metrics.wall_ms = start.elapsed().as_secs_f64() * 1e3;
        let finite = [
            metrics.mean_return,
            metrics.u_star_norm,
            metrics.kkt_margin,
            metrics.actor_surrogate,
            metrics.critic_loss,
        ]
        .iter()
        .chain(&metrics.g_norms)
        .all(|x| x.is_finite());
        if !finite {
            return Err(Error::NumericAbort {
                iteration,
                message: "non-finite metric".into(),
            });
        }
        self.completed = iteration;
        Ok(metrics)
    }
}

fn policy_iteration(
    config: &TrainConfig,
    engine: &mut PolicyEngine,
    index: usize,
) -> Result<IterationMetrics> {
    let batch = collect_rollouts(&engine.policy, &engine.critic, config, index)?;
    let advantages = if config.advantage_normalization {
        normalized(&batch.estimates.advantages)
    } else {
        batch.estimates.advantages.clone()
    };

    let (set, full, outcome) = compute_consensus(
        &engine.policy,
        &batch,
        &advantages,
        &solver_config(config),
        needs_consensus(config),
    )?;
    let (u, kkt_margin, mut diagnostics) = consensus_summary(&set, outcome.as_ref())?;
    if full.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("policy gradient".into()));
    }

    let total = batch.len();
    let parts = config.minibatches.min(total);
    let step = ActorStep {
        u_star: (config.mode == Mode::Grasp && outcome.is_some()).then_some(&u),
        coefficient: config.consensus_coefficient,
        epsilon: config.clip_epsilon,
        update_heads: config.mode != Mode::GraspAligned,
    };
    let mut surrogate_sum = 0.0;
    let mut critic_sum = 0.0;
    let mut updates = 0usize;
    for epoch in 0..config.ppo_epochs {
        let mut order: Vec<usize> = (0..total).collect();
        RngStream::keyed(config.seed, &[keys::MINIBATCH, index as u64, epoch as u64])
            .shuffle(&mut order);
        for part in 0..parts {
            let indices = &order[part * total / parts..(part + 1) * total / parts];
            critic_sum += ppo_critic_update(
                &mut engine.critic,
                &mut engine.critic_opt,
                &batch,
                indices,
                config.critic_clip_epsilon,
            )?;
            let (surrogate, stats) = ppo_actor_update(
                &mut engine.policy,
                &mut engine.actor_opt,
                &batch,
                &advantages,
                indices,
                step,
            )?;
            surrogate_sum += surrogate;
            diagnostics.clip.merge(stats);
            updates += 1;
        }
    }

    if config.mode == Mode::GraspAligned {
        let mut min_g = f64::INFINITY;
        let mut min_u = f64::INFINITY;
        for (agent, g) in set.gradients().iter().enumerate() {
            let (gamma, v) = aligned(g, &u)?;
            min_g = min_g.min(dot(g, &v)?);
            min_u = min_u.min(dot(&u, &v)?);
            diagnostics.gamma_factors.push(gamma);
            for (h, x) in engine.policy.head_mut(agent).iter_mut().zip(v.iter()) {
                *h += config.learning_rate * x;
            }
        }
        diagnostics.aligned_min_g_dot_v = Some(min_g);
        diagnostics.aligned_min_u_dot_v = Some(min_u);
    }
    if !engine.policy.flat().iter().all(|x| x.is_finite()) || !engine.critic.is_finite() {
        return Err(Error::NonFinite("parameters after update".into()));
    }

    Ok(IterationMetrics {
        iteration: 0,
        mean_return: batch.mean_return(),
        u_star_norm: u.norm(),
        kkt_margin,
        g_norms: set.gradients().iter().map(DenseVector::norm).collect(),
        actor_surrogate: surrogate_sum / updates as f64,
        critic_loss: critic_sum / updates as f64,
        qp_iters: outcome.as_ref().map_or(0, |o| o.iterations),
        wall_ms: 0.0,
        diagnostics,
    })
}

fn quadratic_iteration(
    config: &TrainConfig,
    engine: &mut QuadraticEngine,
) -> Result<IterationMetrics> {
    let (value, grads) = engine.problem.eval(&engine.theta)?;
    let set = GradientSet::new(grads)?;
    let outcome = if needs_consensus(config) {
        Some(crate::consensus::solve_with(&set, &solver_config(config))?)
    } else {
        None
    };
    let (u, kkt_margin, mut diagnostics) = consensus_summary(&set, outcome.as_ref())?;

    let mut direction = Vec::with_capacity(engine.theta.len());
    let mut min_g = f64::INFINITY;
    let mut min_u = f64::INFINITY;
    for g in set.gradients() {
        let d = match config.mode {
            Mode::MappoBaseline => g.clone(),
            Mode::Grasp if outcome.is_none() => g.clone(),
            Mode::Grasp => {
                let mut d = g.clone();
                d.axpy(config.consensus_coefficient, &u)?;
                d
            }
            Mode::GraspAligned => {
                let (gamma, v) = aligned(g, &u)?;
                min_g = min_g.min(dot(g, &v)?);
                min_u = min_u.min(dot(&u, &v)?);
                diagnostics.gamma_factors.push(gamma);
                v
            }
        };
        direction.extend_from_slice(&d);
    }
    if config.mode == Mode::GraspAligned {
        diagnostics.aligned_min_g_dot_v = Some(min_g);
        diagnostics.aligned_min_u_dot_v = Some(min_u);
    }
    let flat_g: Vec<f64> = set
        .gradients()
        .iter()
        .flat_map(|g| g.iter().copied())
        .collect();
    let first_order = dot(&flat_g, &direction)?;
    if direction.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("update direction".into()));
    }
    engine.optimizer.ascend(&mut engine.theta, &direction)?;

    Ok(IterationMetrics {
        iteration: 0,
        mean_return: value,
        u_star_norm: u.norm(),
        kkt_margin,
        g_norms: set.gradients().iter().map(DenseVector::norm).collect(),
        actor_surrogate: first_order,
        critic_loss: 0.0,
        qp_iters: outcome.as_ref().map_or(0, |o| o.iterations),
        wall_ms: 0.0,
        diagnostics,
    })
}

/// Runs every configured iteration, calling `on_iteration` after each one
/// (for streaming metrics and checkpoints).
pub fn train_with<F>(config: TrainConfig, mut on_iteration: F) -> Result<Trainer>
where
    F: FnMut(&IterationMetrics, &Trainer) -> Result<()>,
{
    let mut trainer = Trainer::new(config)?;
    for _ in 0..trainer.config.iterations {
        let metrics = trainer.step()?;
        on_iteration(&metrics, &trainer)?;
    }
    Ok(trainer)
}

/// Runs every configured iteration and returns the metrics.
pub fn train(config: TrainConfig) -> Result<(Vec<IterationMetrics>, Trainer)> {
    let mut metrics = Vec::new();
    let trainer = train_with(config, |m, _| {
        metrics.push(m.clone());
        Ok(())
    })?;
    Ok((metrics, trainer))
}

#[cfg(test)]
mod tests;

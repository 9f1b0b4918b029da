use crate::consensus::{solve_with, ConsensusOutcome, GradientSet, SolverConfig};
use crate::error::{Error, Result};
use crate::estimation::{critic_loss, critic_update, CriticParams, CriticSample};
use crate::numerics::DenseVector;
use crate::optim::Optimizer;
use crate::policy::{local_policy_gradient, AgentGradient, PolicyParams};

use super::rollout::RolloutBatch;

/// How often the clipped objective let the ratio carry gradient.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ClipStats {
    /// Samples whose gradient flows through the ratio.
    pub ratio_terms: usize,
    /// Of those, samples with the ratio outside `[1 - ε, 1 + ε]`. The min
    /// form only allows this on the pessimistic side of the clip.
    pub outside_band: usize,
    /// Samples where the clipped branch was selected (no ratio gradient).
    pub clipped: usize,
}

impl ClipStats {
    pub fn merge(&mut self, other: ClipStats) {
        self.ratio_terms += other.ratio_terms;
        self.outside_band += other.outside_band;
        self.clipped += other.clipped;
    }
}

/// Clipped surrogate `mean_t min(ρ_t Â_t, clip(ρ_t, 1-ε, 1+ε) Â_t)` for one
/// agent over the samples `indices`, with its gradient.
///
/// On a tie between the two branches the unclipped one is taken, so the
/// gradient there is `Â ρ ∇log π`.
pub fn clipped_surrogate(
    params: &PolicyParams,
    batch: &RolloutBatch,
    advantages: &[f64],
    agent: usize,
    indices: &[usize],
    epsilon: f64,
) -> Result<(f64, AgentGradient, ClipStats)> {
    if indices.is_empty() {
        return Err(Error::Empty("minibatch"));
    }
    let steps = &batch.steps[agent];
    let scale = 1.0 / indices.len() as f64;
    let mut grad = AgentGradient::zeros(params.layout());
    let mut stats = ClipStats::default();
    let mut value = 0.0;
    for &t in indices {
        let step = &steps[t];
        let adv = advantages[t];
        let log_prob = params.log_prob(&step.observation, step.action, agent)?;
        let ratio = (log_prob - step.log_prob).exp();
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * adv;
        if unclipped <= clipped {
            value += unclipped;
            if adv != 0.0 {
                params.accumulate_score(
                    &step.observation,
                    step.action,
                    agent,
                    scale * adv * ratio,
                    &mut grad,
                )?;
                stats.ratio_terms += 1;
                if (ratio - 1.0).abs() > epsilon {
                    stats.outside_band += 1;
                }
            }
        } else {
            value += clipped;
            stats.clipped += 1;
        }
    }
    Ok((value * scale, grad, stats))
}

/// Phase 2: per-agent head gradients (the vanilla policy gradient) and their
/// minimum-norm convex combination.
///
/// Returns `None` for the outcome when `solve` is false; the consensus
/// direction is then zero and the QP is not run.
pub fn compute_consensus(
    policy: &PolicyParams,
    batch: &RolloutBatch,
    advantages: &[f64],
    solver: &SolverConfig,
    solve: bool,
) -> Result<(GradientSet, Vec<AgentGradient>, Option<ConsensusOutcome>)> {
    let n = policy.arch().n_agents;
    let mut full = Vec::with_capacity(n);
    for agent in 0..n {
        full.push(local_policy_gradient(
            &batch.steps[agent],
            advantages,
            agent,
            policy,
        )?);
    }
    let set = GradientSet::new(full.iter().map(|g| g.head.clone()).collect())?;
    let outcome = if solve {
        Some(solve_with(&set, solver)?)
    } else {
        None
    };
    Ok((set, full, outcome))
}

/// What the actor step applies on top of the surrogate gradients.
#[derive(Debug, Clone, Copy)]
pub struct ActorStep<'a> {
    /// Added to every head gradient, scaled by `coefficient`.
    pub u_star: Option<&'a DenseVector>,
    pub coefficient: f64,
    pub epsilon: f64,
    /// When false the heads receive no gradient (they are moved elsewhere).
    pub update_heads: bool,
}

/// One actor ascent step on a minibatch. Heads get their agent's surrogate
/// gradient plus `coefficient · u*`; the shared backbone gets the sum of the
/// agents' surrogate gradients. Returns the mean surrogate value across
/// agents.
pub fn ppo_actor_update(
    params: &mut PolicyParams,
    optimizer: &mut Optimizer,
    batch: &RolloutBatch,
    advantages: &[f64],
    indices: &[usize],
    step: ActorStep<'_>,
) -> Result<(f64, ClipStats)> {
    let n = params.arch().n_agents;
    let layout = params.layout().clone();
    let mut direction = vec![0.0; layout.total_len()];
    let mut stats = ClipStats::default();
    let mut surrogate = 0.0;
    for agent in 0..n {
        let (value, grad, s) =
            clipped_surrogate(params, batch, advantages, agent, indices, step.epsilon)?;
        surrogate += value;
        stats.merge(s);
        if step.update_heads {
            let head = &mut direction[layout.head_range(agent)];
            head.copy_from_slice(&grad.head);
            if let Some(u) = step.u_star {
                for (h, x) in head.iter_mut().zip(u.iter()) {
                    *h += step.coefficient * x;
                }
            }
        }
        for (b, x) in direction[layout.backbone_range()]
            .iter_mut()
            .zip(grad.backbone.iter())
        {
            *b += x;
        }
    }
    if direction.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("actor update direction".into()));
    }
    optimizer.ascend(params.flat_mut(), &direction)?;
    Ok((surrogate / n as f64, stats))
}

/// One critic descent step on a minibatch. Returns the loss before the step.
pub fn ppo_critic_update(
    critic: &mut CriticParams,
    optimizer: &mut Optimizer,
    batch: &RolloutBatch,
    indices: &[usize],
    epsilon: f64,
) -> Result<f64> {
    let samples: Vec<CriticSample> = indices
        .iter()
        .map(|&t| CriticSample {
            state: batch.states[t].clone(),
            value_old: batch.estimates.values_old[t],
            target: batch.estimates.returns[t],
        })
        .collect();
    let (loss, grad) = critic_loss(critic, &samples, epsilon)?;
    if !loss.is_finite() || grad.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("critic loss".into()));
    }
    critic_update(critic, &grad, optimizer)?;
    Ok(loss)
}

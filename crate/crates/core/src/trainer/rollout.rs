use std::thread;

use crate::config::{EnvConfig, EnvKind, TrainConfig};
use crate::envs::{Environment, GridSpread, GridSpreadConfig, MatrixGame, Observation};
use crate::error::{Error, Result};
use crate::estimation::{AdvantageBatch, CriticParams};
use crate::numerics::RngStream;
use crate::policy::{PolicyParams, SampledStep};

use super::keys;

/// Builds a fresh environment instance for one rollout worker.
pub fn build_env(config: &EnvConfig) -> Result<Box<dyn Environment>> {
    match config.kind {
        EnvKind::MatrixClimb | EnvKind::Matrix => {
            let payoff = config.payoff.clone().ok_or_else(|| {
                Error::InvalidArgument("matrix environment without a payoff".into())
            })?;
            Ok(Box::new(MatrixGame::new(payoff, config.episode_length)?))
        }
        EnvKind::GridSpread => Ok(Box::new(GridSpread::new(GridSpreadConfig {
            n_agents: config.n_agents,
            width: config.grid_width,
            episode_len: config.episode_length,
            collision_penalty: config.collision_penalty,
        })?)),
        EnvKind::TeamQuadratic => Err(Error::InvalidArgument(
            "team_quadratic is a closed-form objective, not an episodic environment".into(),
        )),
    }
}

/// One episode as played by the frozen policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    /// `[t][agent]`
    pub observations: Vec<Vec<Observation>>,
    pub actions: Vec<Vec<usize>>,
    pub log_probs: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    /// Global state before each step.
    pub states: Vec<Observation>,
    /// Global state after the last step.
    pub final_state: Observation,
    /// Whether the episode ended on its own rather than by the step limit.
    pub terminal: bool,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// Plays one episode with its own keyed random stream.
pub fn run_episode(
    env: &mut dyn Environment,
    policy: &PolicyParams,
    rng: &mut RngStream,
) -> Result<Episode> {
    let spec = env.spec().clone();
    let mut obs = env.reset(rng);
    let mut episode = Episode {
        observations: Vec::new(),
        actions: Vec::new(),
        log_probs: Vec::new(),
        rewards: Vec::new(),
        states: Vec::new(),
        final_state: env.global_state(),
        terminal: false,
    };
    for _ in 0..spec.max_episode_len {
        episode.states.push(env.global_state());
        let mut actions = Vec::with_capacity(spec.n_agents);
        let mut log_probs = Vec::with_capacity(spec.n_agents);
        for (agent, o) in obs.iter().enumerate() {
            let (a, lp) = policy.act(o, agent, rng)?;
            actions.push(a);
            log_probs.push(lp);
        }
        let result = env.step(&actions)?;
        if !result.reward.is_finite() {
            return Err(Error::NonFinite("environment reward".into()));
        }
        episode
            .observations
            .push(std::mem::replace(&mut obs, result.observations));
        episode.actions.push(actions);
        episode.log_probs.push(log_probs);
        episode.rewards.push(result.reward);
        if result.terminal {
            episode.terminal = true;
            break;
        }
    }
    episode.final_state = env.global_state();
    Ok(episode)
}

/// Data collected under frozen policy and critic snapshots, with global
/// advantages and return targets.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub episodes: Vec<Episode>,
    /// `[agent][t]`, with `t` running over all episodes in order.
    pub steps: Vec<Vec<SampledStep>>,
    pub rewards: Vec<f64>,
    pub states: Vec<Observation>,
    pub estimates: AdvantageBatch,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn mean_return(&self) -> f64 {
        self.episodes.iter().map(Episode::total_reward).sum::<f64>() / self.episodes.len() as f64
    }

    /// Assembles a batch from finished episodes, evaluating the critic
    /// snapshot on every state. Truncated episodes bootstrap from the value of
    /// their final state; terminal ones from zero.
    pub fn from_episodes(
        episodes: Vec<Episode>,
        critic: &CriticParams,
        gamma: f64,
        lambda: f64,
    ) -> Result<Self> {
        if episodes.is_empty() {
            return Err(Error::Empty("rollout batch"));
        }
        let n_agents = episodes[0].actions.first().map_or(0, Vec::len);
        let mut steps = vec![Vec::new(); n_agents];
        let mut rewards = Vec::new();
        let mut states = Vec::new();
        let mut estimates = AdvantageBatch::default();
        for episode in &episodes {
            let mut values = Vec::with_capacity(episode.len() + 1);
            for s in &episode.states {
                values.push(critic.value(s)?);
            }
            values.push(if episode.terminal {
                0.0
            } else {
                critic.value(&episode.final_state)?
            });
            estimates.push_episode(&episode.rewards, &values, episode.terminal, gamma, lambda)?;
            for t in 0..episode.len() {
                let time = rewards.len();
                for (agent, agent_steps) in steps.iter_mut().enumerate() {
                    agent_steps.push(SampledStep {
                        agent,
                        time,
                        observation: episode.observations[t][agent].clone(),
                        action: episode.actions[t][agent],
                        log_prob: episode.log_probs[t][agent],
                    });
                }
                rewards.push(episode.rewards[t]);
                states.push(episode.states[t].clone());
            }
        }
        Ok(RolloutBatch {
            episodes,
            steps,
            rewards,
            states,
            estimates,
        })
    }
}

/// Phase 1 of an iteration: plays `episodes_per_iteration` episodes under the
/// frozen snapshots.
///
/// Episode `e` of iteration `k` always draws from the stream keyed by
/// `(seed, k, e)`, and workers own contiguous episode ranges merged in order,
/// so the batch does not depend on the worker count or on scheduling.
pub fn collect_rollouts(
    policy: &PolicyParams,
    critic: &CriticParams,
    config: &TrainConfig,
    iteration: usize,
) -> Result<RolloutBatch> {
    let total = config.episodes_per_iteration;
    if total == 0 {
        return Err(Error::Empty("rollout batch"));
    }
    let workers = config.rollout_workers.clamp(1, total);
    let play = |range: std::ops::Range<usize>| -> Result<Vec<Episode>> {
        let mut env = build_env(&config.env)?;
        range
            .map(|e| {
                let mut rng =
                    RngStream::keyed(config.seed, &[keys::ROLLOUT, iteration as u64, e as u64]);
                run_episode(env.as_mut(), policy, &mut rng)
            })
            .collect()
    };
    let bounds: Vec<std::ops::Range<usize>> = (0..workers)
        .map(|w| w * total / workers..(w + 1) * total / workers)
        .collect();
    let chunks: Vec<Result<Vec<Episode>>> = if workers == 1 {
        vec![play(0..total)]
    } else {
        let play = &play;
        thread::scope(|scope| {
            let handles: Vec<_> = bounds
                .iter()
                .cloned()
                .map(|r| scope.spawn(move || play(r)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("rollout worker panicked"))
                .collect()
        })
    };
    let mut episodes = Vec::with_capacity(total);
    for chunk in chunks {
        episodes.extend(chunk?);
    }
    RolloutBatch::from_episodes(episodes, critic, config.gamma, config.gae_lambda)
}

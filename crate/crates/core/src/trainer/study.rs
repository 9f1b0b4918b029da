use crate::envs::{climb_payoff, Observation};
use crate::error::{Error, Result};
use crate::estimation::{
    critic_loss, critic_update, AdvantageBatch, CriticArch, CriticParams, CriticSample,
};
use crate::numerics::RngStream;
use crate::optim::{Optimizer, OptimizerKind};

/// Settings for fitting a tabular critic to a fixed joint policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticStudyConfig {
    pub episode_length: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub clip_epsilon: f64,
    pub learning_rate: f64,
    /// Rounds of target recomputation with the frozen critic.
    pub rounds: usize,
    /// Critic steps per round.
    pub epochs: usize,
}

impl Default for CriticStudyConfig {
    fn default() -> Self {
        CriticStudyConfig {
            episode_length: 5,
            gamma: 0.99,
            lambda: 0.95,
            clip_epsilon: 0.2,
            learning_rate: 0.5,
            rounds: 300,
            epochs: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticStudy {
    /// `max_t |V(t) - V^π(t)|` after each round.
    pub errors: Vec<f64>,
    pub fitted: Vec<f64>,
    /// Value of the uniform joint policy by backward recursion.
    pub exact: Vec<f64>,
}

/// Fits the tabular critic of the climb game (state = step index) under the
/// uniform joint policy.
///
/// The batch holds one episode per joint action offset: episode `e` plays
/// joint action `(e + t) mod |A|²` at step `t`, so every step sees every
/// joint action exactly once and the batch carries the policy's exact action
/// frequencies. Each round recomputes GAE targets with the frozen critic and
/// then takes `epochs` full-batch plain steps on the clipped value loss.
pub fn critic_convergence_study(config: &CriticStudyConfig) -> Result<CriticStudy> {
    let payoff = climb_payoff();
    let actions = payoff.shape()[0];
    let joint_count = actions * actions;
    let len = config.episode_length;
    if len == 0 || config.rounds == 0 || config.epochs == 0 {
        return Err(Error::InvalidArgument(
            "critic study needs steps, rounds and epochs".into(),
        ));
    }
    let episodes: Vec<Vec<f64>> = (0..joint_count)
        .map(|e| {
            (0..len)
                .map(|t| {
                    let joint = (e + t) % joint_count;
                    payoff.get(&[joint / actions, joint % actions])
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;

    let mean_reward = payoff.values().iter().sum::<f64>() / joint_count as f64;
    let mut exact = vec![0.0; len];
    let mut next = 0.0;
    for t in (0..len).rev() {
        exact[t] = mean_reward + config.gamma * next;
        next = exact[t];
    }

    let arch = CriticArch::Tabular { states: len };
    let mut critic = CriticParams::new(arch, &mut RngStream::new(0, 0))?;
    let mut optimizer = Optimizer::new(OptimizerKind::Plain, config.learning_rate, len)?;
    let mut errors = Vec::with_capacity(config.rounds);
    for _ in 0..config.rounds {
        let mut batch = AdvantageBatch::default();
        let mut values = critic.flat().to_vec();
        values.push(0.0);
        for rewards in &episodes {
            batch.push_episode(rewards, &values, true, config.gamma, config.lambda)?;
        }
        let samples: Vec<CriticSample> = (0..batch.len())
            .map(|i| CriticSample {
                state: Observation::Discrete(i % len),
                value_old: batch.values_old[i],
                target: batch.returns[i],
            })
            .collect();
        for _ in 0..config.epochs {
            let (_, grad) = critic_loss(&critic, &samples, config.clip_epsilon)?;
            critic_update(&mut critic, &grad, &mut optimizer)?;
        }
        let err = critic
            .flat()
            .iter()
            .zip(&exact)
            .map(|(v, x)| (v - x).abs())
            .fold(0.0, f64::max);
        errors.push(err);
    }
    Ok(CriticStudy {
        errors,
        fitted: critic.flat().to_vec(),
        exact,
    })
}

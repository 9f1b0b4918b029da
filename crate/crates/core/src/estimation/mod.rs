//! Global critic, TD errors, generalized advantage estimation and return
//! targets.
//!
//! The sequence functions operate on one episode, or on several episodes laid
//! end to end as long as each episode's last step is flagged. A flagged step
//! never looks past itself, so nothing leaks across episode boundaries.

mod critic;

pub use critic::{critic_loss, critic_update, CriticArch, CriticParams, CriticSample};

use crate::error::{Error, Result};

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!(
            "gamma must lie in [0,1), got {gamma}"
        )));
    }
    Ok(())
}

fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            context,
            index: 0,
            expected,
            found,
        });
    }
    Ok(())
}

/// `δ_t = r_t + γ V(s_{t+1}) - V(s_t)`, dropping the bootstrap term on
/// terminal steps.
///
/// `values` holds `T + 1` entries; the last one is the bootstrap value of the
/// state after the final step.
pub fn td_errors(
    rewards: &[f64],
    values: &[f64],
    terminal: &[bool],
    gamma: f64,
) -> Result<Vec<f64>> {
    check_gamma(gamma)?;
    check_len("values (rewards + 1)", rewards.len() + 1, values.len())?;
    check_len("terminal flags", rewards.len(), terminal.len())?;
    Ok((0..rewards.len())
        .map(|t| {
            let next = if terminal[t] {
                0.0
            } else {
                gamma * values[t + 1]
            };
            rewards[t] + next - values[t]
        })
        .collect())
}

/// Backward recursion `Â_t = δ_t + γλ Â_{t+1}`, restarted after every flagged
/// step.
pub fn gae(deltas: &[f64], gamma: f64, lambda: f64, episode_end: &[bool]) -> Result<Vec<f64>> {
    check_gamma(gamma)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!(
            "lambda must lie in [0,1], got {lambda}"
        )));
    }
    check_len("episode-end flags", deltas.len(), episode_end.len())?;
    let decay = gamma * lambda;
    let mut out = vec![0.0; deltas.len()];
    let mut running = 0.0;
    for t in (0..deltas.len()).rev() {
        if episode_end[t] {
            running = 0.0;
        }
        running = deltas[t] + decay * running;
        out[t] = running;
    }
    Ok(out)
}

/// `R̂_t = Â_t + V(s_t; φ_old)`
pub fn return_targets(advantages: &[f64], values_old: &[f64]) -> Result<Vec<f64>> {
    check_len("old values", advantages.len(), values_old.len())?;
    Ok(advantages
        .iter()
        .zip(values_old)
        .map(|(a, v)| a + v)
        .collect())
}

/// Per-step estimation results for a batch of whole episodes, concatenated in
/// episode order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdvantageBatch {
    pub deltas: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub values_old: Vec<f64>,
    /// True on the last step of each episode.
    pub episode_end: Vec<bool>,
}

impl AdvantageBatch {
    /// Appends one episode. `values` has one entry per step plus the bootstrap
    /// value, which is ignored when `terminal` is set.
    pub fn push_episode(
        &mut self,
        rewards: &[f64],
        values: &[f64],
        terminal: bool,
        gamma: f64,
        lambda: f64,
    ) -> Result<()> {
        if rewards.is_empty() {
            return Err(Error::Empty("episode"));
        }
        let steps = rewards.len();
        let mut flags = vec![false; steps];
        flags[steps - 1] = terminal;
        let deltas = td_errors(rewards, values, &flags, gamma)?;
        flags[steps - 1] = true;
        let advantages = gae(&deltas, gamma, lambda, &flags)?;
        let returns = return_targets(&advantages, &values[..steps])?;
        self.deltas.extend(deltas);
        self.advantages.extend(advantages);
        self.returns.extend(returns);
        self.values_old.extend_from_slice(&values[..steps]);
        self.episode_end.extend(flags);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.advantages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.advantages.is_empty()
    }
}

/// Zero-mean, unit-variance copy of `values` (unchanged when the spread is
/// negligible).
pub fn normalized(values: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd < 1e-12 {
        return values.iter().map(|v| v - mean).collect();
    }
    values.iter().map(|v| (v - mean) / sd).collect()
}

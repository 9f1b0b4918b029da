//! Cooperative environments with a single shared team reward.
//!
//! Two of them are played by sampled policies ([`MatrixGame`], [`GridSpread`]).
//! The third, [`TeamQuadratic`], is not an episodic environment at all: it is
//! a differentiable team objective with exact per-agent gradients, used to
//! check the consensus update against closed-form expectations.

mod grid;
mod matrix;
mod quadratic;

use std::collections::BTreeMap;

pub use grid::{GridSpread, GridSpreadConfig, GRID_ACTIONS};
pub use matrix::{climb_payoff, MatrixGame, PayoffTensor};
pub use quadratic::TeamQuadratic;

use crate::error::Result;
use crate::numerics::RngStream;

/// What an agent (or the critic) sees.
#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    /// An index into a finite observation set.
    Discrete(usize),
    /// A real feature vector.
    Features(Vec<f64>),
}

impl Observation {
    pub fn describe(&self) -> String {
        match self {
            Observation::Discrete(i) => format!("discrete #{i}"),
            Observation::Features(v) => format!("feature vector of length {}", v.len()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObsSpace {
    Discrete(usize),
    Features(usize),
}

impl ObsSpace {
    /// Width of the input layer of a network fed with this space (one-hot for
    /// discrete spaces).
    pub fn input_dim(&self) -> usize {
        match *self {
            ObsSpace::Discrete(n) | ObsSpace::Features(n) => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub n_agents: usize,
    /// Observation space, identical for every agent.
    pub obs_space: ObsSpace,
    /// Action count, identical for every agent.
    pub action_count: usize,
    /// Space of the global state seen by the critic.
    pub state_space: ObsSpace,
    pub max_episode_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observations: Vec<Observation>,
    /// Shared team reward, identical for every agent.
    pub reward: f64,
    /// True when the episode has genuinely ended (no bootstrap value).
    pub terminal: bool,
    pub info: BTreeMap<String, f64>,
}

/// An episodic cooperative environment. Instances are single-owner.
pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    /// Starts a new episode and returns one observation per agent.
    fn reset(&mut self, rng: &mut RngStream) -> Vec<Observation>;

    /// The current global state for the centralised critic.
    fn global_state(&self) -> Observation;

    fn step(&mut self, actions: &[usize]) -> Result<StepResult>;
}

use std::collections::BTreeMap;

use super::{EnvSpec, Environment, ObsSpace, Observation, StepResult};
use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// stay, up, down, left, right
pub const GRID_ACTIONS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpreadConfig {
    pub n_agents: usize,
    pub width: usize,
    pub episode_len: usize,
    pub collision_penalty: f64,
}

impl Default for GridSpreadConfig {
    fn default() -> Self {
        GridSpreadConfig {
            n_agents: 3,
            width: 5,
            episode_len: 25,
            collision_penalty: 1.0,
        }
    }
}

type Cell = (usize, usize);

/// N agents cover N landmarks on a `width × width` grid.
///
/// The team reward is the negated sum, over landmarks, of the Manhattan
/// distance to the closest agent, minus the collision penalty for every pair of
/// co-located agents. Every agent observes the full layout.
#[derive(Debug, Clone)]
pub struct GridSpread {
    config: GridSpreadConfig,
    spec: EnvSpec,
    agents: Vec<Cell>,
    landmarks: Vec<Cell>,
}

impl GridSpread {
    pub fn new(config: GridSpreadConfig) -> Result<Self> {
        if config.n_agents == 0 || config.width == 0 || config.episode_len == 0 {
            return Err(Error::InvalidArgument(
                "grid_spread needs at least one agent, one cell and one step".into(),
            ));
        }
        if config.n_agents > config.width * config.width {
            return Err(Error::InvalidArgument(format!(
                "{} landmarks do not fit on a {}x{} grid",
                config.n_agents, config.width, config.width
            )));
        }
        if !(config.collision_penalty >= 0.0) {
            return Err(Error::InvalidArgument(
                "collision penalty must be nonnegative".into(),
            ));
        }
        let n = config.n_agents;
        let spec = EnvSpec {
            n_agents: n,
            obs_space: ObsSpace::Features(2 + 4 * n),
            action_count: GRID_ACTIONS,
            state_space: ObsSpace::Features(4 * n),
            max_episode_len: config.episode_len,
        };
        Ok(GridSpread {
            config,
            spec,
            agents: vec![(0, 0); n],
            landmarks: vec![(0, 0); n],
        })
    }

    /// Places agents and landmarks explicitly.
    pub fn with_layout(
        config: GridSpreadConfig,
        agents: Vec<Cell>,
        landmarks: Vec<Cell>,
    ) -> Result<Self> {
        let mut env = Self::new(config)?;
        if agents.len() != config.n_agents || landmarks.len() != config.n_agents {
            return Err(Error::InvalidArgument(
                "layout must give one cell per agent and per landmark".into(),
            ));
        }
        let inside = |&(x, y): &Cell| x < config.width && y < config.width;
        if !agents.iter().chain(&landmarks).all(inside) {
            return Err(Error::InvalidArgument(
                "layout cell outside the grid".into(),
            ));
        }
        env.agents = agents;
        env.landmarks = landmarks;
        Ok(env)
    }

    pub fn agents(&self) -> &[Cell] {
        &self.agents
    }

    pub fn landmarks(&self) -> &[Cell] {
        &self.landmarks
    }

    pub fn reward(&self) -> f64 {
        team_reward(&self.agents, &self.landmarks, self.config.collision_penalty)
    }

    fn coords(&self, cells: &[Cell], out: &mut Vec<f64>) {
        let scale = (self.config.width.max(2) - 1) as f64;
        for &(x, y) in cells {
            out.push(x as f64 / scale);
            out.push(y as f64 / scale);
        }
    }

    fn observations(&self) -> Vec<Observation> {
        let mut shared = Vec::with_capacity(4 * self.config.n_agents);
        self.coords(&self.agents, &mut shared);
        self.coords(&self.landmarks, &mut shared);
        (0..self.config.n_agents)
            .map(|i| {
                let mut obs = Vec::with_capacity(2 + shared.len());
                self.coords(&self.agents[i..=i], &mut obs);
                obs.extend_from_slice(&shared);
                Observation::Features(obs)
            })
            .collect()
    }
}

fn manhattan(a: Cell, b: Cell) -> usize {
    a.0.abs_diff(b.0) + a.1.abs_diff(b.1)
}

pub(crate) fn team_reward(agents: &[Cell], landmarks: &[Cell], collision_penalty: f64) -> f64 {
    let coverage: usize = landmarks
        .iter()
        .map(|&l| agents.iter().map(|&a| manhattan(a, l)).min().unwrap_or(0))
        .sum();
    let mut collisions = 0usize;
    for i in 0..agents.len() {
        for j in i + 1..agents.len() {
            if agents[i] == agents[j] {
                collisions += 1;
            }
        }
    }
    -(coverage as f64) - collision_penalty * collisions as f64
}

impl Environment for GridSpread {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut RngStream) -> Vec<Observation> {
        let w = self.config.width;
        self.landmarks.clear();
        while self.landmarks.len() < self.config.n_agents {
            let cell = (rng.below(w), rng.below(w));
            if !self.landmarks.contains(&cell) {
                self.landmarks.push(cell);
            }
        }
        for agent in self.agents.iter_mut() {
            *agent = (rng.below(w), rng.below(w));
        }
        self.observations()
    }

    fn global_state(&self) -> Observation {
        let mut state = Vec::with_capacity(4 * self.config.n_agents);
        self.coords(&self.agents, &mut state);
        self.coords(&self.landmarks, &mut state);
        Observation::Features(state)
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepResult> {
        if actions.len() != self.config.n_agents {
            return Err(Error::DimensionMismatch {
                context: "grid_spread joint action",
                index: 0,
                expected: self.config.n_agents,
                found: actions.len(),
            });
        }
        let last = self.config.width - 1;
        for (agent, &a) in actions.iter().enumerate() {
            let (x, y) = self.agents[agent];
            self.agents[agent] = match a {
                0 => (x, y),
                1 => (x, (y + 1).min(last)),
                2 => (x, y.saturating_sub(1)),
                3 => (x.saturating_sub(1), y),
                4 => ((x + 1).min(last), y),
                _ => {
                    return Err(Error::InvalidAction {
                        agent,
                        action: a,
                        count: GRID_ACTIONS,
                    })
                }
            };
        }
        Ok(StepResult {
            observations: self.observations(),
            reward: self.reward(),
            terminal: false,
            info: BTreeMap::new(),
        })
    }
}

//! Agent policies and their exact score-function gradients.
//!
//! Two families share one parameter layout scheme:
//!
//! * **tabular**: one row of logits per discrete observation, per agent; no
//!   backbone.
//! * **mlp**: a shared `tanh` backbone (one hidden layer) feeding an
//!   independent linear softmax head per agent.
//!
//! Heads always have identical shapes across agents, so per-agent head
//! gradients live in one common vector space and can be combined by the
//! consensus operator.

mod checkpoint;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::envs::{ObsSpace, Observation};
use crate::error::{Error, Result};
use crate::numerics::{DenseVector, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyFamily {
    Tabular,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyArch {
    pub family: PolicyFamily,
    pub n_agents: usize,
    pub obs_space: ObsSpace,
    pub action_count: usize,
    /// Backbone width (ignored by the tabular family).
    pub hidden: usize,
}

impl PolicyArch {
    pub fn new(
        family: PolicyFamily,
        n_agents: usize,
        obs_space: ObsSpace,
        action_count: usize,
        hidden: usize,
    ) -> Result<Self> {
        if n_agents == 0 || action_count == 0 || obs_space.input_dim() == 0 {
            return Err(Error::InvalidArgument(
                "a policy needs at least one agent, action and observation".into(),
            ));
        }
        if family == PolicyFamily::Tabular && !matches!(obs_space, ObsSpace::Discrete(_)) {
            return Err(Error::InvalidArgument(
                "tabular policies need a discrete observation space".into(),
            ));
        }
        if family == PolicyFamily::Mlp && hidden == 0 {
            return Err(Error::InvalidArgument(
                "mlp backbone width must be positive".into(),
            ));
        }
        Ok(PolicyArch {
            family,
            n_agents,
            obs_space,
            action_count,
            hidden,
        })
    }

    pub fn layout(&self) -> Layout {
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut push = |role, shape: Vec<usize>| {
            let len: usize = shape.iter().product();
            blocks.push(Block {
                role,
                shape,
                offset,
            });
            offset += len;
        };
        match self.family {
            PolicyFamily::Tabular => {
                for agent in 0..self.n_agents {
                    push(
                        BlockRole::Head(agent),
                        vec![self.obs_space.input_dim(), self.action_count],
                    );
                }
            }
            PolicyFamily::Mlp => {
                push(
                    BlockRole::Backbone,
                    vec![self.hidden, self.obs_space.input_dim() + 1],
                );
                for agent in 0..self.n_agents {
                    push(
                        BlockRole::Head(agent),
                        vec![self.action_count, self.hidden + 1],
                    );
                }
            }
        }
        Layout { blocks }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockRole {
    Backbone,
    Head(usize),
}

/// One contiguous parameter block. Matrices are row-major, with the bias as
/// the last column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub role: BlockRole,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Maps every parameter block onto a range of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    blocks: Vec<Block>,
}

impl Layout {
    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn total_len(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.offset + b.len())
    }

    pub fn backbone_range(&self) -> Range<usize> {
        self.blocks
            .iter()
            .find(|b| b.role == BlockRole::Backbone)
            .map_or(0..0, Block::range)
    }

    pub fn head_range(&self, agent: usize) -> Range<usize> {
        self.blocks
            .iter()
            .find(|b| b.role == BlockRole::Head(agent))
            .map_or(0..0, Block::range)
    }

    pub fn head_len(&self) -> usize {
        self.head_range(0).len()
    }

    pub fn backbone_len(&self) -> usize {
        self.backbone_range().len()
    }
}

/// A categorical distribution over one agent's actions.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    probabilities: Vec<f64>,
}

impl ActionDistribution {
    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn log_prob(&self, action: usize) -> f64 {
        self.probabilities[action].ln()
    }

    pub fn argmax(&self) -> usize {
        let p = &self.probabilities;
        (0..p.len()).fold(0, |best, i| if p[i] > p[best] { i } else { best })
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Gradient of a per-agent quantity, split into the agent's own head block
/// and the shared backbone block.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentGradient {
    pub head: DenseVector,
    pub backbone: DenseVector,
}

impl AgentGradient {
    pub fn zeros(layout: &Layout) -> Self {
        AgentGradient {
            head: DenseVector::zeros(layout.head_len()),
            backbone: DenseVector::zeros(layout.backbone_len()),
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.head
            .as_mut_slice()
            .iter_mut()
            .for_each(|x| *x *= alpha);
        self.backbone
            .as_mut_slice()
            .iter_mut()
            .for_each(|x| *x *= alpha);
    }

    pub fn is_finite(&self) -> bool {
        self.head.is_finite() && self.backbone.is_finite()
    }

    /// Backbone coordinates followed by head coordinates.
    pub fn flatten(&self) -> Vec<f64> {
        self.backbone
            .iter()
            .chain(self.head.iter())
            .copied()
            .collect()
    }
}

/// One agent's action at one time step, with its log-probability under the
/// policy that sampled it.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledStep {
    pub agent: usize,
    pub time: usize,
    pub observation: Observation,
    pub action: usize,
    pub log_prob: f64,
}

/// Joint policy parameters: an optional shared backbone and one head per
/// agent, stored in a single flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    arch: PolicyArch,
    layout: Layout,
    flat: Vec<f64>,
}

/// Forward-pass intermediates for one observation.
struct Forward {
    input: Vec<f64>,
    hidden: Vec<f64>,
    probabilities: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(arch: PolicyArch) -> Self {
        let layout = arch.layout();
        let flat = vec![0.0; layout.total_len()];
        PolicyParams { arch, layout, flat }
    }

    /// Tabular logits start at zero (uniform policies); network weights are
    /// uniform in `[-0.1, 0.1]`.
    pub fn init(arch: PolicyArch, rng: &mut RngStream) -> Self {
        let mut params = Self::zeros(arch);
        if arch.family == PolicyFamily::Mlp {
            params
                .flat
                .iter_mut()
                .for_each(|x| *x = rng.uniform(-0.1, 0.1));
        }
        params
    }

    pub fn from_flat(arch: PolicyArch, flat: Vec<f64>) -> Result<Self> {
        let layout = arch.layout();
        if flat.len() != layout.total_len() {
            return Err(Error::DimensionMismatch {
                context: "policy parameters",
                index: 0,
                expected: layout.total_len(),
                found: flat.len(),
            });
        }
        Ok(PolicyParams { arch, layout, flat })
    }

    /// Reassembles parameters from per-block vectors in layout order.
    pub fn from_blocks(arch: PolicyArch, blocks: Vec<Vec<f64>>) -> Result<Self> {
        let layout = arch.layout();
        if blocks.len() != layout.blocks().len() {
            return Err(Error::DimensionMismatch {
                context: "policy block count",
                index: 0,
                expected: layout.blocks().len(),
                found: blocks.len(),
            });
        }
        for (index, (block, spec)) in blocks.iter().zip(layout.blocks()).enumerate() {
            if block.len() != spec.len() {
                return Err(Error::DimensionMismatch {
                    context: "policy block",
                    index,
                    expected: spec.len(),
                    found: block.len(),
                });
            }
        }
        Self::from_flat(arch, blocks.concat())
    }

    pub fn blocks(&self) -> Vec<Vec<f64>> {
        self.layout
            .blocks()
            .iter()
            .map(|b| self.flat[b.range()].to_vec())
            .collect()
    }

    pub fn arch(&self) -> &PolicyArch {
        &self.arch
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn head(&self, agent: usize) -> &[f64] {
        &self.flat[self.layout.head_range(agent)]
    }

    pub fn head_mut(&mut self, agent: usize) -> &mut [f64] {
        let range = self.layout.head_range(agent);
        &mut self.flat[range]
    }

    pub fn backbone(&self) -> &[f64] {
        &self.flat[self.layout.backbone_range()]
    }

    fn check_agent(&self, agent: usize) -> Result<()> {
        if agent >= self.arch.n_agents {
            return Err(Error::InvalidArgument(format!(
                "agent {agent} out of range ({} agents)",
                self.arch.n_agents
            )));
        }
        Ok(())
    }

    fn encode(&self, obs: &Observation) -> Result<Vec<f64>> {
        let invalid = || Error::InvalidObservation {
            context: "policy input",
            observation: obs.describe(),
        };
        match (obs, self.arch.obs_space) {
            (Observation::Discrete(i), ObsSpace::Discrete(n)) if *i < n => {
                let mut x = vec![0.0; n];
                x[*i] = 1.0;
                Ok(x)
            }
            (Observation::Features(v), ObsSpace::Features(n)) if v.len() == n => Ok(v.clone()),
            _ => Err(invalid()),
        }
    }

    fn forward(&self, obs: &Observation, agent: usize) -> Result<Forward> {
        self.check_agent(agent)?;
        let actions = self.arch.action_count;
        match self.arch.family {
            PolicyFamily::Tabular => {
                let row = match obs {
                    Observation::Discrete(i) if *i < self.arch.obs_space.input_dim() => *i,
                    _ => {
                        return Err(Error::InvalidObservation {
                            context: "tabular policy",
                            observation: obs.describe(),
                        })
                    }
                };
                let logits = &self.head(agent)[row * actions..(row + 1) * actions];
                Ok(Forward {
                    input: Vec::new(),
                    hidden: Vec::new(),
                    probabilities: softmax(logits),
                })
            }
            PolicyFamily::Mlp => {
                let input = self.encode(obs)?;
                let width = input.len() + 1;
                let backbone = self.backbone();
                let hidden: Vec<f64> = backbone
                    .chunks(width)
                    .map(|w| {
                        let pre: f64 = w[..input.len()]
                            .iter()
                            .zip(&input)
                            .map(|(a, b)| a * b)
                            .sum();
                        (pre + w[input.len()]).tanh()
                    })
                    .collect();
                let head_width = hidden.len() + 1;
                let logits: Vec<f64> = self
                    .head(agent)
                    .chunks(head_width)
                    .map(|w| {
                        w[..hidden.len()]
                            .iter()
                            .zip(&hidden)
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            + w[hidden.len()]
                    })
                    .collect();
                Ok(Forward {
                    input,
                    hidden,
                    probabilities: softmax(&logits),
                })
            }
        }
    }

    pub fn action_distribution(
        &self,
        obs: &Observation,
        agent: usize,
    ) -> Result<ActionDistribution> {
        Ok(ActionDistribution {
            probabilities: self.forward(obs, agent)?.probabilities,
        })
    }

    pub fn log_prob(&self, obs: &Observation, action: usize, agent: usize) -> Result<f64> {
        self.check_action(agent, action)?;
        Ok(self.action_distribution(obs, agent)?.log_prob(action))
    }

    fn check_action(&self, agent: usize, action: usize) -> Result<()> {
        if action >= self.arch.action_count {
            return Err(Error::InvalidAction {
                agent,
                action,
                count: self.arch.action_count,
            });
        }
        Ok(())
    }

    /// Samples an action and returns it with its log-probability.
    pub fn act(
        &self,
        obs: &Observation,
        agent: usize,
        rng: &mut RngStream,
    ) -> Result<(usize, f64)> {
        let dist = self.action_distribution(obs, agent)?;
        let action = rng.categorical(dist.probabilities());
        Ok((action, dist.log_prob(action)))
    }

    /// `∇ log π(action | obs)` for one agent.
    pub fn logprob_grad(
        &self,
        obs: &Observation,
        action: usize,
        agent: usize,
    ) -> Result<AgentGradient> {
        let mut grad = AgentGradient::zeros(&self.layout);
        self.accumulate_score(obs, action, agent, 1.0, &mut grad)?;
        Ok(grad)
    }

    /// Adds `weight · ∇ log π(action | obs)` into `grad` and returns
    /// `log π(action | obs)`.
    pub fn accumulate_score(
        &self,
        obs: &Observation,
        action: usize,
        agent: usize,
        weight: f64,
        grad: &mut AgentGradient,
    ) -> Result<f64> {
        self.check_action(agent, action)?;
        let fwd = self.forward(obs, agent)?;
        let log_prob = fwd.probabilities[action].ln();
        if weight == 0.0 {
            return Ok(log_prob);
        }
        // d log softmax / d logits = onehot(action) - π
        let dlogits: Vec<f64> = fwd
            .probabilities
            .iter()
            .enumerate()
            .map(|(a, p)| weight * ((a == action) as u8 as f64 - p))
            .collect();
        let actions = self.arch.action_count;
        match self.arch.family {
            PolicyFamily::Tabular => {
                let row = match obs {
                    Observation::Discrete(i) => *i,
                    Observation::Features(_) => unreachable!("validated by forward"),
                };
                let head = grad.head.as_mut_slice();
                for (g, d) in head[row * actions..(row + 1) * actions]
                    .iter_mut()
                    .zip(&dlogits)
                {
                    *g += d;
                }
            }
            PolicyFamily::Mlp => {
                let hidden = &fwd.hidden;
                let head_width = hidden.len() + 1;
                let head_params = self.head(agent);
                let head = grad.head.as_mut_slice();
                let mut dhidden = vec![0.0; hidden.len()];
                for (a, &d) in dlogits.iter().enumerate() {
                    let row = &mut head[a * head_width..(a + 1) * head_width];
                    for (k, h) in hidden.iter().enumerate() {
                        row[k] += d * h;
                        dhidden[k] += d * head_params[a * head_width + k];
                    }
                    row[hidden.len()] += d;
                }
                let input = &fwd.input;
                let width = input.len() + 1;
                let backbone = grad.backbone.as_mut_slice();
                for (k, h) in hidden.iter().enumerate() {
                    let dpre = dhidden[k] * (1.0 - h * h);
                    let row = &mut backbone[k * width..(k + 1) * width];
                    for (j, x) in input.iter().enumerate() {
                        row[j] += dpre * x;
                    }
                    row[input.len()] += dpre;
                }
            }
        }
        Ok(log_prob)
    }
}

fn check_batch(steps: &[SampledStep], advantages: &[f64], agent: usize) -> Result<()> {
    if steps.is_empty() {
        return Err(Error::Empty("policy-gradient batch"));
    }
    if steps.len() != advantages.len() {
        return Err(Error::DimensionMismatch {
            context: "advantages vs sampled steps",
            index: 0,
            expected: steps.len(),
            found: advantages.len(),
        });
    }
    if let Some(step) = steps.iter().find(|s| s.agent != agent) {
        return Err(Error::InvalidArgument(format!(
            "step at time {} belongs to agent {}, expected agent {agent}",
            step.time, step.agent
        )));
    }
    Ok(())
}

/// Monte-Carlo policy gradient `mean_t[∇ log π(a_t | o_t) · Â_t]` for one
/// agent. The head part is what the consensus operator consumes.
pub fn local_policy_gradient(
    steps: &[SampledStep],
    advantages: &[f64],
    agent: usize,
    params: &PolicyParams,
) -> Result<AgentGradient> {
    check_batch(steps, advantages, agent)?;
    let mut grad = AgentGradient::zeros(params.layout());
    for (step, &adv) in steps.iter().zip(advantages) {
        params.accumulate_score(&step.observation, step.action, agent, adv, &mut grad)?;
    }
    grad.scale(1.0 / steps.len() as f64);
    Ok(grad)
}

/// `mean_t[log π(a_t | o_t) · Â_t]`, whose gradient is
/// [`local_policy_gradient`].
pub fn score_surrogate(
    steps: &[SampledStep],
    advantages: &[f64],
    agent: usize,
    params: &PolicyParams,
) -> Result<f64> {
    check_batch(steps, advantages, agent)?;
    let mut total = 0.0;
    for (step, &adv) in steps.iter().zip(advantages) {
        total += params.log_prob(&step.observation, step.action, agent)? * adv;
    }
    Ok(total / steps.len() as f64)
}

/// Largest relative discrepancy between [`local_policy_gradient`] and central
/// differences of [`score_surrogate`] over the agent's head and the backbone.
///
/// Relative error is `|a - b| / max(|a|, |b|, 1e-4)`; the floor keeps
/// coordinates whose true derivative is zero from dividing round-off by zero.
pub fn finite_difference_check(
    params: &PolicyParams,
    steps: &[SampledStep],
    advantages: &[f64],
    agent: usize,
    h: f64,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(
            "finite-difference step must be positive".into(),
        ));
    }
    let analytic = local_policy_gradient(steps, advantages, agent, params)?;
    let layout = params.layout();
    let coords = layout
        .backbone_range()
        .zip(analytic.backbone.iter().copied())
        .chain(layout.head_range(agent).zip(analytic.head.iter().copied()));
    let mut probe = params.clone();
    let mut worst = 0.0_f64;
    for (index, exact) in coords {
        let original = probe.flat[index];
        probe.flat[index] = original + h;
        let plus = score_surrogate(steps, advantages, agent, &probe)?;
        probe.flat[index] = original - h;
        let minus = score_surrogate(steps, advantages, agent, &probe)?;
        probe.flat[index] = original;
        let numeric = (plus - minus) / (2.0 * h);
        let err = (exact - numeric).abs() / exact.abs().max(numeric.abs()).max(1e-4);
        worst = worst.max(err);
    }
    Ok(worst)
}

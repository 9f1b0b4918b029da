use std::collections::BTreeMap;

use super::{EnvSpec, Environment, ObsSpace, Observation, StepResult};
use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// Dense N-dimensional payoff table indexed by joint action.
#[derive(Debug, Clone, PartialEq)]
pub struct PayoffTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl PayoffTensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "payoff shape {shape:?} has an empty axis"
            )));
        }
        let expected: usize = shape.iter().product();
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                context: "payoff tensor values",
                index: 0,
                expected,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("payoff tensor".into()));
        }
        Ok(PayoffTensor { shape, values })
    }

    /// Parses a nested JSON array such as `[[1, 0], [0, 1]]`.
    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        fn walk(
            v: &serde_json::Value,
            depth: usize,
            shape: &mut Vec<usize>,
            out: &mut Vec<f64>,
        ) -> Result<()> {
            match v {
                serde_json::Value::Array(items) => {
                    if shape.len() == depth {
                        shape.push(items.len());
                    } else if shape[depth] != items.len() {
                        return Err(Error::InvalidArgument("payoff array is ragged".into()));
                    }
                    for item in items {
                        walk(item, depth + 1, shape, out)?;
                    }
                    Ok(())
                }
                serde_json::Value::Number(n) => {
                    if depth != shape.len() {
                        return Err(Error::InvalidArgument("payoff array is ragged".into()));
                    }
                    out.push(n.as_f64().unwrap_or(f64::NAN));
                    Ok(())
                }
                _ => Err(Error::InvalidArgument(
                    "payoff entries must be numbers".into(),
                )),
            }
        }
        let mut shape = Vec::new();
        let mut values = Vec::new();
        walk(value, 0, &mut shape, &mut values)?;
        Self::new(shape, values)
    }

    pub fn to_json(&self) -> serde_json::Value {
        fn build(shape: &[usize], values: &[f64]) -> serde_json::Value {
            if shape.len() == 1 {
                return serde_json::Value::from(values.to_vec());
            }
            let stride = values.len() / shape[0];
            serde_json::Value::Array(
                values
                    .chunks(stride)
                    .map(|chunk| build(&shape[1..], chunk))
                    .collect(),
            )
        }
        build(&self.shape, &self.values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_agents(&self) -> usize {
        self.shape.len()
    }

    /// Row-major lookup of `payoff[a_1][a_2]...[a_N]`.
    pub fn get(&self, joint: &[usize]) -> Result<f64> {
        if joint.len() != self.shape.len() {
            return Err(Error::DimensionMismatch {
                context: "joint action",
                index: 0,
                expected: self.shape.len(),
                found: joint.len(),
            });
        }
        let mut offset = 0;
        for (agent, (&a, &size)) in joint.iter().zip(&self.shape).enumerate() {
            if a >= size {
                return Err(Error::InvalidAction {
                    agent,
                    action: a,
                    count: size,
                });
            }
            offset = offset * size + a;
        }
        Ok(self.values[offset])
    }

    /// The joint action with the largest payoff (first in row-major order on
    /// ties).
    pub fn best_joint_action(&self) -> Vec<usize> {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        let mut joint = vec![0; self.shape.len()];
        for axis in (0..self.shape.len()).rev() {
            joint[axis] = best % self.shape[axis];
            best /= self.shape[axis];
        }
        joint
    }
}

/// The three-action climb game, scaled by 0.1.
pub fn climb_payoff() -> PayoffTensor {
    let rows = [[11.0, -30.0, 0.0], [-30.0, 7.0, 6.0], [0.0, 0.0, 5.0]];
    let values = rows.iter().flatten().map(|v| 0.1 * v).collect();
    PayoffTensor::new(vec![3, 3], values).expect("climb payoff is well formed")
}

/// A repeated one-shot matrix game. Every agent observes the same dummy
/// observation; the critic sees the step index.
#[derive(Debug, Clone)]
pub struct MatrixGame {
    payoff: PayoffTensor,
    spec: EnvSpec,
    t: usize,
}

impl MatrixGame {
    pub fn new(payoff: PayoffTensor, episode_len: usize) -> Result<Self> {
        let actions = payoff.shape()[0];
        if payoff.shape().iter().any(|&s| s != actions) {
            return Err(Error::InvalidArgument(format!(
                "agents must share one action space, payoff shape is {:?}",
                payoff.shape()
            )));
        }
        if episode_len == 0 {
            return Err(Error::InvalidArgument(
                "episode length must be at least 1".into(),
            ));
        }
        let spec = EnvSpec {
            n_agents: payoff.n_agents(),
            obs_space: ObsSpace::Discrete(1),
            action_count: actions,
            state_space: ObsSpace::Discrete(episode_len),
            max_episode_len: episode_len,
        };
        Ok(MatrixGame { payoff, spec, t: 0 })
    }

    pub fn payoff(&self) -> &PayoffTensor {
        &self.payoff
    }

    /// Mean payoff when every agent plays uniformly at random.
    pub fn uniform_play_mean(&self) -> f64 {
        self.payoff.values().iter().sum::<f64>() / self.payoff.values().len() as f64
    }

    fn observations(&self) -> Vec<Observation> {
        vec![Observation::Discrete(0); self.spec.n_agents]
    }
}

impl Environment for MatrixGame {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _rng: &mut RngStream) -> Vec<Observation> {
        self.t = 0;
        self.observations()
    }

    fn global_state(&self) -> Observation {
        Observation::Discrete(self.t)
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepResult> {
        if self.t >= self.spec.max_episode_len {
            return Err(Error::InvalidArgument(
                "step called on a finished episode".into(),
            ));
        }
        let reward = self.payoff.get(actions)?;
        self.t += 1;
        Ok(StepResult {
            observations: self.observations(),
            reward,
            terminal: self.t >= self.spec.max_episode_len,
            info: BTreeMap::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn climb_lookup_and_terminal() {
        let mut game = MatrixGame::new(climb_payoff(), 3).unwrap();
        let mut rng = RngStream::new(0, 0);
        assert_eq!(game.reset(&mut rng), vec![Observation::Discrete(0); 2]);
        let r = game.step(&[0, 0]).unwrap();
        assert!((r.reward - 1.1).abs() < 1e-12);
        assert!(!r.terminal);
        assert!(!game.step(&[1, 2]).unwrap().terminal);
        assert!(game.step(&[2, 2]).unwrap().terminal);
        assert!(game.step(&[2, 2]).is_err());
        assert_eq!(climb_payoff().best_joint_action(), vec![0, 0]);
    }

    #[test]
    fn three_agent_lookup() {
        let values: Vec<f64> = (0..27).map(|v| v as f64).collect();
        let payoff = PayoffTensor::new(vec![3, 3, 3], values).unwrap();
        let mut game = MatrixGame::new(payoff.clone(), 1).unwrap();
        game.reset(&mut RngStream::new(0, 0));
        let r = game.step(&[1, 0, 2]).unwrap();
        assert_eq!(r.reward, (9 + 2) as f64);
        assert_eq!(r.reward, payoff.get(&[1, 0, 2]).unwrap());
    }

    #[test]
    fn rejects_out_of_range_and_heterogeneous() {
        let mut game = MatrixGame::new(climb_payoff(), 1).unwrap();
        game.reset(&mut RngStream::new(0, 0));
        assert!(matches!(
            game.step(&[3, 0]),
            Err(Error::InvalidAction { agent: 0, .. })
        ));
        let uneven = PayoffTensor::new(vec![2, 3], vec![0.0; 6]).unwrap();
        assert!(MatrixGame::new(uneven, 1).is_err());
    }

    #[test]
    fn json_round_trip() {
        let json = serde_json::json!([[1.0, 2.0], [3.0, 4.0]]);
        let payoff = PayoffTensor::from_json(&json).unwrap();
        assert_eq!(payoff.shape(), &[2, 2]);
        assert_eq!(payoff.get(&[1, 0]).unwrap(), 3.0);
        assert_eq!(payoff.to_json(), json);
        assert!(PayoffTensor::from_json(&serde_json::json!([[1.0], [2.0, 3.0]])).is_err());
    }
}

//! Run configuration: strict JSON parsing, defaults and validation.
//!
//! Every key is optional except `env`. Unknown keys are rejected. Defaults
//! that depend on the environment (policy family, episode length, learning
//! rate, optimizer, iterations) are resolved here, and [`RunConfig::to_json`]
//! writes every resolved value back so that re-parsing the echo reproduces the
//! same configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::consensus::QpMethod;
use crate::envs::{climb_payoff, PayoffTensor};
use crate::error::{Error, Result};
use crate::optim::OptimizerKind;
use crate::policy::PolicyFamily;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    /// Two-agent climb game.
    MatrixClimb,
    /// Matrix game with a payoff tensor given inline.
    Matrix,
    GridSpread,
    TeamQuadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Grasp,
    MappoBaseline,
    GraspAligned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricsFormat {
    Csv,
    Jsonl,
}

/// Environment selection with its resolved parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub kind: EnvKind,
    /// Present for the matrix environments.
    pub payoff: Option<PayoffTensor>,
    pub n_agents: usize,
    pub episode_length: usize,
    pub grid_width: usize,
    pub collision_penalty: f64,
    pub block_dim: usize,
}

/// Everything that determines a training run's numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub env: EnvConfig,
    pub mode: Mode,
    pub seed: u64,
    pub policy: PolicyFamily,
    pub hidden_width: usize,
    pub learning_rate: f64,
    pub critic_learning_rate: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub critic_clip_epsilon: f64,
    pub ppo_epochs: usize,
    pub minibatches: usize,
    pub episodes_per_iteration: usize,
    pub iterations: usize,
    pub consensus_tol: f64,
    pub consensus_max_iter: usize,
    pub consensus_coefficient: f64,
    pub qp_method: QpMethod,
    pub optimizer: OptimizerKind,
    pub advantage_normalization: bool,
    pub rollout_workers: usize,
}

/// A [`TrainConfig`] plus output settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub output_dir: PathBuf,
    pub metrics_format: MetricsFormat,
    /// Write a policy checkpoint every this many iterations (0: final only).
    pub checkpoint_interval: usize,
    pub verbosity: u8,
    /// Record real elapsed time in `wall_ms`; off keeps metrics byte-stable.
    pub record_wall_time: bool,
}

/// The on-disk document. Every field mirrors a key of the JSON schema.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    env: Option<EnvKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<Mode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    payoff: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_agents: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    episode_length: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid_width: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    collision_penalty: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    block_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    policy: Option<PolicyFamily>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hidden_width: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    critic_learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gae_lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    clip_epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    critic_clip_epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ppo_epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    minibatches: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    episodes_per_iteration: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    consensus_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    consensus_max_iter: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    consensus_coefficient: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    qp_method: Option<QpMethod>,
    #[serde(skip_serializing_if = "Option::is_none")]
    optimizer: Option<OptimizerKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    advantage_normalization: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rollout_workers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    output_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics_format: Option<MetricsFormat>,
    #[serde(skip_serializing_if = "Option::is_none")]
    checkpoint_interval: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    verbosity: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    record_wall_time: Option<bool>,
}

fn positive(key: &str, value: f64) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(Error::config(
            key,
            format!("{key} must be a positive finite number, got {value}"),
        ))
    }
}

fn at_least_one(key: &str, value: usize) -> Result<usize> {
    if value >= 1 {
        Ok(value)
    } else {
        Err(Error::config(key, format!("{key} must be at least 1")))
    }
}

/// Serde messages look like "unknown field `gama`, expected one of ..." or
/// "unknown variant `foo`, expected ...". Pull out the offending key when the
/// message names it.
fn key_of(message: &str) -> String {
    if let Some(rest) = message.strip_prefix("unknown field `") {
        if let Some(end) = rest.find('`') {
            return rest[..end].to_string();
        }
    }
    "<document>".to_string()
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| {
            let message = e.to_string();
            Error::config(key_of(&message), message)
        })?;
        Self::resolve(raw)
    }

    /// Applies `train --seed` and `train --out` overrides.
    pub fn with_overrides(mut self, seed: Option<u64>, out: Option<PathBuf>) -> Self {
        if let Some(seed) = seed {
            self.train.seed = seed;
        }
        if let Some(out) = out {
            self.output_dir = out;
        }
        self
    }

    fn resolve(raw: RawConfig) -> Result<Self> {
        let kind = raw
            .env
            .ok_or_else(|| Error::config("env", "missing required key `env`"))?;
        let quadratic = kind == EnvKind::TeamQuadratic;

        let payoff = match (kind, &raw.payoff) {
            (EnvKind::MatrixClimb, None) => Some(climb_payoff()),
            (EnvKind::MatrixClimb, Some(_)) => {
                return Err(Error::config(
                    "payoff",
                    "matrix_climb has a fixed payoff; use env \"matrix\"",
                ))
            }
            (EnvKind::Matrix, Some(value)) => {
                let tensor = PayoffTensor::from_json(value)
                    .map_err(|e| Error::config("payoff", e.to_string()))?;
                if tensor.shape().iter().any(|&s| s != tensor.shape()[0]) {
                    return Err(Error::config(
                        "payoff",
                        format!(
                            "agents must share one action space, payoff shape is {:?}",
                            tensor.shape()
                        ),
                    ));
                }
                Some(tensor)
            }
            (EnvKind::Matrix, None) => {
                return Err(Error::config(
                    "payoff",
                    "env \"matrix\" requires a payoff tensor",
                ))
            }
            (_, Some(_)) => {
                return Err(Error::config(
                    "payoff",
                    "payoff only applies to matrix environments",
                ))
            }
            (_, None) => None,
        };

        let n_agents = match &payoff {
            Some(tensor) => {
                if let Some(n) = raw.n_agents {
                    if n != tensor.n_agents() {
                        return Err(Error::config(
                            "n_agents",
                            format!(
                                "n_agents is {n} but the payoff tensor has {} axes",
                                tensor.n_agents()
                            ),
                        ));
                    }
                }
                tensor.n_agents()
            }
            None => at_least_one("n_agents", raw.n_agents.unwrap_or(3))?,
        };

        let default_episode = match kind {
            EnvKind::GridSpread => 25,
            _ => 1,
        };
        let grid_width = at_least_one("grid_width", raw.grid_width.unwrap_or(5))?;
        if kind == EnvKind::GridSpread && n_agents > grid_width * grid_width {
            return Err(Error::config(
                "n_agents",
                format!("{n_agents} landmarks do not fit on a {grid_width}x{grid_width} grid"),
            ));
        }
        let collision_penalty = raw.collision_penalty.unwrap_or(1.0);
        if !(collision_penalty >= 0.0 && collision_penalty.is_finite()) {
            return Err(Error::config(
                "collision_penalty",
                "collision_penalty must be a nonnegative finite number",
            ));
        }
        let env = EnvConfig {
            kind,
            payoff,
            n_agents,
            episode_length: at_least_one(
                "episode_length",
                raw.episode_length.unwrap_or(default_episode),
            )?,
            grid_width,
            collision_penalty,
            block_dim: at_least_one("block_dim", raw.block_dim.unwrap_or(4))?,
        };

        let policy = raw.policy.unwrap_or(match kind {
            EnvKind::GridSpread => PolicyFamily::Mlp,
            _ => PolicyFamily::Tabular,
        });
        if kind == EnvKind::GridSpread && policy == PolicyFamily::Tabular {
            return Err(Error::config(
                "policy",
                "grid_spread observations are continuous; use policy \"mlp\"",
            ));
        }

        let gamma = raw.gamma.unwrap_or(0.99);
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::config("gamma", "gamma must lie in [0,1)"));
        }
        let gae_lambda = raw.gae_lambda.unwrap_or(0.95);
        if !(0.0..=1.0).contains(&gae_lambda) {
            return Err(Error::config("gae_lambda", "gae_lambda must lie in [0,1]"));
        }
        let consensus_coefficient = raw.consensus_coefficient.unwrap_or(1.0);
        if !(consensus_coefficient >= 0.0 && consensus_coefficient.is_finite()) {
            return Err(Error::config(
                "consensus_coefficient",
                "consensus_coefficient must be a nonnegative finite number",
            ));
        }

        let train = TrainConfig {
            env,
            mode: raw.mode.unwrap_or(Mode::Grasp),
            seed: raw.seed.unwrap_or(0),
            policy,
            hidden_width: at_least_one("hidden_width", raw.hidden_width.unwrap_or(16))?,
            learning_rate: positive(
                "learning_rate",
                raw.learning_rate
                    .unwrap_or(if quadratic { 0.1 } else { 5e-4 }),
            )?,
            critic_learning_rate: positive(
                "critic_learning_rate",
                raw.critic_learning_rate.unwrap_or(5e-4),
            )?,
            gamma,
            gae_lambda,
            clip_epsilon: positive("clip_epsilon", raw.clip_epsilon.unwrap_or(0.2))?,
            critic_clip_epsilon: positive(
                "critic_clip_epsilon",
                raw.critic_clip_epsilon.unwrap_or(0.2),
            )?,
            ppo_epochs: at_least_one("ppo_epochs", raw.ppo_epochs.unwrap_or(5))?,
            minibatches: at_least_one("minibatches", raw.minibatches.unwrap_or(1))?,
            episodes_per_iteration: at_least_one(
                "episodes_per_iteration",
                raw.episodes_per_iteration.unwrap_or(64),
            )?,
            iterations: raw
                .iterations
                .unwrap_or(if quadratic { 2000 } else { 1000 }),
            consensus_tol: positive("consensus_tol", raw.consensus_tol.unwrap_or(1e-12))?,
            consensus_max_iter: at_least_one(
                "consensus_max_iter",
                raw.consensus_max_iter.unwrap_or(10_000),
            )?,
            consensus_coefficient,
            qp_method: raw.qp_method.unwrap_or_default(),
            optimizer: raw.optimizer.unwrap_or(if quadratic {
                OptimizerKind::Plain
            } else {
                OptimizerKind::Adam
            }),
            advantage_normalization: raw.advantage_normalization.unwrap_or(false),
            rollout_workers: at_least_one("rollout_workers", raw.rollout_workers.unwrap_or(1))?,
        };

        Ok(RunConfig {
            train,
            output_dir: raw
                .output_dir
                .unwrap_or_else(|| PathBuf::from("runs/latest")),
            metrics_format: raw.metrics_format.unwrap_or(MetricsFormat::Csv),
            checkpoint_interval: raw.checkpoint_interval.unwrap_or(0),
            verbosity: raw.verbosity.unwrap_or(1),
            record_wall_time: raw.record_wall_time.unwrap_or(false),
        })
    }

    /// The fully resolved configuration as a JSON document.
    pub fn to_json(&self) -> serde_json::Value {
        let t = &self.train;
        let payoff = match t.env.kind {
            EnvKind::Matrix => t.env.payoff.as_ref().map(PayoffTensor::to_json),
            _ => None,
        };
        let raw = RawConfig {
            env: Some(t.env.kind),
            mode: Some(t.mode),
            seed: Some(t.seed),
            payoff,
            n_agents: Some(t.env.n_agents),
            episode_length: Some(t.env.episode_length),
            grid_width: Some(t.env.grid_width),
            collision_penalty: Some(t.env.collision_penalty),
            block_dim: Some(t.env.block_dim),
            policy: Some(t.policy),
            hidden_width: Some(t.hidden_width),
            learning_rate: Some(t.learning_rate),
            critic_learning_rate: Some(t.critic_learning_rate),
            gamma: Some(t.gamma),
            gae_lambda: Some(t.gae_lambda),
            clip_epsilon: Some(t.clip_epsilon),
            critic_clip_epsilon: Some(t.critic_clip_epsilon),
            ppo_epochs: Some(t.ppo_epochs),
            minibatches: Some(t.minibatches),
            episodes_per_iteration: Some(t.episodes_per_iteration),
            iterations: Some(t.iterations),
            consensus_tol: Some(t.consensus_tol),
            consensus_max_iter: Some(t.consensus_max_iter),
            consensus_coefficient: Some(t.consensus_coefficient),
            qp_method: Some(t.qp_method),
            optimizer: Some(t.optimizer),
            advantage_normalization: Some(t.advantage_normalization),
            rollout_workers: Some(t.rollout_workers),
            output_dir: Some(self.output_dir.clone()),
            metrics_format: Some(self.metrics_format),
            checkpoint_interval: Some(self.checkpoint_interval),
            verbosity: Some(self.verbosity),
            record_wall_time: Some(self.record_wall_time),
        };
        serde_json::to_value(raw).expect("config serializes")
    }
}

/// Reads and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|source| Error::MissingFile {
        path: path.to_path_buf(),
        source,
    })?;
    RunConfig::from_json_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        RunConfig::from_json_str(text)
    }

    fn key(err: Error) -> String {
        match err {
            Error::Config { key, .. } => key,
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let c = parse(r#"{"env": "matrix_climb", "mode": "grasp", "seed": 1}"#).unwrap();
        let t = &c.train;
        assert_eq!(t.learning_rate, 5e-4);
        assert_eq!(t.gamma, 0.99);
        assert_eq!(t.ppo_epochs, 5);
        assert_eq!(t.gae_lambda, 0.95);
        assert_eq!(t.clip_epsilon, 0.2);
        assert_eq!(t.minibatches, 1);
        assert_eq!(t.episodes_per_iteration, 64);
        assert_eq!(t.consensus_coefficient, 1.0);
        assert_eq!(t.optimizer, OptimizerKind::Adam);
        assert_eq!(t.policy, PolicyFamily::Tabular);
        assert_eq!(t.env.n_agents, 2);
        assert_eq!(t.seed, 1);
        assert!(!t.advantage_normalization);
    }

    #[test]
    fn env_dependent_defaults() {
        let q = parse(r#"{"env": "team_quadratic"}"#).unwrap().train;
        assert_eq!(
            (q.learning_rate, q.optimizer, q.iterations),
            (0.1, OptimizerKind::Plain, 2000)
        );
        assert_eq!((q.env.n_agents, q.env.block_dim), (3, 4));
        let g = parse(r#"{"env": "grid_spread"}"#).unwrap().train;
        assert_eq!(
            (g.policy, g.env.episode_length, g.env.grid_width),
            (PolicyFamily::Mlp, 25, 5)
        );
    }

    #[test]
    fn validation_names_the_key() {
        let err = parse(r#"{"env": "matrix_climb", "gamma": 1.5}"#).unwrap_err();
        assert!(err.to_string().contains("gamma must lie in [0,1)"), "{err}");
        assert_eq!(key(err), "gamma");
        assert_eq!(
            key(parse(r#"{"env": "matrix_climb", "gama": 0.5}"#).unwrap_err()),
            "gama"
        );
        assert_eq!(key(parse(r#"{"mode": "grasp"}"#).unwrap_err()), "env");
        assert_eq!(
            key(parse(r#"{"env": "matrix_climb", "ppo_epochs": 0}"#).unwrap_err()),
            "ppo_epochs"
        );
        assert_eq!(
            key(parse(r#"{"env": "matrix_climb", "learning_rate": -1}"#).unwrap_err()),
            "learning_rate"
        );
        assert_eq!(
            key(parse(r#"{"env": "grid_spread", "policy": "tabular"}"#).unwrap_err()),
            "policy"
        );
        assert!(parse("{not json").is_err());
    }

    #[test]
    fn heterogeneous_payoff_rejected() {
        let err = parse(r#"{"env": "matrix", "payoff": [[1, 2, 3], [4, 5, 6]]}"#).unwrap_err();
        assert_eq!(key(err), "payoff");
        assert_eq!(key(parse(r#"{"env": "matrix"}"#).unwrap_err()), "payoff");
        let ok =
            parse(r#"{"env": "matrix", "payoff": [[[1, 2], [3, 4]], [[5, 6], [7, 8]]]}"#).unwrap();
        assert_eq!(ok.train.env.n_agents, 3);
    }

    #[test]
    fn echo_round_trips() {
        for text in [
            r#"{"env": "matrix_climb", "seed": 3}"#,
            r#"{"env": "matrix", "payoff": [[0.1, 0.2], [0.3, 0.4]], "learning_rate": 0.0123456789}"#,
            r#"{"env": "grid_spread", "n_agents": 2, "mode": "grasp_aligned", "metrics_format": "jsonl"}"#,
            r#"{"env": "team_quadratic", "consensus_tol": 1e-9, "record_wall_time": true}"#,
        ] {
            let first = parse(text).unwrap();
            let echoed = serde_json::to_string_pretty(&first.to_json()).unwrap();
            let second = parse(&echoed).unwrap();
            assert_eq!(first, second);
            assert_eq!(second.to_json(), first.to_json());
        }
    }

    #[test]
    fn overrides_apply() {
        let c = parse(r#"{"env": "matrix_climb", "seed": 3}"#)
            .unwrap()
            .with_overrides(Some(9), Some(PathBuf::from("/tmp/x")));
        assert_eq!(c.train.seed, 9);
        assert_eq!(c.output_dir, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn missing_file_names_path() {
        let err = parse_config(Path::new("/definitely/not/here.json")).unwrap_err();
        assert!(
            err.to_string().contains("/definitely/not/here.json"),
            "{err}"
        );
    }
}

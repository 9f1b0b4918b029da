use crate::envs::{ObsSpace, Observation};
use crate::error::{Error, Result};
use crate::numerics::RngStream;
use crate::optim::Optimizer;

/// Shape of the global value function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticArch {
    /// One value per discrete global state.
    Tabular { states: usize },
    /// `V(s) = w · tanh(W s + b) + c`; discrete states are one-hot encoded.
    Mlp { input: ObsSpace, hidden: usize },
}

/// Parameters `φ` of the centralized critic, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticParams {
    arch: CriticArch,
    flat: Vec<f64>,
}

/// One regression example: a global state, the value the frozen critic gave
/// it, and its return target.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticSample {
    pub state: Observation,
    pub value_old: f64,
    pub target: f64,
}

impl CriticParams {
    pub fn new(arch: CriticArch, rng: &mut RngStream) -> Result<Self> {
        match arch {
            CriticArch::Tabular { states } if states > 0 => Ok(CriticParams {
                arch,
                flat: vec![0.0; states],
            }),
            CriticArch::Mlp { input, hidden } if hidden > 0 && input.input_dim() > 0 => {
                let len = hidden * (input.input_dim() + 1) + hidden + 1;
                Ok(CriticParams {
                    arch,
                    flat: rng.uniform_vec(len, -0.1, 0.1),
                })
            }
            _ => Err(Error::InvalidArgument(format!(
                "degenerate critic architecture {arch:?}"
            ))),
        }
    }

    pub fn from_flat(arch: CriticArch, flat: Vec<f64>) -> Result<Self> {
        let expected = Self::new(arch, &mut RngStream::new(0, 0))?.flat.len();
        if flat.len() != expected {
            return Err(Error::DimensionMismatch {
                context: "critic parameters",
                index: 0,
                expected,
                found: flat.len(),
            });
        }
        Ok(CriticParams { arch, flat })
    }

    pub fn arch(&self) -> CriticArch {
        self.arch
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn is_finite(&self) -> bool {
        self.flat.iter().all(|x| x.is_finite())
    }

    fn invalid(state: &Observation) -> Error {
        Error::InvalidObservation {
            context: "critic input",
            observation: state.describe(),
        }
    }

    fn encode(&self, input: ObsSpace, state: &Observation) -> Result<Vec<f64>> {
        match (state, input) {
            (Observation::Discrete(i), ObsSpace::Discrete(n)) if *i < n => {
                let mut x = vec![0.0; n];
                x[*i] = 1.0;
                Ok(x)
            }
            (Observation::Features(v), ObsSpace::Features(n)) if v.len() == n => Ok(v.clone()),
            _ => Err(Self::invalid(state)),
        }
    }

    pub fn value(&self, state: &Observation) -> Result<f64> {
        self.value_and_accumulate(state, 0.0, &mut [])
    }

    /// Returns `V(state)` and adds `weight · ∇_φ V(state)` into `grad`
    /// (skipped when `weight` is zero).
    pub fn value_and_accumulate(
        &self,
        state: &Observation,
        weight: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        match self.arch {
            CriticArch::Tabular { states } => match state {
                Observation::Discrete(i) if *i < states => {
                    if weight != 0.0 {
                        grad[*i] += weight;
                    }
                    Ok(self.flat[*i])
                }
                _ => Err(Self::invalid(state)),
            },
            CriticArch::Mlp { input, hidden } => {
                let x = self.encode(input, state)?;
                let width = x.len() + 1;
                let (w1, rest) = self.flat.split_at(hidden * width);
                let h: Vec<f64> = w1
                    .chunks(width)
                    .map(|row| {
                        (row[..x.len()]
                            .iter()
                            .zip(&x)
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            + row[x.len()])
                        .tanh()
                    })
                    .collect();
                let value = rest[..hidden]
                    .iter()
                    .zip(&h)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    + rest[hidden];
                if weight != 0.0 {
                    let (g1, g2) = grad.split_at_mut(hidden * width);
                    for k in 0..hidden {
                        g2[k] += weight * h[k];
                        let dpre = weight * rest[k] * (1.0 - h[k] * h[k]);
                        let row = &mut g1[k * width..(k + 1) * width];
                        for (j, xj) in x.iter().enumerate() {
                            row[j] += dpre * xj;
                        }
                        row[x.len()] += dpre;
                    }
                    g2[hidden] += weight;
                }
                Ok(value)
            }
        }
    }
}

/// Clipped value loss
/// `mean_t max((V - R̂)², (clip(V, V_old - ε, V_old + ε) - R̂)²)` and its
/// gradient.
///
/// Ties at the max take the unclipped branch. When the clipped branch wins
/// strictly, `V` lies outside the band, the clip is constant in `φ`, and that
/// sample contributes no gradient.
pub fn critic_loss(
    params: &CriticParams,
    samples: &[CriticSample],
    epsilon: f64,
) -> Result<(f64, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::Empty("critic batch"));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "critic clip epsilon must be positive, got {epsilon}"
        )));
    }
    let n = samples.len() as f64;
    let mut grad = vec![0.0; params.flat.len()];
    let mut loss = 0.0;
    for s in samples {
        let v = params.value(&s.state)?;
        let unclipped = (v - s.target).powi(2);
        let clipped_v = v.clamp(s.value_old - epsilon, s.value_old + epsilon);
        let clipped = (clipped_v - s.target).powi(2);
        if unclipped >= clipped {
            loss += unclipped;
            params.value_and_accumulate(&s.state, 2.0 * (v - s.target) / n, &mut grad)?;
        } else {
            loss += clipped;
        }
    }
    Ok((loss / n, grad))
}

/// One optimizer step `φ ← φ - η ∇L` (or its Adam counterpart).
pub fn critic_update(
    params: &mut CriticParams,
    grad: &[f64],
    optimizer: &mut Optimizer,
) -> Result<()> {
    optimizer.descend(&mut params.flat, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::OptimizerKind;

    fn tabular(values: Vec<f64>) -> CriticParams {
        CriticParams::from_flat(
            CriticArch::Tabular {
                states: values.len(),
            },
            values,
        )
        .unwrap()
    }

    fn sample(state: usize, value_old: f64, target: f64) -> CriticSample {
        CriticSample {
            state: Observation::Discrete(state),
            value_old,
            target,
        }
    }

    #[test]
    fn perfect_critic_has_zero_loss() {
        let c = tabular(vec![0.3, -1.0]);
        let (loss, grad) =
            critic_loss(&c, &[sample(0, 0.3, 0.3), sample(1, -1.0, -1.0)], 0.2).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grad, vec![0.0, 0.0]);
    }

    #[test]
    fn clipped_branch_example() {
        let c = tabular(vec![1.0]);
        let (loss, grad) = critic_loss(&c, &[sample(0, 0.0, 2.0)], 0.2).unwrap();
        let oracle = f64::max((1.0 - 2.0_f64).powi(2), (0.2 - 2.0_f64).powi(2));
        assert!((loss - 3.24).abs() < 1e-12);
        assert_eq!(loss, oracle);
        assert_eq!(grad, vec![0.0]);
    }

    #[test]
    fn infinite_epsilon_is_plain_mse() {
        let c = tabular(vec![1.0, 2.0]);
        let batch = [sample(0, -5.0, 0.0), sample(1, 9.0, 1.5)];
        let (loss, grad) = critic_loss(&c, &batch, f64::INFINITY).unwrap();
        assert!((loss - (1.0 + 0.25) / 2.0).abs() < 1e-15);
        assert_eq!(grad, vec![1.0, 0.5]);
        assert!(critic_loss(&c, &[], 0.2).is_err());
        assert!(critic_loss(&c, &batch, 0.0).is_err());
    }

    #[test]
    fn single_plain_step_example() {
        let mut c = tabular(vec![0.0]);
        let (_, grad) = critic_loss(&c, &[sample(0, 0.0, 1.0)], 1e6).unwrap();
        assert_eq!(grad, vec![-2.0]);
        let mut opt = Optimizer::new(OptimizerKind::Plain, 0.5, 1).unwrap();
        critic_update(&mut c, &grad, &mut opt).unwrap();
        assert_eq!(c.flat(), &[1.0]);
    }

    #[test]
    fn loss_non_increasing_below_curvature_bound() {
        // Per-state loss is (V - R)², curvature 2 / (samples per batch)
        let mut c = tabular(vec![0.0, 0.0]);
        let batch = [
            sample(0, 0.0, 1.0),
            sample(0, 0.0, 3.0),
            sample(1, 0.0, -1.0),
        ];
        let mut opt = Optimizer::new(OptimizerKind::Plain, 0.4, 2).unwrap();
        let mut last = f64::INFINITY;
        for _ in 0..200 {
            let (loss, grad) = critic_loss(&c, &batch, f64::INFINITY).unwrap();
            assert!(loss <= last + 1e-15);
            last = loss;
            critic_update(&mut c, &grad, &mut opt).unwrap();
        }
        assert!((c.flat()[0] - 2.0).abs() < 1e-9);
        assert!((c.flat()[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(5, 0);
        let arch = CriticArch::Mlp {
            input: ObsSpace::Features(4),
            hidden: 8,
        };
        for _ in 0..20 {
            let c = CriticParams::new(arch, &mut rng).unwrap();
            let mut batch = Vec::new();
            for _ in 0..6 {
                let state = Observation::Features(rng.uniform_vec(4, -1.0, 1.0));
                let v = c.value(&state).unwrap();
                // keep V strictly inside the band or strictly beyond the tie
                let value_old = v + rng.uniform(-0.1, 0.1);
                batch.push(CriticSample {
                    state,
                    value_old,
                    target: rng.uniform(-2.0, 2.0),
                });
            }
            let (_, grad) = critic_loss(&c, &batch, 0.5).unwrap();
            let loss_at = |k: usize, offset: f64| {
                let mut shifted = c.clone();
                shifted.flat_mut()[k] += offset;
                critic_loss(&shifted, &batch, 0.5).unwrap().0
            };
            // fourth-order central difference
            let h = 1e-4;
            for k in 0..c.flat().len() {
                let fd = (8.0 * (loss_at(k, h) - loss_at(k, -h))
                    - (loss_at(k, 2.0 * h) - loss_at(k, -2.0 * h)))
                    / (12.0 * h);
                let err = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-4);
                assert!(err < 1e-6, "coordinate {k}: {fd} vs {}", grad[k]);
            }
        }
    }

    #[test]
    fn discrete_state_mlp_matches_table_shape() {
        let mut rng = RngStream::new(1, 0);
        let c = CriticParams::new(
            CriticArch::Mlp {
                input: ObsSpace::Discrete(3),
                hidden: 2,
            },
            &mut rng,
        )
        .unwrap();
        assert_eq!(c.flat().len(), 2 * 4 + 3);
        assert!(c.value(&Observation::Discrete(3)).is_err());
        assert!(tabular(vec![0.0])
            .value(&Observation::Features(vec![]))
            .is_err());
    }
}

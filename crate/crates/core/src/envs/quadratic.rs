use crate::error::{Error, Result};
use crate::numerics::{cholesky, power_iteration, DenseVector, RngStream};

/// `J(θ) = -½ (θ - θ*)ᵀ Q (θ - θ*)` over `n_agents` parameter blocks of
/// `block_dim` coordinates each. Agent `i` owns block `i`, so its exact
/// gradient is `-[Q (θ - θ*)]_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TeamQuadratic {
    n_agents: usize,
    block_dim: usize,
    q: Vec<f64>,
    theta_star: Vec<f64>,
}

impl TeamQuadratic {
    /// Validates that `q` is symmetric positive definite (by Cholesky).
    pub fn new(
        n_agents: usize,
        block_dim: usize,
        q: Vec<f64>,
        theta_star: Vec<f64>,
    ) -> Result<Self> {
        let m = n_agents * block_dim;
        if m == 0 {
            return Err(Error::InvalidArgument(
                "team_quadratic needs agents and parameters".into(),
            ));
        }
        if q.len() != m * m || theta_star.len() != m {
            return Err(Error::DimensionMismatch {
                context: "team_quadratic matrix",
                index: 0,
                expected: m * m,
                found: q.len(),
            });
        }
        for i in 0..m {
            for j in 0..i {
                if q[i * m + j] != q[j * m + i] {
                    return Err(Error::InvalidArgument(format!(
                        "Q is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        if cholesky(&q, m).is_none() {
            return Err(Error::InvalidArgument("Q is not positive definite".into()));
        }
        Ok(TeamQuadratic {
            n_agents,
            block_dim,
            q,
            theta_star,
        })
    }

    /// `Q = AᵀA + 0.1 I` with `A` uniform in `[-1, 1] / sqrt(M)`, and `θ*`
    /// uniform in `[-1, 1]`, both drawn from `rng`.
    pub fn random(n_agents: usize, block_dim: usize, rng: &mut RngStream) -> Result<Self> {
        let m = n_agents * block_dim;
        let scale = 1.0 / (m.max(1) as f64).sqrt();
        let a: Vec<f64> = (0..m * m).map(|_| scale * rng.uniform(-1.0, 1.0)).collect();
        let mut q = vec![0.0; m * m];
        for i in 0..m {
            for j in i..m {
                let s: f64 = (0..m).map(|k| a[k * m + i] * a[k * m + j]).sum();
                q[i * m + j] = s;
                q[j * m + i] = s;
            }
            q[i * m + i] += 0.1;
        }
        let theta_star = rng.uniform_vec(m, -1.0, 1.0);
        Self::new(n_agents, block_dim, q, theta_star)
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    pub fn dim(&self) -> usize {
        self.n_agents * self.block_dim
    }

    pub fn theta_star(&self) -> &[f64] {
        &self.theta_star
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    fn q_mul(&self, v: &[f64]) -> Vec<f64> {
        let m = self.dim();
        (0..m)
            .map(|i| (0..m).map(|j| self.q[i * m + j] * v[j]).sum())
            .collect()
    }

    /// `dᵀ Q d`
    pub fn curvature(&self, d: &[f64]) -> f64 {
        self.q_mul(d).iter().zip(d).map(|(a, b)| a * b).sum()
    }

    pub fn spectral_norm(&self) -> f64 {
        power_iteration(self.dim(), |v| self.q_mul(v))
    }

    pub fn value(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.eval(theta)?.0)
    }

    /// Exact value and per-agent block gradients at `theta`.
    pub fn eval(&self, theta: &[f64]) -> Result<(f64, Vec<DenseVector>)> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "team_quadratic parameters",
                index: 0,
                expected: self.dim(),
                found: theta.len(),
            });
        }
        let delta: Vec<f64> = theta
            .iter()
            .zip(&self.theta_star)
            .map(|(a, b)| a - b)
            .collect();
        let qd = self.q_mul(&delta);
        let value = -0.5 * qd.iter().zip(&delta).map(|(a, b)| a * b).sum::<f64>();
        let grads = qd
            .chunks(self.block_dim)
            .map(|block| DenseVector::new(block.iter().map(|x| -x).collect()))
            .collect();
        Ok((value, grads))
    }
}

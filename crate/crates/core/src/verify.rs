//! Property suites behind `grasp verify`.
//!
//! Each suite runs randomized cases and reports, per property, the worst value
//! seen against its tolerance.

use std::fmt;
use std::str::FromStr;

use crate::consensus::{
    geometric_aligned_factor, solve_with, verify_kkt, GradientSet, SolverConfig,
};
use crate::envs::{ObsSpace, Observation, TeamQuadratic};
use crate::error::{Error, Result};
use crate::estimation::{gae, td_errors};
use crate::numerics::{dot, norm_sq, DenseVector, RngStream};
use crate::policy::{finite_difference_check, PolicyArch, PolicyFamily, PolicyParams, SampledStep};
use crate::trainer::quadratic_margin_check;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Qp,
    Kkt,
    GammaFactor,
    Gradcheck,
    Gae,
    Margin,
    All,
}

impl Suite {
    pub const NAMES: [&'static str; 7] = [
        "qp",
        "kkt",
        "gamma_factor",
        "gradcheck",
        "gae",
        "margin",
        "all",
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Qp => "qp",
            Suite::Kkt => "kkt",
            Suite::GammaFactor => "gamma_factor",
            Suite::Gradcheck => "gradcheck",
            Suite::Gae => "gae",
            Suite::Margin => "margin",
            Suite::All => "all",
        }
    }

    /// Case count used when none is given.
    pub fn default_cases(self) -> usize {
        match self {
            Suite::Gradcheck | Suite::Margin => 100,
            _ => 1000,
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "qp" => Suite::Qp,
            "kkt" => Suite::Kkt,
            "gamma_factor" => Suite::GammaFactor,
            "gradcheck" => Suite::Gradcheck,
            "gae" => Suite::Gae,
            "margin" => Suite::Margin,
            "all" => Suite::All,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown suite `{other}` (expected one of {})",
                    Suite::NAMES.join(", ")
                )))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    AtMost,
    AtLeast,
}

/// The worst value of one property over all cases.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub property: &'static str,
    pub worst: f64,
    pub bound: Bound,
    pub tolerance: f64,
}

impl Residual {
    fn at_most(property: &'static str, tolerance: f64) -> Self {
        Residual {
            property,
            worst: f64::NEG_INFINITY,
            bound: Bound::AtMost,
            tolerance,
        }
    }

    fn at_least(property: &'static str, tolerance: f64) -> Self {
        Residual {
            property,
            worst: f64::INFINITY,
            bound: Bound::AtLeast,
            tolerance,
        }
    }

    /// Records a value and reports whether it is within tolerance.
    fn observe(&mut self, value: f64) -> bool {
        match self.bound {
            Bound::AtMost => {
                self.worst = self.worst.max(value);
                value <= self.tolerance
            }
            Bound::AtLeast => {
                self.worst = self.worst.min(value);
                value >= self.tolerance
            }
        }
    }

    pub fn pass(&self) -> bool {
        match self.bound {
            Bound::AtMost => self.worst <= self.tolerance,
            Bound::AtLeast => self.worst >= self.tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub suite: &'static str,
    pub cases_run: usize,
    pub cases_passed: usize,
    pub residuals: Vec<Residual>,
    pub pass: bool,
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "suite {}: {} ({}/{} cases passed)",
            self.suite,
            if self.pass { "PASS" } else { "FAIL" },
            self.cases_passed,
            self.cases_run
        )?;
        for r in &self.residuals {
            let op = match r.bound {
                Bound::AtMost => "<=",
                Bound::AtLeast => ">=",
            };
            writeln!(
                f,
                "  {:<28} worst {:>13.6e}  required {op} {:e}  {}",
                r.property,
                r.worst,
                r.tolerance,
                if r.pass() { "ok" } else { "VIOLATED" }
            )?;
        }
        Ok(())
    }
}

struct Tally {
    suite: &'static str,
    run: usize,
    passed: usize,
    residuals: Vec<Residual>,
}

impl Tally {
    fn new(suite: &'static str, residuals: Vec<Residual>) -> Self {
        Tally {
            suite,
            run: 0,
            passed: 0,
            residuals,
        }
    }

    /// Records one case's values, in the order the residuals were declared.
    fn case(&mut self, values: &[f64]) {
        let mut ok = true;
        for (r, &v) in self.residuals.iter_mut().zip(values) {
            ok &= r.observe(v);
        }
        self.run += 1;
        self.passed += ok as usize;
    }

    fn finish(self) -> VerifyReport {
        let pass =
            self.run > 0 && self.passed == self.run && self.residuals.iter().all(Residual::pass);
        VerifyReport {
            suite: self.suite,
            cases_run: self.run,
            cases_passed: self.passed,
            residuals: self.residuals,
            pass,
        }
    }
}

/// A random gradient set with `N ≤ max_agents` and `D ≤ max_dim`.
///
/// Mixes independent directions (often `u* = 0`), gradients sharing a common
/// component (`u* ≠ 0`), duplicated gradients, and extreme scales.
pub fn random_gradient_set(rng: &mut RngStream, max_agents: usize, max_dim: usize) -> GradientSet {
    let n = 1 + rng.below(max_agents);
    let d = 1 + rng.below(max_dim);
    let shared = rng.uniform_vec(d, -1.0, 1.0);
    let kind = rng.below(4);
    let scale = match rng.below(5) {
        0 => 1e-3,
        1 => 1e3,
        _ => 1.0,
    };
    let mut rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let noise = rng.uniform_vec(d, -1.0, 1.0);
            let mix = match kind {
                0 => 0.0,
                1 => 1.0,
                _ => rng.uniform(0.0, 2.0),
            };
            shared
                .iter()
                .zip(&noise)
                .map(|(s, e)| scale * (mix * s + e))
                .collect()
        })
        .collect();
    if kind == 3 && n > 1 {
        rows[n - 1] = rows[0].clone();
    }
    GradientSet::from_rows(rows).expect("generated rows share a dimension")
}

fn solver() -> SolverConfig {
    SolverConfig::default()
}

fn suite_qp(cases: usize, rng: &mut RngStream) -> Result<VerifyReport> {
    let mut tally = Tally::new(
        "qp",
        vec![
            Residual::at_most("simplex_sum_residual", 1e-9),
            Residual::at_least("min_weight", 0.0),
            Residual::at_most("reconstruction_inf_norm", 1e-9),
            Residual::at_least("pareto_residual", -1e-6),
        ],
    );
    for _ in 0..cases {
        let set = random_gradient_set(rng, 16, 256);
        let o = solve_with(&set, &solver())?;
        let min_c = o.weights.iter().copied().fold(f64::INFINITY, f64::min);
        let rebuilt = set.combine(&o.weights);
        tally.case(&[
            o.weights.sum_residual().abs(),
            min_c,
            rebuilt.max_abs_diff(&o.u_star)?,
            set.pareto_margin(&o.u_star)?,
        ]);
    }
    Ok(tally.finish())
}

fn suite_kkt(cases: usize, rng: &mut RngStream) -> Result<VerifyReport> {
    let mut tally = Tally::new(
        "kkt",
        vec![
            Residual::at_most("kkt_max_violation", 1e-6),
            Residual::at_least("min_multiplier", -1e-6),
        ],
    );
    for _ in 0..cases {
        let set = random_gradient_set(rng, 16, 256);
        let o = solve_with(&set, &solver())?;
        let k = verify_kkt(&set, &o, 1e-6)?;
        let min_mu = k.mu.iter().copied().fold(f64::INFINITY, f64::min);
        tally.case(&[k.max_violation, min_mu]);
    }
    Ok(tally.finish())
}

fn suite_gamma(cases: usize, rng: &mut RngStream) -> Result<VerifyReport> {
    let mut tally = Tally::new(
        "gamma_factor",
        vec![
            Residual::at_least("gamma_numerator", -1e-10),
            Residual::at_most("gamma_minus_one", 1e-12),
            Residual::at_least("g_dot_v", -1e-10),
            Residual::at_least("u_dot_v", -1e-10),
        ],
    );
    for _ in 0..cases {
        let set = random_gradient_set(rng, 16, 64);
        let o = solve_with(&set, &solver())?;
        let u = &o.u_star;
        let agent = rng.below(set.len());
        let g = set.get(agent);
        if norm_sq(g) + norm_sq(u) == 0.0 {
            tally.case(&[0.0, -1.0, 0.0, 0.0]);
            continue;
        }
        let gamma = geometric_aligned_factor(g, u)?;
        let v: DenseVector = g.add(u)?.scaled(gamma);
        tally.case(&[
            gamma * (norm_sq(g) + norm_sq(u)),
            gamma - 1.0,
            dot(g, &v)?,
            dot(u, &v)?,
        ]);
    }
    Ok(tally.finish())
}

fn random_batch(
    params: &PolicyParams,
    agent: usize,
    len: usize,
    rng: &mut RngStream,
) -> Result<(Vec<SampledStep>, Vec<f64>)> {
    let mut steps = Vec::with_capacity(len);
    let mut advantages = Vec::with_capacity(len);
    for time in 0..len {
        let observation = match params.arch().obs_space {
            ObsSpace::Discrete(n) => Observation::Discrete(rng.below(n)),
            ObsSpace::Features(n) => Observation::Features(rng.uniform_vec(n, -1.0, 1.0)),
        };
        let (action, log_prob) = params.act(&observation, agent, rng)?;
        steps.push(SampledStep {
            agent,
            time,
            observation,
            action,
            log_prob,
        });
        advantages.push(rng.uniform(-2.0, 2.0));
    }
    Ok((steps, advantages))
}

/// One tabular and one MLP finite-difference check per case (seed).
pub fn gradcheck_case(seed: u64) -> Result<(f64, f64)> {
    let mut rng = RngStream::keyed(seed, &[Suite::Gradcheck as u64]);
    let arch = PolicyArch::new(PolicyFamily::Tabular, 2, ObsSpace::Discrete(3), 4, 0)?;
    let flat = rng.uniform_vec(arch.layout().total_len(), -1.0, 1.0);
    let tabular = PolicyParams::from_flat(arch, flat)?;
    let (steps, adv) = random_batch(&tabular, 1, 16, &mut rng)?;
    let tab_err = finite_difference_check(&tabular, &steps, &adv, 1, 1e-5)?;

    let arch = PolicyArch::new(PolicyFamily::Mlp, 3, ObsSpace::Features(6), 5, 16)?;
    let mlp = PolicyParams::init(arch, &mut rng);
    let (steps, adv) = random_batch(&mlp, 2, 16, &mut rng)?;
    let mlp_err = finite_difference_check(&mlp, &steps, &adv, 2, 1e-5)?;
    Ok((tab_err, mlp_err))
}

fn suite_gradcheck(cases: usize, seed: u64) -> Result<VerifyReport> {
    let mut tally = Tally::new(
        "gradcheck",
        vec![
            Residual::at_most("tabular_relative_error", 1e-6),
            Residual::at_most("mlp_relative_error", 1e-4),
        ],
    );
    for case in 0..cases {
        let (t, m) = gradcheck_case(seed.wrapping_add(case as u64))?;
        tally.case(&[t, m]);
    }
    Ok(tally.finish())
}

/// `Σ_l (γλ)^l δ_{t+l}` summed forward until the episode end.
pub fn gae_forward_sum(deltas: &[f64], gamma: f64, lambda: f64, episode_end: &[bool]) -> Vec<f64> {
    (0..deltas.len())
        .map(|t| {
            let mut total = 0.0;
            let mut weight = 1.0;
            for k in t..deltas.len() {
                total += weight * deltas[k];
                if episode_end[k] {
                    break;
                }
                weight *= gamma * lambda;
            }
            total
        })
        .collect()
}

fn suite_gae(cases: usize, rng: &mut RngStream) -> Result<VerifyReport> {
    let mut tally = Tally::new(
        "gae",
        vec![
            Residual::at_most("lambda_zero_residual", 0.0),
            Residual::at_most("forward_sum_residual", 1e-12),
        ],
    );
    for _ in 0..cases {
        let len = 1 + rng.below(64);
        let rewards = rng.uniform_vec(len, -1.0, 1.0);
        let values = rng.uniform_vec(len + 1, -2.0, 2.0);
        let mut end: Vec<bool> = (0..len).map(|_| rng.next_f64() < 0.05).collect();
        end[len - 1] = true;
        let gamma = rng.uniform(0.0, 0.999);
        let lambda = rng.next_f64();
        let deltas = td_errors(&rewards, &values, &end, gamma)?;
        let zero = gae(&deltas, gamma, 0.0, &end)?;
        let lambda_zero = zero
            .iter()
            .zip(&deltas)
            .map(|(a, d)| (a - d).abs())
            .fold(0.0, f64::max);
        let backward = gae(&deltas, gamma, lambda, &end)?;
        let forward = gae_forward_sum(&deltas, gamma, lambda, &end);
        let sum_err = backward
            .iter()
            .zip(&forward)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        tally.case(&[lambda_zero, sum_err]);
    }
    Ok(tally.finish())
}

fn suite_margin(cases: usize, rng: &mut RngStream) -> Result<VerifyReport> {
    let mut tally = Tally::new(
        "margin",
        vec![
            Residual::at_least("pareto_residual", -1e-8),
            Residual::at_most("threshold_violations", 0.0),
            Residual::at_most("bound_failures", 0.0),
        ],
    );
    let problem = TeamQuadratic::random(3, 4, rng)?;
    let etas = [1e-3, 1e-4, 1e-5];
    for _ in 0..cases {
        let r = quadratic_margin_check(&problem, &etas, 1, &solver(), rng)?;
        tally.case(&[
            r.worst_pareto_residual,
            r.threshold_violations as f64,
            if r.pass { 0.0 } else { 1.0 },
        ]);
    }
    Ok(tally.finish())
}

/// Runs one suite (or every suite for [`Suite::All`]).
pub fn run_suite(suite: Suite, cases: Option<usize>, seed: u64) -> Result<Vec<VerifyReport>> {
    let suites = match suite {
        Suite::All => vec![
            Suite::Qp,
            Suite::Kkt,
            Suite::GammaFactor,
            Suite::Gradcheck,
            Suite::Gae,
            Suite::Margin,
        ],
        one => vec![one],
    };
    suites
        .into_iter()
        .map(|s| {
            let n = cases.unwrap_or_else(|| s.default_cases());
            let mut rng = RngStream::keyed(seed, &[s as u64]);
            match s {
                Suite::Qp => suite_qp(n, &mut rng),
                Suite::Kkt => suite_kkt(n, &mut rng),
                Suite::GammaFactor => suite_gamma(n, &mut rng),
                Suite::Gradcheck => suite_gradcheck(n, seed),
                Suite::Gae => suite_gae(n, &mut rng),
                Suite::Margin => suite_margin(n, &mut rng),
                Suite::All => unreachable!("expanded above"),
            }
        })
        .collect()
}

//! Dense vector and matrix primitives, simplex projection, and seeded randomness.
//!
//! Everything here accumulates in `f64`. The sizes involved (a handful of
//! agents, gradients with at most a few thousand coordinates) make the naive
//! loops the right tool.

use std::ops::Deref;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite-dimensional real vector: a gradient, a consensus direction, or a
/// parameter block.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn new(entries: Vec<f64>) -> Self {
        DenseVector(entries)
    }

    pub fn zeros(len: usize) -> Self {
        DenseVector(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn norm(&self) -> f64 {
        norm_sq(&self.0).sqrt()
    }

    pub fn scaled(&self, alpha: f64) -> DenseVector {
        DenseVector(self.0.iter().map(|x| alpha * x).collect())
    }

    /// Coordinate-wise `self + other`.
    pub fn add(&self, other: &DenseVector) -> Result<DenseVector> {
        check_len("vector sum", self.len(), other.len())?;
        Ok(DenseVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &[f64]) -> Result<()> {
        check_len("axpy", self.len(), other.len())?;
        for (a, b) in self.0.iter_mut().zip(other) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &DenseVector) -> Result<f64> {
        check_len("max_abs_diff", self.len(), other.len())?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

impl Deref for DenseVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for DenseVector {
    fn from(v: Vec<f64>) -> Self {
        DenseVector(v)
    }
}

impl From<&[f64]> for DenseVector {
    fn from(v: &[f64]) -> Self {
        DenseVector(v.to_vec())
    }
}

fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            context,
            index: 1,
            expected,
            found,
        });
    }
    Ok(())
}

pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len("dot", a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

/// Symmetric matrix of pairwise inner products `P[i][j] = <g_i, g_j>`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl GramMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|x| x.is_finite())
    }

    /// `P c`
    pub fn mul_vec(&self, c: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).iter().zip(c).map(|(p, x)| p * x).sum())
            .collect()
    }

    /// `cᵀ P c`
    pub fn quad_form(&self, c: &[f64]) -> f64 {
        self.mul_vec(c).iter().zip(c).map(|(p, x)| p * x).sum()
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn max_diag(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).fold(0.0, f64::max)
    }

    /// Largest eigenvalue by power iteration (the matrix is PSD, so this is
    /// the spectral norm).
    pub fn lambda_max(&self) -> f64 {
        power_iteration(self.n, |v| self.mul_vec(v))
    }
}

/// Builds the Gram matrix of a set of equal-length vectors. Each unordered
/// pair is evaluated once and mirrored, so the result is exactly symmetric.
pub fn gram_matrix(vectors: &[DenseVector]) -> Result<GramMatrix> {
    let n = vectors.len();
    if n == 0 {
        return Err(Error::Empty("gradient set"));
    }
    let dim = vectors[0].len();
    for (index, v) in vectors.iter().enumerate() {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "gram matrix (relative to gradient 0)",
                index,
                expected: dim,
                found: v.len(),
            });
        }
    }
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let p = dot(&vectors[i], &vectors[j])?;
            entries[i * n + j] = p;
            entries[j * n + i] = p;
        }
    }
    Ok(GramMatrix { n, entries })
}

/// Power iteration for the dominant eigenvalue of a symmetric PSD operator.
///
/// The start vector has distinct entries so that it is not orthogonal to the
/// dominant eigenvector in the symmetric instances that come up in practice
/// (e.g. `{g, -g}`, whose Gram matrix annihilates the all-ones vector).
pub fn power_iteration(n: usize, apply: impl Fn(&[f64]) -> Vec<f64>) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 + 1.0).sqrt()).collect();
    let scale = norm_sq(&v).sqrt();
    v.iter_mut().for_each(|x| *x /= scale);
    let mut estimate = 0.0;
    for _ in 0..200 {
        let w = apply(&v);
        let norm = norm_sq(&w).sqrt();
        if norm == 0.0 {
            return estimate;
        }
        let rayleigh: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        v = w.into_iter().map(|x| x / norm).collect();
        if (rayleigh - estimate).abs() <= 1e-12 * rayleigh.abs().max(1e-300) {
            return rayleigh.max(estimate);
        }
        estimate = rayleigh;
    }
    estimate
}

/// Weights on the probability simplex: nonnegative, summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimplexWeights(Vec<f64>);

impl SimplexWeights {
    pub fn uniform(n: usize) -> Self {
        SimplexWeights(vec![1.0 / n as f64; n])
    }

    pub fn vertex(n: usize, index: usize) -> Self {
        let mut w = vec![0.0; n];
        w[index] = 1.0;
        SimplexWeights(w)
    }

    /// Wraps weights that the caller guarantees lie on the simplex.
    pub(crate) fn from_raw(weights: Vec<f64>) -> Self {
        SimplexWeights(weights)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum_residual(&self) -> f64 {
        self.0.iter().sum::<f64>() - 1.0
    }
}

impl Deref for SimplexWeights {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Euclidean projection onto `{c : sum(c) = 1, c >= 0}` by sorting and
/// thresholding.
pub fn project_to_simplex(v: &[f64]) -> Result<SimplexWeights> {
    if v.is_empty() {
        return Err(Error::Empty("simplex projection input"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("simplex projection input".into()));
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut threshold = 0.0;
    for (k, &x) in sorted.iter().enumerate() {
        cumulative += x;
        let t = (cumulative - 1.0) / (k as f64 + 1.0);
        // The first element always qualifies, so `threshold` is always set.
        if x - t > 0.0 {
            threshold = t;
        } else {
            break;
        }
    }
    Ok(SimplexWeights(
        v.iter().map(|x| (x - threshold).max(0.0)).collect(),
    ))
}

/// In-place Cholesky factorisation of a dense row-major SPD matrix. Returns
/// the lower factor, or `None` when the matrix is not positive definite.
pub fn cholesky(matrix: &[f64], n: usize) -> Option<Vec<f64>> {
    if matrix.len() != n * n {
        return None;
    }
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = matrix[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Mixes a seed with a path of stream keys (splitmix64 finaliser).
pub fn mix_stream(keys: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &k in keys {
        h ^= k
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(h << 6)
            .wrapping_add(h >> 2);
        h = splitmix(h);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A reproducible random stream identified by `(seed, stream id)`.
///
/// Backed by ChaCha8 with the stream id mapped onto ChaCha's native stream
/// counter, so distinct ids give independent sequences and the same pair gives
/// the same draws on every platform.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream { seed, stream, rng }
    }

    /// A stream whose id is derived from a key path such as
    /// `[purpose, iteration, episode]`.
    pub fn keyed(seed: u64, keys: &[u64]) -> Self {
        Self::new(seed, mix_stream(keys))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Uniform draw in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `0..n`, computed in `u64` so it is portable across
    /// pointer widths.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n as u64) as usize
    }

    pub fn uniform_vec(&mut self, len: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..len).map(|_| self.uniform(lo, hi)).collect()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Samples an index from a discrete distribution by inverse CDF.
    pub fn categorical(&mut self, probabilities: &[f64]) -> usize {
        let u = self.next_f64();
        let mut cumulative = 0.0;
        let mut last_positive = 0;
        for (i, &p) in probabilities.iter().enumerate() {
            if p > 0.0 {
                last_positive = i;
            }
            cumulative += p;
            if u < cumulative {
                return i;
            }
        }
        last_positive
    }
}

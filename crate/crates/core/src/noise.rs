//! Seeded white noise and a deterministic chunked Monte Carlo harness.
//!
//! Path `p` of a run with seed `s` draws its normals from ChaCha8 seeded with `s`
//! on stream `p`. Work is split into chunks of fixed size whose results are merged
//! in chunk order, so every statistic is bit-identical for any thread count.

use std::ops::Range;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{invalid, Result};

/// Paths handled by one unit of parallel work.
pub const CHUNK_PATHS: usize = 2048;

/// Standard normal draws `ξ_0..ξ_n`, one per grid node.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseVector {
    values: Vec<f64>,
    seed: u64,
    stream: u64,
}

impl NoiseVector {
    pub fn generate(seed: u64, stream: u64, len: usize) -> Self {
        let mut values = vec![0.0; len];
        fill_normals(seed, stream, &mut values);
        Self {
            values,
            seed,
            stream,
        }
    }

    /// Wraps given draws; useful for tests and for replaying stored noise.
    pub fn from_values(values: Vec<f64>, seed: u64, stream: u64) -> Self {
        Self {
            values,
            seed,
            stream,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn fill_normals(seed: u64, stream: u64, out: &mut [f64]) {
    let mut rng = rng_for(seed, stream);
    for x in out.iter_mut() {
        *x = StandardNormal.sample(&mut rng);
    }
}

/// `len × paths.len()` matrix whose column `c` is the noise of path `paths.start + c`.
pub fn noise_block(seed: u64, paths: Range<u64>, len: usize) -> DMatrix<f64> {
    let cols = (paths.end - paths.start) as usize;
    let mut m = DMatrix::zeros(len, cols);
    for (c, p) in paths.enumerate() {
        fill_normals(seed, p, m.column_mut(c).as_mut_slice());
    }
    m
}

/// Path values `L ξ` for the paths in `paths`, one column per path.
///
/// `loading` maps the white noise of one path to its node values, e.g. `K · diag(√w)`.
pub fn simulate_block(loading: &DMatrix<f64>, seed: u64, paths: Range<u64>) -> DMatrix<f64> {
    let xi = noise_block(seed, paths, loading.ncols());
    loading * xi
}

/// Splits `0..n_paths` into fixed chunks, runs `work` on each in parallel and
/// returns the results in chunk order.
pub fn run_chunked<T, F>(n_paths: u64, work: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<u64>) -> T + Sync + Send,
{
    let chunk = CHUNK_PATHS as u64;
    let n_chunks = n_paths.div_ceil(chunk);
    (0..n_chunks)
        .into_par_iter()
        .map(|c| work(c * chunk..((c + 1) * chunk).min(n_paths)))
        .collect()
}

/// Running mean and variance (Welford), mergeable in a fixed order.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    /// Standard error of the mean.
    pub fn standard_error(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

/// Streaming covariance of `k` variables with delta-method standard errors.
///
/// Keeps the power sums `Σa`, `Σab`, `Σa²b` and `Σa²b²` for all pairs so that the
/// variance of the centered products can be recovered at the end.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceAccumulator {
    k: usize,
    n: u64,
    s1: Vec<f64>,
    s_ab: DMatrix<f64>,
    s_aab: DMatrix<f64>,
    s_aabb: DMatrix<f64>,
}

impl CovarianceAccumulator {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            n: 0,
            s1: vec![0.0; k],
            s_ab: DMatrix::zeros(k, k),
            s_aab: DMatrix::zeros(k, k),
            s_aabb: DMatrix::zeros(k, k),
        }
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn push(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.k);
        self.n += 1;
        for i in 0..self.k {
            self.s1[i] += x[i];
            let xi2 = x[i] * x[i];
            for j in 0..self.k {
                let p = x[i] * x[j];
                self.s_ab[(i, j)] += p;
                self.s_aab[(i, j)] += xi2 * x[j];
                self.s_aabb[(i, j)] += p * p;
            }
        }
    }

    pub fn merge(&mut self, other: &CovarianceAccumulator) {
        debug_assert_eq!(self.k, other.k);
        self.n += other.n;
        for i in 0..self.k {
            self.s1[i] += other.s1[i];
        }
        self.s_ab += &other.s_ab;
        self.s_aab += &other.s_aab;
        self.s_aabb += &other.s_aabb;
    }

    pub fn means(&self) -> Vec<f64> {
        self.s1.iter().map(|s| s / self.n as f64).collect()
    }

    /// Unbiased covariance matrix and entrywise standard errors.
    pub fn finish(&self) -> Result<CovarianceEstimate> {
        if self.n < 2 {
            return Err(invalid("covariance needs at least two samples"));
        }
        let n = self.n as f64;
        let mu = self.means();
        let k = self.k;
        let mut cov = DMatrix::zeros(k, k);
        let mut se = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                let (a, b) = (mu[i], mu[j]);
                let m_ab = self.s_ab[(i, j)] / n;
                let c = m_ab - a * b;
                cov[(i, j)] = c * n / (n - 1.0);
                let fourth = self.s_aabb[(i, j)] / n
                    - 2.0 * b * self.s_aab[(i, j)] / n
                    - 2.0 * a * self.s_aab[(j, i)] / n
                    + b * b * self.s_ab[(i, i)] / n
                    + a * a * self.s_ab[(j, j)] / n
                    + 4.0 * a * b * m_ab
                    - 3.0 * a * a * b * b;
                se[(i, j)] = ((fourth - c * c).max(0.0) / n).sqrt();
            }
        }
        Ok(CovarianceEstimate {
            covariance: cov,
            standard_error: se,
            n_paths: self.n,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceEstimate {
    pub covariance: DMatrix<f64>,
    pub standard_error: DMatrix<f64>,
    pub n_paths: u64,
}

//! Small numeric utilities shared across modules.

use rayon::prelude::*;

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn from_mean_var(mv: MeanVar) -> Self {
        Estimate {
            value: mv.mean(),
            stderr: mv.stderr(),
        }
    }
}

/// Minimum effective sample size below which a self-normalized
/// importance-sampling estimate is flagged unreliable.
pub const MIN_RELIABLE_ESS: f64 = 50.0;

/// Vector-valued self-normalized importance-sampling estimate with
/// per-coordinate standard errors and the weight effective sample size.
#[derive(Debug, Clone)]
pub struct McVector {
    pub value: nalgebra::DVector<f64>,
    pub stderr: nalgebra::DVector<f64>,
    pub ess: f64,
}

impl McVector {
    /// False when the weights collapsed (ESS below [`MIN_RELIABLE_ESS`]).
    pub fn reliable(&self) -> bool {
        self.ess >= MIN_RELIABLE_ESS
    }
}

/// log(sum_i exp(x_i)) computed stably. Returns -inf for an empty slice.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// Streaming mean/variance accumulator (Welford) with an exact merge,
/// so chunked parallel reductions match the sequential result for any
/// fixed chunking.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanVar {
    n: u64,
    mean: f64,
    m2: f64,
}

impl MeanVar {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(mut self, other: MeanVar) -> MeanVar {
        if other.n == 0 {
            return self;
        }
        if self.n == 0 {
            return other;
        }
        let n = (self.n + other.n) as f64;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n;
        self.m2 += other.m2 + d * d * (self.n as f64) * (other.n as f64) / n;
        self.n += other.n;
        self
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance (0 for fewer than two observations).
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    /// Standard error of the mean.
    pub fn stderr(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

/// Chunk size for deterministic parallel reductions. Fixed so that the
/// reduction tree does not depend on the number of worker threads.
const CHUNK: u64 = 4096;

/// Mean/variance of `f(i)` over `i in 0..n`, evaluated in parallel.
/// Chunk boundaries and the merge order are fixed, so the result is
/// bitwise identical for any thread count.
pub fn par_mean_var<F>(n: u64, f: F) -> MeanVar
where
    F: Fn(u64) -> f64 + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            let mut acc = MeanVar::default();
            for i in lo..hi {
                acc.push(f(i));
            }
            acc
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(MeanVar::default(), MeanVar::merge)
}

/// As [`par_mean_var`], but the per-sample function may fail; any error
/// aborts the reduction and one of the errors is surfaced.
pub fn par_mean_var_result<F>(n: u64, f: F) -> crate::error::Result<MeanVar>
where
    F: Fn(u64) -> crate::error::Result<f64> + Sync,
{
    let failed = std::sync::Mutex::new(None::<crate::error::Error>);
    let mv = par_mean_var(n, |i| match f(i) {
        Ok(v) => v,
        Err(e) => {
            let mut slot = failed.lock().unwrap();
            if slot.is_none() {
                *slot = Some(e);
            }
            0.0
        }
    });
    match failed.into_inner().unwrap() {
        Some(e) => Err(e),
        None => Ok(mv),
    }
}

/// Ordered parallel map over `0..n`.
pub fn par_collect<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// E[chi^2_d(lambda)^q]: raw moment of a noncentral chi-square with `d`
/// degrees of freedom and noncentrality `lambda`, via the standard
/// recursion mu'_j = 2^{j-1}(j-1)!(d + j lambda)
///                 + sum_{i<j} (j-1)! 2^{i-1} / (j-i)! (d + i lambda) mu'_{j-i}.
pub fn noncentral_chi2_moment(d: f64, lambda: f64, q: u32) -> f64 {
    let mut mu = vec![1.0f64; (q + 1) as usize];
    for j in 1..=q as usize {
        let mut v = 2f64.powi(j as i32 - 1) * factorial(j - 1) * (d + j as f64 * lambda);
        for i in 1..j {
            let coeff = factorial(j - 1) * 2f64.powi(i as i32 - 1) / factorial(j - i);
            v += coeff * (d + i as f64 * lambda) * mu[j - i];
        }
        mu[j] = v;
    }
    mu[q as usize]
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

//! Seeded, thread-count independent Monte Carlo plumbing.
//!
//! Work is split into fixed-size chunks, each driven by its own ChaCha stream
//! derived from `(seed, chunk index)`. Chunk results are merged in index order,
//! so estimates are bit-identical regardless of how rayon schedules them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

pub type McRng = ChaCha8Rng;

/// A Monte Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            stderr: 0.0,
            samples: 0,
        }
    }

    pub fn scale(self, c: f64) -> Self {
        Self {
            value: self.value * c,
            stderr: self.stderr * c.abs(),
            samples: self.samples,
        }
    }

    /// `|self - other|` measured in combined standard errors.
    pub fn sigma_distance(&self, other: &Estimate) -> f64 {
        let s = (self.stderr.powi(2) + other.stderr.powi(2)).sqrt();
        let diff = (self.value - other.value).abs();
        if s == 0.0 {
            if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            diff / s
        }
    }
}

/// Running mean / second central moment (Chan et al. merge).
#[derive(Clone, Copy, Debug, Default)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(self, other: Moments) -> Moments {
        if self.n == 0 {
            return other;
        }
        if other.n == 0 {
            return self;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        let mean = self.mean + d * other.n as f64 / n as f64;
        let m2 = self.m2 + other.m2 + d * d * (self.n as f64) * (other.n as f64) / n as f64;
        Moments { n, mean, m2 }
    }

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
            f64::INFINITY
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }

    pub fn estimate(&self) -> Estimate {
        Estimate {
            value: self.mean,
            stderr: self.stderr(),
            samples: self.n as usize,
        }
    }
}

pub const CHUNK: usize = 4096;

pub fn stream_rng(seed: u64, stream: u64) -> McRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs `f(rng, count)` over `total` samples split into chunks and merges the
/// per-chunk results in order.
pub fn par_chunks<T, F, M>(total: usize, seed: u64, f: F, merge: M) -> Option<T>
where
    T: Send,
    F: Fn(&mut McRng, usize) -> T + Sync,
    M: Fn(T, T) -> T,
{
    let chunks = total.div_ceil(CHUNK);
    let parts: Vec<T> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = CHUNK.min(total - c * CHUNK);
            let mut rng = stream_rng(seed, c as u64);
            f(&mut rng, count)
        })
        .collect();
    parts.into_iter().reduce(merge)
}

pub fn par_moments<F>(total: usize, seed: u64, f: F) -> Moments
where
    F: Fn(&mut McRng, usize) -> Moments + Sync,
{
    par_chunks(total, seed, f, Moments::merge).unwrap_or_default()
}

/// Uniform point on the unit sphere `S^{k-1}` (Gaussian normalisation).
pub fn unit_sphere(rng: &mut McRng, k: usize) -> Vec<f64> {
    use rand_distr::StandardNormal;
    loop {
        let v: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-300 {
            return v.into_iter().map(|a| a / norm).collect();
        }
    }
}

/// Uniform point in the Euclidean ball of radius `radius` in `R^k`.
pub fn euclidean_ball(rng: &mut McRng, k: usize, radius: f64) -> Vec<f64> {
    let dir = unit_sphere(rng, k);
    let u: f64 = rng.random();
    let r = radius * u.powf(1.0 / k as f64);
    dir.into_iter().map(|a| a * r).collect()
}

/// Radical inverse in base `b` (Halton component).
pub fn radical_inverse(mut i: u64, b: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    let inv = 1.0 / b as f64;
    while i > 0 {
        f *= inv;
        r += f * (i % b) as f64;
        i /= b;
    }
    r
}

const PRIMES: [u64; 24] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
];

/// The `i`-th Halton point in `[0,1)^dim` (dim ≤ 24).
pub fn halton(i: u64, dim: usize) -> Vec<f64> {
    (0..dim).map(|d| radical_inverse(i + 1, PRIMES[d])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_merge_matches_sequential() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.1).collect();
        let mut all = Moments::default();
        xs.iter().for_each(|&x| all.push(x));
        let mut a = Moments::default();
        let mut b = Moments::default();
        xs[..333].iter().for_each(|&x| a.push(x));
        xs[333..].iter().for_each(|&x| b.push(x));
        let m = a.merge(b);
        assert_eq!(m.n, all.n);
        assert!((m.mean - all.mean).abs() < 1e-12);
        assert!((m.m2 - all.m2).abs() < 1e-8 * all.m2);
    }

    #[test]
    fn par_moments_is_deterministic() {
        let f = |rng: &mut McRng, count: usize| {
            let mut m = Moments::default();
            for _ in 0..count {
                m.push(rng.random::<f64>());
            }
            m
        };
        let a = par_moments(50_000, 3, f);
        let b = par_moments(50_000, 3, f);
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert!((a.mean - 0.5).abs() < 5.0 * a.stderr());
    }

    #[test]
    fn halton_in_unit_cube() {
        for i in 0..100 {
            let p = halton(i, 5);
            assert!(p.iter().all(|&c| (0.0..1.0).contains(&c)));
        }
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(3, 2), 0.75);
    }
}

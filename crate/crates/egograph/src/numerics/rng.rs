//! Seeded, reproducible random stream.
//!
//! All stochastic steps in the pipeline draw from a `RandomStream` derived
//! from the run seed plus a purpose tag, so that any epoch can be replayed
//! exactly without serializing generator state.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::matrix::Matrix;

/// Counter-based deterministic RNG: identical seed and call sequence
/// produce identical outputs.
#[derive(Clone, Debug)]
pub struct RandomStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Stream for a sub-purpose of `seed` (epoch index, phase tag, ...).
    pub fn derived(seed: u64, parts: &[u64]) -> Self {
        Self::new(mix_seed(seed, parts))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.random()
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform in [lo, hi).
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        // Fisher-Yates, explicit so the draw sequence is pinned.
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Sample `k` distinct indices from [0, n) uniformly.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot sample {k} from {n}");
        let mut pool: Vec<usize> = (0..n).collect();
        self.shuffle(&mut pool);
        pool.truncate(k);
        pool
    }

    /// Sample `k` distinct indices weighted by `weights` (without replacement).
    /// Weights must be non-negative with a positive total.
    pub fn sample_weighted(&mut self, weights: &[f64], k: usize) -> Vec<usize> {
        assert!(k <= weights.len());
        let mut remaining: Vec<usize> = (0..weights.len()).collect();
        let mut picked = Vec::with_capacity(k);
        for _ in 0..k {
            let total: f64 = remaining.iter().map(|&i| weights[i]).sum();
            assert!(total > 0.0, "weighted sample with zero total weight");
            let mut t = self.uniform() * total;
            let mut chosen = remaining.len() - 1;
            for (pos, &i) in remaining.iter().enumerate() {
                t -= weights[i];
                if t <= 0.0 {
                    chosen = pos;
                    break;
                }
            }
            picked.push(remaining.swap_remove(chosen));
        }
        picked
    }

    pub fn normal_matrix(&mut self, rows: usize, cols: usize, std: f64) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        for v in m.data_mut() {
            *v = self.standard_normal() * std;
        }
        m
    }

    pub fn uniform_matrix(&mut self, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        for v in m.data_mut() {
            *v = self.uniform_range(lo, hi);
        }
        m
    }
}

/// Mix a base seed with context parts (splitmix64 finalizer per part).
pub fn mix_seed(base: u64, parts: &[u64]) -> u64 {
    let mut s = base;
    for &p in parts {
        s = s.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(p);
        let mut z = s;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        s = z ^ (z >> 31);
    }
    s
}

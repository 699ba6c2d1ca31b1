//! Counter-keyed Gaussian noise for the pairwise Brownian increments.
//!
//! Every pair increment `ΔZ^{i,j}` (`i < j`) is a deterministic function of
//! `(seed, replica, step, substep, i, j)`. Row `i` owns a private generator
//! keyed by `(seed, replica, step, substep, i)` whose successive normal
//! triples are the increments for `j = i+1, i+2, …`. The reverse increment is
//! obtained by sign flip, `ΔZ^{j,i} = −ΔZ^{i,j}`, and nothing of size
//! `N(N−1)/2` is ever stored.

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::Vec3;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a sequence of words into one 64-bit key.
pub fn mix_words(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x6a09_e667_f3bc_c908, |h, &w| splitmix64(h ^ splitmix64(w)))
}

/// Generator seeded from a word sequence; the seed expands through splitmix.
pub fn keyed_rng(words: &[u64]) -> Xoshiro256PlusPlus {
    let mut state = mix_words(words);
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    Xoshiro256PlusPlus::from_seed(seed)
}

/// Domain separators keep independent uses of one seed apart.
pub(crate) mod domain {
    pub const PAIR_NOISE: u64 = 0x4b41_434c_0001;
    pub const INITIAL: u64 = 0x4b41_434c_0002;
    pub const MIXTURE: u64 = 0x4b41_434c_0003;
    pub const REPLICA: u64 = 0x4b41_434c_0004;
    pub const SUBSAMPLE: u64 = 0x4b41_434c_0005;
    pub const PROJECTIONS: u64 = 0x4b41_434c_0006;
    pub const JITTER: u64 = 0x4b41_434c_0007;
}

/// Position of a (sub)step in the noise stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoiseKey {
    pub seed: u64,
    pub replica: u64,
    pub step: u64,
    /// 0 for an ordinary step; `2^level + k` for substep `k` of a step split
    /// into `2^level` pieces.
    pub substep: u64,
}

impl NoiseKey {
    pub fn new(seed: u64, replica: u64, step: u64) -> Self {
        NoiseKey {
            seed,
            replica,
            step,
            substep: 0,
        }
    }

    pub fn refined(self, level: u32, index: u64) -> Self {
        NoiseKey {
            substep: (1u64 << level) + index,
            ..self
        }
    }

    /// Stream of the increments `ΔZ^{row, j}` for `j > row`, unit variance.
    pub fn row_stream(&self, row: usize) -> RowStream {
        RowStream {
            rng: keyed_rng(&[
                domain::PAIR_NOISE,
                self.seed,
                self.replica,
                self.step,
                self.substep,
                row as u64,
            ]),
        }
    }

    /// Regenerates `ΔZ^{i,j}` with variance `dt` per component.
    ///
    /// O(N) because it replays row `min(i, j)`; meant for checks, not for the
    /// integrator's inner loop.
    pub fn pair_increment(&self, i: usize, j: usize, dt: f64) -> Vec3 {
        if i == j {
            return Vec3::zeros();
        }
        let (lo, hi) = if i < j { (i, j) } else { (j, i) };
        let mut stream = self.row_stream(lo);
        for _ in lo + 1..hi {
            stream.next_triple();
        }
        let w = stream.next_triple() * dt.sqrt();
        if i < j {
            w
        } else {
            -w
        }
    }
}

pub struct RowStream {
    rng: Xoshiro256PlusPlus,
}

impl RowStream {
    #[inline(always)]
    pub fn next_triple(&mut self) -> Vec3 {
        let a: f64 = StandardNormal.sample(&mut self.rng);
        let b: f64 = StandardNormal.sample(&mut self.rng);
        let c: f64 = StandardNormal.sample(&mut self.rng);
        Vec3::new(a, b, c)
    }
}

/// Seed of replica `r` under a run seed.
pub fn replica_seed(seed: u64, replica: u64) -> u64 {
    mix_words(&[domain::REPLICA, seed, replica])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn antisymmetric_regeneration() {
        let key = NoiseKey::new(11, 3, 17);
        for &(i, j) in &[(0, 1), (2, 9), (5, 6), (0, 30)] {
            let a = key.pair_increment(i, j, 0.01);
            let b = key.pair_increment(j, i, 0.01);
            assert_eq!(a, -b);
            assert!(a.norm() > 0.0);
        }
        assert_eq!(key.pair_increment(4, 4, 0.01), Vec3::zeros());
    }

    #[test]
    fn keys_separate_streams() {
        let base = NoiseKey::new(1, 0, 0);
        let other_step = NoiseKey::new(1, 0, 1);
        let other_rep = NoiseKey::new(1, 1, 0);
        let sub = base.refined(1, 0);
        let x = base.pair_increment(0, 1, 1.0);
        assert_ne!(x, other_step.pair_increment(0, 1, 1.0));
        assert_ne!(x, other_rep.pair_increment(0, 1, 1.0));
        assert_ne!(x, sub.pair_increment(0, 1, 1.0));
        assert_eq!(x, NoiseKey::new(1, 0, 0).pair_increment(0, 1, 1.0));
    }

    #[test]
    fn unit_normal_moments() {
        let mut s = NoiseKey::new(5, 0, 0).row_stream(0);
        let n = 200_000;
        let (mut m1, mut m2) = (0.0, 0.0);
        for _ in 0..n {
            let t = s.next_triple();
            m1 += t.x;
            m2 += t.y * t.y;
        }
        assert!((m1 / n as f64).abs() < 0.01);
        assert!((m2 / n as f64 - 1.0).abs() < 0.02);
    }
}

//! Seeded random streams.
//!
//! Every stochastic choice draws from a stream derived from one root seed
//! and a stream name (plus an optional index such as the training step), so
//! consuming more or fewer draws in one stream never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStreams {
    root: u64,
}

impl RngStreams {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn stream(&self, name: &str) -> Rng {
        self.stream_at(name, 0)
    }

    pub fn stream_at(&self, name: &str, index: u64) -> Rng {
        let mut h = Sha256::new();
        h.update(self.root.to_le_bytes());
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update(index.to_le_bytes());
        let digest: [u8; 32] = h.finalize().into();
        Rng::from_seed(digest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn draws(rng: &mut Rng, n: usize) -> Vec<u64> {
        (0..n).map(|_| rng.gen()).collect()
    }

    #[test]
    fn same_seed_same_draws() {
        assert_eq!(draws(&mut seeded_rng(42), 100), draws(&mut seeded_rng(42), 100));
    }

    #[test]
    fn different_seed_different_draws() {
        assert_ne!(draws(&mut seeded_rng(42), 100), draws(&mut seeded_rng(43), 100));
    }

    #[test]
    fn streams_are_independent_of_each_other() {
        let streams = RngStreams::new(9);
        // Record init draws, then interleave sampling draws in different amounts.
        let reference = draws(&mut streams.stream("init"), 50);
        for extra in [0, 1, 17, 300] {
            let mut sampling = streams.stream("sampling");
            let mut init = streams.stream("init");
            let _ = draws(&mut sampling, extra);
            let mut got = draws(&mut init, 25);
            let _ = draws(&mut sampling, extra);
            got.extend(draws(&mut init, 25));
            assert_eq!(got, reference);
        }
        assert_ne!(
            draws(&mut streams.stream_at("sampling", 0), 10),
            draws(&mut streams.stream_at("sampling", 1), 10)
        );
    }
}

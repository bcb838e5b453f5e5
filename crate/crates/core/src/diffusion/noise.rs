use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::modality::LatentTensor;

/// Counter-keyed Gaussian noise: the value at `(seed, stream, index)` does not
/// depend on what else was drawn, so fills are reproducible in any order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseSource {
    seed: u64,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    pub fn normal(&self, stream: u64, shape: (usize, usize, usize)) -> LatentTensor {
        let mut rng = self.rng(stream);
        let (h, w, c) = shape;
        let data = (0..h * w * c).map(|_| StandardNormal.sample(&mut rng)).collect();
        LatentTensor { h, w, c, data }
    }
}

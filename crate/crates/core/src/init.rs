use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;

/// Parameter initializer: uniform in `±1/sqrt(fan_in)`, or all zeros.
pub struct Initializer {
    rng: Option<ChaCha8Rng>,
}

impl Initializer {
    pub fn seeded(seed: u64) -> Self {
        Initializer {
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn zeros() -> Self {
        Initializer { rng: None }
    }

    pub fn uniform(&mut self, rows: usize, cols: usize, fan_in: usize) -> Tensor {
        match &mut self.rng {
            None => Tensor::zeros(rows, cols),
            Some(rng) => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                Tensor::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
            }
        }
    }

    pub fn weight(&mut self, fan_in: usize, fan_out: usize) -> Tensor {
        self.uniform(fan_in, fan_out, fan_in)
    }

    pub fn bias(&mut self, fan_in: usize, width: usize) -> Tensor {
        self.uniform(1, width, fan_in)
    }
}

//! Deterministic inputs shared by the benchmarks.

use cwtnet_core::{SeededRng, Shape4, Tensor};

/// Tensor of uniform `[0, 1)` values.
pub fn uniform(shape: Shape4, seed: u64) -> Tensor {
    let mut rng = SeededRng::new(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.uniform() as f32)
}

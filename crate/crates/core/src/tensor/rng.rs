use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor;

/// Counter-based generator used for every stochastic step.
pub type StreamRng = ChaCha8Rng;

/// Independent ChaCha streams derived from one run seed.
///
/// Consumption order within a training phase: `Init` draws all parameters in
/// canonical order once at model construction; `Shuffle` draws one permutation
/// per epoch; `Dropout` draws masks in forward order for every training batch;
/// `Sampling` draws ProbSparse key samples during training forwards.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RngStream {
    Init = 0,
    Shuffle = 1,
    Dropout = 2,
    Sampling = 3,
}

impl RngStream {
    /// Generator for `stream` in training `phase` (0 = pretraining, 1 = fine-tuning).
    pub fn rng(self, seed: u64, phase: u64) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(phase * 16 + self as u64);
        rng
    }
}

/// Uniform init in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let numel = shape.iter().product();
    let data = (0..numel).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("shape and data length agree")
}

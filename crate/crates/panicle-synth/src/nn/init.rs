//! Weight initialization.

use ndarray::ArrayD;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// The standard deviation both GANs initialize conv and linear weights
/// with.
pub const INIT_STD: f64 = 0.02;

/// Zero-mean normal draws, the conventional GAN initialization.
pub fn normal_init(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> ArrayD<f64> {
    let normal = Normal::new(0.0, std).expect("std is positive and finite");
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
    ArrayD::from_shape_vec(shape.to_vec(), data).expect("shape matches data length")
}

/// All-zero tensor, for biases.
pub fn zeros_init(shape: &[usize]) -> ArrayD<f64> {
    ArrayD::zeros(shape.to_vec())
}

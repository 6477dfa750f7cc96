//! Seeded parameter initialization shared by all modules.
//!
//! Every constructor threads one `ChaCha8Rng` through these helpers in a
//! fixed order, so a seed pins every initial weight in the model.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;
use crate::Result;

/// Uniform(−bound, bound) leaf parameter.
pub(crate) fn uniform_param(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| (2.0 * rng.gen::<f64>() - 1.0) * bound).collect();
    Tensor::param(data, shape)
}

/// Kaiming-style fan-in uniform: ±√(6 / fan_in).
pub(crate) fn kaiming_param(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Result<Tensor> {
    uniform_param(rng, shape, (6.0 / fan_in as f64).sqrt())
}

pub(crate) fn zero_param(shape: &[usize]) -> Result<Tensor> {
    Tensor::param(vec![0.0; shape.iter().product()], shape)
}

/// Identity matrix as a leaf parameter.
pub(crate) fn eye_param(n: usize) -> Result<Tensor> {
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        data[i * n + i] = 1.0;
    }
    Tensor::param(data, &[n, n])
}

use rand::Rng;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Uniform in ±sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform<T: Scalar, R: Rng>(
    weight: &mut Tensor<T>,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for w in weight.data_mut() {
        *w = T::lit(rng.gen_range(-limit..limit));
    }
}

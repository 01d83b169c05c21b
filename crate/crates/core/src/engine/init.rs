use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::{Shape, Tensor};

/// Glorot-uniform conv weight of shape (c_out, c_in, k, k).
pub fn glorot_conv(rng: &mut ChaCha8Rng, c_out: usize, c_in: usize, k: usize) -> Tensor {
    let fan_in = (c_in * k * k) as f64;
    let fan_out = (c_out * k * k) as f64;
    let bound = (6.0 / (fan_in + fan_out)).sqrt();
    let shape = Shape::new(c_out, c_in, k, k);
    let data = (0..shape.numel()).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_vec(shape, data).expect("sized by shape")
}

pub fn bias_shape(c_out: usize) -> Shape {
    Shape::new(1, c_out, 1, 1)
}

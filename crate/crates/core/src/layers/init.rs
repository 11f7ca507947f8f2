//! Weight initializers: He-uniform ahead of relu, Glorot-uniform for
//! recurrent and sigmoid-facing weights, zero biases.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Parameter, Scalar, Tensor};

fn uniform<E: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], limit: f64, name: String) -> Parameter<E> {
    let value = Tensor::from_fn(shape, |_| E::of((rng.gen::<f64>() * 2.0 - 1.0) * limit));
    Parameter::new(name, value)
}

pub fn he_uniform<E: Scalar>(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    fan_in: usize,
    name: String,
) -> Parameter<E> {
    uniform(rng, shape, (6.0 / fan_in as f64).sqrt(), name)
}

pub fn glorot_uniform<E: Scalar>(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    name: String,
) -> Parameter<E> {
    uniform(rng, shape, (6.0 / (fan_in + fan_out) as f64).sqrt(), name)
}

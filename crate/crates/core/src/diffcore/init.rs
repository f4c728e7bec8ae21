use rand::Rng;

use super::tensor::Tensor;
use crate::scalar::Real;

/// Glorot-uniform `out × inp` weight matrix: entries in `±sqrt(6 / (inp + out))`.
pub fn glorot_uniform<T: Real, R: Rng + ?Sized>(rng: &mut R, out: usize, inp: usize) -> Tensor<T> {
    let limit = (6.0 / (inp + out) as f64).sqrt();
    let data = (0..out * inp)
        .map(|_| T::lit(rng.random_range(-limit..=limit)))
        .collect();
    Tensor::matrix(out, inp, data).expect("glorot shape")
}

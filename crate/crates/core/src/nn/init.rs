use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::{Float, Tensor};

/// Samples from `U(-bound, bound)`.
pub fn uniform<T: Float, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor<T> {
    if bound == 0.0 {
        return Tensor::zeros(shape.to_vec());
    }
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Tensor::from_fn(shape.to_vec(), |_| T::lit(dist.sample(rng)))
}

/// He-uniform initialization for a layer with `fan_in` inputs.
pub fn kaiming_uniform<T: Float, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor<T> {
    uniform(rng, shape, (6.0 / fan_in.max(1) as f64).sqrt())
}

/// Samples from `N(0, std^2)`.
pub fn normal<T: Float, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], std: f64) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape.to_vec(), |_| T::lit(dist.sample(rng)))
}

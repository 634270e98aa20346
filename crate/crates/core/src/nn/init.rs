use rand::Rng;

use crate::nn::tensor::{Scalar, Tensor};

/// `[rows × cols]` matrix drawn from U(−r, r) with r = sqrt(6 / (rows + cols)).
pub fn glorot_uniform<T: Scalar, R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor<T> {
    let r = (6.0 / (rows + cols) as f64).sqrt();
    uniform(&[rows, cols], r, rng)
}

pub fn uniform<T: Scalar, R: Rng>(shape: &[usize], r: f64, rng: &mut R) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(rng.gen_range(-r..r))).collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

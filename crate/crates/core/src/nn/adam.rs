//! Adam with bias correction, one state per parameter tensor.

use crate::error::{Error, Result};
use crate::nn::tape::{Gradients, ParamSet};
use crate::nn::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub t: u64,
    pub config: AdamConfig,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(shape: &[usize], config: AdamConfig) -> Self {
        AdamState { m: Tensor::zeros(shape), v: Tensor::zeros(shape), t: 0, config }
    }
}

/// One Adam update of `param` in place. Fails without touching anything if
/// the gradient holds a NaN or infinity.
pub fn adam_step<T: Scalar>(param: &mut Tensor<T>, grad: &Tensor<T>, state: &mut AdamState<T>) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != state.m.shape() {
        return Err(Error::Shape(format!(
            "adam: param {:?}, grad {:?}, state {:?}",
            param.shape(),
            grad.shape(),
            state.m.shape()
        )));
    }
    if !grad.all_finite() {
        return Err(Error::Numerical("non-finite gradient".into()));
    }
    let c = state.config;
    state.t += 1;
    let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
    let one = T::one();
    let bc1 = T::from_f64(1.0 - c.beta1.powi(state.t as i32));
    let bc2 = T::from_f64(1.0 - c.beta2.powi(state.t as i32));
    let (lr, eps) = (T::from_f64(c.lr), T::from_f64(c.eps));
    let (m, v) = (state.m.data_mut(), state.v.data_mut());
    for (j, (p, &g)) in param.data_mut().iter_mut().zip(grad.data()).enumerate() {
        m[j] = b1 * m[j] + (one - b1) * g;
        v[j] = b2 * v[j] + (one - b2) * g * g;
        let m_hat = m[j] / bc1;
        let v_hat = v[j] / bc2;
        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    states: Vec<AdamState<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamSet<T>, config: AdamConfig) -> Self {
        Adam { states: params.tensors().iter().map(|t| AdamState::new(t.shape(), config)).collect() }
    }

    pub fn steps(&self) -> u64 {
        self.states.first().map_or(0, |s| s.t)
    }

    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &Gradients<T>) -> Result<()> {
        if !grads.all_finite() {
            return Err(Error::Numerical("non-finite gradient".into()));
        }
        for ((p, g), s) in params.tensors_mut().iter_mut().zip(grads.tensors()).zip(&mut self.states) {
            adam_step(p, g, s)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Tensor::<f64>::vector(vec![0.0]);
        let mut s = AdamState::new(&[1], AdamConfig::default());
        adam_step(&mut p, &Tensor::vector(vec![1.0]), &mut s).unwrap();
        // m̂ = v̂ = 1, so the step is lr / (1 + eps)
        assert!((p.data()[0] + 0.001).abs() < 1e-10);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_param() {
        let mut p = Tensor::<f32>::vector(vec![0.25, -3.0]);
        let mut s = AdamState::new(&[2], AdamConfig::default());
        adam_step(&mut p, &Tensor::vector(vec![0.0, 0.0]), &mut s).unwrap();
        assert_eq!(p.data(), &[0.25, -3.0]);
    }

    #[test]
    fn states_are_independent() {
        let mut params = ParamSet::<f64>::new();
        let a = params.add("a", Tensor::vector(vec![1.0]));
        let b = params.add("b", Tensor::vector(vec![1.0]));
        let mut opt = Adam::new(&params, AdamConfig::default());
        let mut g = Gradients::zeros_like(&params);
        g.tensors_mut()[a.0].data_mut()[0] = 5.0;
        opt.step(&mut params, &g).unwrap();
        assert_eq!(params.get(b).data(), &[1.0]);
        assert!((params.get(a).data()[0] - 0.999).abs() < 1e-9);
    }

    #[test]
    fn non_finite_gradient_fails_fast() {
        let mut p = Tensor::<f64>::vector(vec![1.0, 2.0]);
        let mut s = AdamState::new(&[2], AdamConfig::default());
        let err = adam_step(&mut p, &Tensor::vector(vec![0.5, f64::NAN]), &mut s).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
        assert_eq!(p.data(), &[1.0, 2.0]);
        assert_eq!(s.t, 0);
    }
}

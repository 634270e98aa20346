//! Central finite-difference check of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::tape::{Gradients, ParamSet};

/// A scalar function of a parameter set with an analytic gradient.
pub trait Objective {
    fn loss(&self, params: &ParamSet<f64>) -> Result<f64>;
    fn loss_and_grad(&self, params: &ParamSet<f64>) -> Result<(f64, Gradients<f64>)>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordError {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<CoordError>,
    pub coords_checked: usize,
    /// `(tensor index, element index)` of every compared coordinate.
    pub coords: Vec<(usize, usize)>,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares the analytic gradient against `(f(θ+ε) − f(θ−ε)) / 2ε` on up to
/// `per_tensor` coordinates of every tensor, chosen by `seed`.
pub fn grad_check<O: Objective>(
    objective: &O,
    params: &ParamSet<f64>,
    eps: f64,
    per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Config(format!("gradient check step {eps} outside [1e-7, 1e-3]")));
    }
    let (_, grads) = objective.loss_and_grad(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, coords_checked: 0, coords: Vec::new() };
    for (ti, tensor) in params.tensors().iter().enumerate() {
        let n = tensor.len();
        let coords: Vec<usize> = if n <= per_tensor { (0..n).collect() } else { sample(&mut rng, n, per_tensor).into_vec() };
        for j in coords {
            let orig = tensor.data()[j];
            work.tensors_mut()[ti].data_mut()[j] = orig + eps;
            let plus = objective.loss(&work)?;
            work.tensors_mut()[ti].data_mut()[j] = orig - eps;
            let minus = objective.loss(&work)?;
            work.tensors_mut()[ti].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = grads.tensors()[ti].data()[j];
            let rel = rel_error(analytic, numeric);
            report.coords_checked += 1;
            report.coords.push((ti, j));
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some(CoordError {
                    tensor: params.names()[ti].clone(),
                    index: j,
                    analytic,
                    numeric,
                    rel_error: rel,
                });
            }
        }
    }
    Ok(report)
}

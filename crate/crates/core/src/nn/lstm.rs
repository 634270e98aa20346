//! LSTM cells and (bi)directional encoders built from tape primitives.
//!
//! Gates are packed in one `[4H × ·]` block in the order input, forget,
//! cell candidate, output:
//!
//! ```text
//! z  = x·W_xᵀ + h·W_hᵀ + b
//! i  = σ(z[0..H])    f = σ(z[H..2H])    g = tanh(z[2H..3H])    o = σ(z[3H..4H])
//! c' = f⊙c + i⊙g
//! h' = o⊙tanh(c')
//! ```

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::init::glorot_uniform;
use crate::nn::tape::{ParamId, ParamSet, Tape, Var};
use crate::nn::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmCellParams {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub input_size: usize,
    pub hidden: usize,
}

impl LstmCellParams {
    /// Adds `{prefix}.w_x`, `{prefix}.w_h` and `{prefix}.b` to `params`.
    pub fn register<T: Scalar, R: Rng>(
        params: &mut ParamSet<T>,
        prefix: &str,
        input_size: usize,
        hidden: usize,
        rng: &mut R,
    ) -> LstmCellParams {
        let w_x = params.add(format!("{prefix}.w_x"), glorot_uniform(4 * hidden, input_size, rng));
        let w_h = params.add(format!("{prefix}.w_h"), glorot_uniform(4 * hidden, hidden, rng));
        let b = params.add(format!("{prefix}.b"), Tensor::zeros(&[4 * hidden]));
        LstmCellParams { w_x, w_h, b, input_size, hidden }
    }

    pub fn shapes(input_size: usize, hidden: usize) -> [Vec<usize>; 3] {
        [vec![4 * hidden, input_size], vec![4 * hidden, hidden], vec![4 * hidden]]
    }
}

/// One LSTM transition for a batch of rows.
pub fn lstm_step<T: Scalar>(
    tape: &mut Tape<'_, T>,
    cell: &LstmCellParams,
    x: Var,
    h: Var,
    c: Var,
) -> Result<(Var, Var)> {
    let hd = cell.hidden;
    for (name, v, want) in [("x", x, cell.input_size), ("h", h, hd), ("c", c, hd)] {
        let got = tape.value(v).cols();
        if got != want {
            return Err(Error::Shape(format!("lstm_step: {name} has {got} columns, cell expects {want}")));
        }
    }
    let zx = tape.matmul_t(x, Var::Param(cell.w_x.0))?;
    let zh = tape.matmul_t(h, Var::Param(cell.w_h.0))?;
    let z = tape.add(zx, zh)?;
    let z = tape.add_bias(z, Var::Param(cell.b.0))?;
    let i_pre = tape.slice_cols(z, 0, hd)?;
    let f_pre = tape.slice_cols(z, hd, hd)?;
    let g_pre = tape.slice_cols(z, 2 * hd, hd)?;
    let o_pre = tape.slice_cols(z, 3 * hd, hd)?;
    let i = tape.sigmoid(i_pre);
    let f = tape.sigmoid(f_pre);
    let g = tape.tanh(g_pre);
    let o = tape.sigmoid(o_pre);
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_next = tape.add(fc, ig)?;
    let tc = tape.tanh(c_next);
    let h_next = tape.mul(o, tc)?;
    Ok((h_next, c_next))
}

/// Hidden states of one direction over a padded batch of sequences.
#[derive(Debug, Clone)]
pub struct DirectionOutput {
    /// State after each row's last real input.
    pub final_h: Var,
    /// `per_step[t]` row `u` is the state right after consuming position `t`
    /// of sequence `u` (meaningless once `t >= lengths[u]`).
    pub per_step: Vec<Var>,
}

/// Runs `cell` over `steps` (one `[U × D]` input per position) from a zero
/// state. Row `u` only advances while `t < lengths[u]`; in reverse mode every
/// row starts at its own last position.
pub fn run_direction<T: Scalar>(
    tape: &mut Tape<'_, T>,
    cell: &LstmCellParams,
    steps: &[Var],
    lengths: &[usize],
    reverse: bool,
) -> Result<DirectionOutput> {
    if steps.is_empty() || lengths.iter().any(|&l| l == 0) {
        return Err(Error::Shape("lstm encoder: empty sequence".into()));
    }
    let rows = lengths.len();
    if let Some(&bad) = lengths.iter().find(|&&l| l > steps.len()) {
        return Err(Error::Shape(format!("lstm encoder: length {bad} exceeds {} steps", steps.len())));
    }
    let mut h = tape.input(Tensor::zeros(&[rows, cell.hidden]));
    let mut c = tape.input(Tensor::zeros(&[rows, cell.hidden]));
    let mut per_step = vec![h; steps.len()];
    let order: Vec<usize> = if reverse { (0..steps.len()).rev().collect() } else { (0..steps.len()).collect() };
    for t in order {
        let (h_new, c_new) = lstm_step(tape, cell, steps[t], h, c)?;
        let active: Vec<bool> = lengths.iter().map(|&l| t < l).collect();
        if active.iter().all(|&a| a) {
            h = h_new;
            c = c_new;
        } else {
            h = tape.select(active.clone(), h_new, h)?;
            c = tape.select(active, c_new, c)?;
        }
        per_step[t] = h;
    }
    Ok(DirectionOutput { final_h: h, per_step })
}

/// Final forward and backward states of a bidirectional encoder over a
/// batch of variable-length sequences.
pub fn bilstm_encode_batch<T: Scalar>(
    tape: &mut Tape<'_, T>,
    fwd: &LstmCellParams,
    bwd: &LstmCellParams,
    steps: &[Var],
    lengths: &[usize],
) -> Result<(DirectionOutput, DirectionOutput)> {
    let f = run_direction(tape, fwd, steps, lengths, false)?;
    let b = run_direction(tape, bwd, steps, lengths, true)?;
    Ok((f, b))
}

/// Single-sequence convenience: `seq` holds one input vector per position.
pub fn bilstm_encode<T: Scalar>(
    tape: &mut Tape<'_, T>,
    fwd: &LstmCellParams,
    bwd: &LstmCellParams,
    seq: &[Vec<T>],
) -> Result<(Var, Var)> {
    if seq.is_empty() {
        return Err(Error::Shape("bilstm_encode: empty sequence".into()));
    }
    let steps: Vec<Var> = seq.iter().map(|x| tape.input(Tensor::vector(x.clone()))).collect();
    let (f, b) = bilstm_encode_batch(tape, fwd, bwd, &steps, &[seq.len()])?;
    Ok((f.final_h, b.final_h))
}

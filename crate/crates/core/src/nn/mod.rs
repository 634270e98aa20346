//! Small numerical core: tensors, a reverse-mode tape, LSTM cells, Adam and
//! finite-difference gradient checking.

pub mod adam;
pub mod gradcheck;
pub mod init;
pub mod lstm;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, Adam, AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckReport, Objective};
pub use lstm::{bilstm_encode, bilstm_encode_batch, lstm_step, LstmCellParams};
pub use tape::{Gradients, ParamId, ParamSet, Tape, Var, XentTargets};
pub use tensor::{Scalar, Tensor};

//! Romanian diacritics restoration.
//!
//! A character-window BiLSTM, the averaged embedding of the current word and
//! a BiLSTM over the sentence's word embeddings are concatenated and fed to a
//! dense classifier that decides, for every `a`, `i`, `s` and `t` of
//! diacritic-free text, which mark (if any) it should carry.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod embeddings;
pub mod error;
pub mod eval;
mod io_util;
pub mod model;
pub mod nn;
pub mod textnorm;
pub mod train;

pub use error::{Error, ErrorKind, Result};

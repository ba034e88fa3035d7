//! Channel shuffle for tiny vision transformers.
//!
//! A shuffled transformer embeds patches into twice the usual width, runs
//! each layer on one half of the channels (the attended group) while the other
//! half (the idle group) passes through, and riffles the two halves together
//! at the end of every layer. This crate provides:
//!
//! * [`tensor`]: a small `f64` tensor engine with reverse-mode gradients and
//!   a finite-difference checker,
//! * [`vit`]: the plain pre-LN transformer backbone,
//! * [`shuffle`]: the channel shuffle module and grouped downsampling,
//! * [`complexity`]: exact MACs and parameter accounting,
//! * [`harness`]: datasets, training, evaluation, checkpoints and channel
//!   statistics.

pub mod complexity;
pub mod config;
pub mod error;
pub mod harness;
pub mod model;
pub mod params;
pub mod shuffle;
pub mod tensor;
pub mod vit;

pub use config::{ModelConfig, StageConfig};
pub use error::{Error, Result};
pub use model::Model;
pub use tensor::{Gradients, Tape, Tensor, Var};

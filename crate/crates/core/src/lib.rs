//! Coupled recurrent networks over a small reverse-mode tensor core.
//!
//! Two convolutional-LSTM branches process paired input streams and exchange
//! hidden state each step through interpretation (RIB) and adaptation (RAB)
//! blocks. The crate provides the tensor/autodiff substrate, the model
//! assemblies (coupled, non-coupled, early/late fusion), selected-timestep
//! supervision, an SGD-momentum trainer, deterministic synthetic tasks, and a
//! CLI harness for training, evaluation, gradient checking, and ablations.

pub mod checkpoint;
pub mod config;
pub mod convlstm;
pub mod coupling;
pub mod crn;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod objective;
pub mod optim;
pub mod params;
pub mod synthdata;
pub mod tensor;

pub use error::{CrnError, Result};

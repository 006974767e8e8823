//! Drug–target binding affinity prediction with a hybrid graph/transformer
//! encoder, dynamic prompts and multi-view fusion, on top of a small
//! reverse-mode autodiff engine.

pub mod affinity;
pub mod autograd;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod encoders;
pub mod error;
pub mod fixtures;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod prompt;
pub mod protein;
pub mod rng;
pub mod smiles;
pub mod tensor;
pub mod train;
pub mod transformer;

pub use error::{Error, Result};

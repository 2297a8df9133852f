//! Semi-supervised feature selection for tabular data.
//!
//! A multi-task denoising autoencoder is pretrained on unlabeled rows
//! (mask-location estimation plus value reconstruction under same-column
//! masking), then a batch-attention weight generator is trained with the few
//! available labels to score every feature. The top-k features by weight form
//! the selected subset.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod harness;
pub mod masking;
pub mod nn;
pub mod noise;
pub mod pretext;
pub mod rng;
pub mod selector;

pub use error::{Error, Result};

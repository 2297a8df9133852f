//! Minimal deterministic dense-network engine.

pub mod checkpoint;
pub mod layer;
pub mod loss;
pub mod matrix;
pub mod optim;

pub use checkpoint::Checkpoint;
pub use layer::{flatten_grads, sigmoid, softmax, Activation, Dense, DenseGrads, Mlp};
pub use loss::{bce, categorical_cross_entropy, mse, LossOutput};
pub use matrix::Matrix;
pub use optim::{Optimizer, OptimizerKind};

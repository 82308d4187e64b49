//! Self-knowledge distillation for image classifiers.
//!
//! Two regularizers built from the network's own outputs:
//!
//! * **Reverse guidance**: an auxiliary classifier attached to a shallow block acts as a
//!   weak teacher; the full model is pulled toward its softened prediction.
//! * **Shape-wise regularization**: each sample's logits are sorted ascending and matched,
//!   by KL divergence, to the sorted logits of a sample from the previous iteration.
//!
//! The crate carries its own small CPU engine (convolution, batch norm, residual blocks)
//! in `f64`, so every gradient can be checked against finite differences.

pub mod analysis;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod losses;
pub mod model;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use losses::{LogitVector, OneHotLabel, ProbabilityDistribution, Temperature};
pub use model::{attach_auxiliary, model_registry, AcSpec, BlockSequentialModel, Scaffold, TapPoint};
pub use tensor::Tensor;
pub use train::{Method, Network, Trainer, TrainingConfig};

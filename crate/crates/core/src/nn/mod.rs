//! Minimal dense network engine: tensors, MLPs with exact gradients,
//! momentum SGD and parameter checkpoints.

pub mod checkpoint;
pub mod mlp;
pub mod optim;
pub mod params;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use mlp::{Dense, Mlp, MlpCache};
pub use optim::SgdMomentum;
pub use params::{ParamRef, ParamSet};
pub use tensor::Tensor;

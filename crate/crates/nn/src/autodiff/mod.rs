//! Minimal reverse-mode automatic differentiation over dense f64 tensors.

pub mod checkpoint;
pub mod conv;
pub mod ops;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use conv::{Conv2d, Conv2dParams};
pub use optim::{lr_linear_decay, AdamConfig, AdamState};
pub use params::{BoundParams, ParamStore};
pub use tape::{Function, Gradients, Tape, Var};
pub use tensor::Tensor;

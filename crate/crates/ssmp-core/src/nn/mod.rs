//! Minimal tensor/autodiff stack the reconstruction network is built on.

pub mod check;
pub mod layers;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use layers::{ConvBlock, LayerNorm, Linear, Mlp, ParamId, ParamSet, TapeParams};
pub use tape::{chamfer_to_const, Tape, Var};
pub use tensor::Tensor;

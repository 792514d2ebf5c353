//! Minimal tensors, reverse-mode differentiation and the Adam optimizer shared
//! by the denoiser and the beat classifier.

mod params;
mod tape;
mod tensor;

pub use params::{fan_in_normal, small_normal, Adam, ParamId, ParamStore};
pub use tape::{ParamGrads, Tape, Var};
pub use tensor::Tensor;
pub(crate) use tensor::gemm;

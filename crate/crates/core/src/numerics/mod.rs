//! Dense tensors, GEMM dispatch and seeded randomness.
//!
//! Everything above this module works on row-major [`Tensor`] values. The
//! element type is generic so the encoder can run in `f32` for throughput
//! while the loss, gradient checks and diagnostics stay in `f64`.

mod rng;
mod scalar;
mod tensor;

pub use rng::{Purpose, RngState};
pub use scalar::{gemm, Scalar};
pub use tensor::{ElementwiseOp, Operand, Tensor};

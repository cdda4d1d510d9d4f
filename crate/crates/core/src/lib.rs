//! Dataset condensation by minimizing the maximum mean discrepancy (MMD)
//! between encoder representations of real and synthetic images.

pub mod condenser;
pub mod data;
pub mod encoder;
pub mod error;
pub mod evalharness;
pub mod kernels;
pub mod mmd;
pub mod numerics;

pub use error::{Error, Result};

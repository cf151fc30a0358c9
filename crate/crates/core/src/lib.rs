//! Numerical toolkit for cross-modality state-space fusion under adverse
//! weather: selective state-space scans and the gated two-stream fusion
//! block built on them, conditional implicit-diffusion sampling, synthetic
//! rain/snow/fog degradation, and restoration/detection metrics and losses.

pub mod diffusion;
pub mod error;
pub mod fusion;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod ssm;
pub mod tensor;
pub mod weather;

pub use error::{Error, Result};
pub use tensor::{SeededRng, Tensor};

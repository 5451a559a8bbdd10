//! Two-stream video classification on CPU: an RGB stream and an optical-flow
//! stream are encoded by pooled-attention backbones and fused by a
//! class-token transformer encoder.
//!
//! Everything numeric is `f64` and runs on a small reverse-mode tape
//! ([`Tape`]). Randomness comes from seeded ChaCha8 streams ([`rng`]), so a
//! run is a pure function of its configuration.

pub mod backbone;
pub mod config;
pub mod error;
pub mod flow;
pub mod fusion;
pub mod model;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod video;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};

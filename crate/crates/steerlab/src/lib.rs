//! steerlab: an activation-steering laboratory for small decoder-only
//! transformers.
//!
//! The crate covers the full loop of a steering study:
//!
//! 1. build per-layer steering vectors from contrastive prompt continuations
//!    ([`steering`]),
//! 2. generate text while adding those vectors into the residual stream under
//!    a two-phase schedule ([`decoding`], [`model`]),
//! 3. score the outputs for attack success, degeneration, and fluency
//!    ([`metrics`]),
//! 4. drive whole datasets and parameter sweeps with resumable, deterministic
//!    runs ([`experiment`]).
//!
//! Everything runs on CPU with plain f32 math; [`fixture`] builds small
//! self-contained models so the full pipeline is testable without external
//! weights.

pub mod decoding;
pub mod experiment;
pub mod fixture;
pub mod metrics;
pub mod model;
pub mod steering;
pub mod tensor;

pub use tensor::{Tensor, TensorError};

//! Structured semi-supervised variational autoencoder.
//!
//! A discrete label `ℓ` and a continuous style `z` are inferred by a
//! recognition model that conditions the style on the label, and decoded by
//! a generative model `p(x | z, ℓ)`. Unlabelled data enter either by exact
//! marginalisation over the label or by feeding the label probability vector
//! straight into the networks; a supervision rate controls how many rows of
//! each minibatch are drawn from the small labelled pool.
//!
//! The crate is `no_std` (with `alloc`). The default `std` feature only turns
//! on runtime SIMD dispatch in the matrix-multiply kernel.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod data;
pub mod distributions;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{
    Batch, Bound, EstimatorMode, LossBreakdown, ModelSpec, StructuredVAE, StyleNoise, PARAM_NAMES,
};
pub use tape::{Gradients, OpKind, Tape, Var};
pub use tensor::{Shape, Tensor};

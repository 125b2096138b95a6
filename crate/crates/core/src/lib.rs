//! Latent neural integral operators with fixed-point dynamics for encoding
//! and decoding spatiotemporal signals.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod config;
pub mod data;
pub mod error;
pub mod exec;
pub mod fixed_point;
pub mod gradcheck;
pub mod latent;
pub mod model;
pub mod operator;
pub mod quadrature;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod util;

pub use error::{Error, Result};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

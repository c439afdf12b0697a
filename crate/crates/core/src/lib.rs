//! Wasserstein adversarial domain generalization at desk scale.
//!
//! The crate bundles a small reverse-mode autodiff engine ([`diffmath`]),
//! MLP feature extractor / classifier / critic networks ([`model`]), every
//! loss term of the objective ([`losses`]), exact optimal-transport and
//! metric-learning reference implementations ([`oracle`]), synthetic
//! multi-domain benchmarks ([`data`]) and the alternating min-max trainer
//! with its ablation harness ([`trainer`]).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod data;
pub mod diffmath;
pub mod error;
pub mod losses;
pub mod model;
pub mod oracle;
pub mod seed;
pub mod trainer;

pub use diffmath::{Tape, Tensor, Var};
pub use error::{Result, WadgError};

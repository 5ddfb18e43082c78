//! Stochastic reaction-diffusion on the torus and its coupling to the
//! parabolic Anderson model.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod cli;
pub mod config;
pub mod coupling;
pub mod ensemble;
pub mod error;
pub mod experiments;
pub mod noise;
pub mod reaction;
pub mod solver;
pub mod stats;
pub mod torus;

pub use error::{Error, Result};

//! Continuous-time modeling of information cascades for popularity
//! prediction.
//!
//! The pipeline runs in stages:
//!
//! 1. [`data`] parses cascades, windows them at an observation time, and
//!    builds cascade and global graphs.
//! 2. [`embed`] produces heat-wavelet embeddings for cascade graphs and a
//!    factorized or loaded embedding for the global graph.
//! 3. [`encoder`] turns the embeddings into per-event jump conditions with
//!    prefix self-attention.
//! 4. [`dynamics`] evolves a latent state with a neural vector field,
//!    applies gated jumps at events, aligns it to the observation time, and
//!    integrates the point-process compensator alongside.
//! 5. [`model`] predicts popularity, computes the loss and metrics, and
//!    trains everything with reverse-mode gradients.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod data;
pub mod dynamics;
pub mod embed;
pub mod encoder;
pub mod error;
pub mod model;
pub mod nn;
pub mod ode;
pub mod par;
pub mod tpp;

pub use error::{Error, ErrorKind, Result};

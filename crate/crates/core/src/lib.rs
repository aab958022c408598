//! Multi-domain generalization objective built on Gaussian feature statistics.
//!
//! The crate is organised bottom-up:
//!
//! - [`linalg`] and [`autodiff`]: dense matrices and a define-by-run tape.
//! - [`gaussian`]: empirical Gaussian statistics, entropy, KL, Schur complements.
//! - [`divergence`]: exact discrete entropy/KL/GJSD and the oracle-prior bound.
//! - [`losses`]: the four alignment/regularization losses and their ablations.
//! - [`synth`]: the synthetic three-domain regression generator.
//! - [`model`] and [`trainer`]: small MLPs, SGD, leave-one-domain-out training.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod config;
pub mod divergence;
pub mod error;
pub mod gaussian;
pub mod gradcheck;
pub mod io;
pub mod linalg;
pub mod losses;
pub mod model;
pub mod par;
pub mod rng;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};

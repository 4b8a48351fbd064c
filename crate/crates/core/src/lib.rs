//! Particle-optimization variational inference.
//!
//! A set of particles is transported toward a target density by kernelized
//! velocity fields: SVGD, kde-WGD, and the entropy-regularized ERGD and
//! s-ERGD updates with their β schedules. Around the engine sit closed-form
//! and neural-network targets, sample-quality and ensemble diagnostics, data
//! and config I/O, and the `povi` command-line harness.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod diagnostics;
pub mod dynamics;
pub mod engine;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod kernel;
pub mod nnet;
pub mod target;

pub use error::{Error, Result};

//! Guaranteed bounds on the probability that a feedforward network satisfies
//! an affine safety property when its input is Gaussian.
//!
//! The pipeline: [`gauss`] provides box probabilities and sampling under a
//! diagonal Gaussian; [`model`] holds networks, parsers and the safety
//! property; [`bounds`] soundly classifies a box as safe/unsafe/unknown via
//! interval and backward linear bound propagation; [`subdivide`] builds
//! boundary-aware regression trees over a region; [`engine`] runs the
//! probability-prioritized refinement loop and assembles the final interval
//! `[L_s, U_s]`.

pub mod bounds;
pub mod engine;
pub mod error;
pub mod gauss;
pub mod model;
pub mod subdivide;

pub use error::{Error, Result};

//! Finite-rate symbiotic branching: an explicit SPDE simulator, the
//! coloured-particle moment dual, and a Monte Carlo harness that checks one
//! against the other.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod brownian;
pub mod cli;
pub mod dual;
pub mod duality_scaling;
pub mod error;
pub mod estimate;
pub mod grid;
pub mod interface;
pub mod moments;
pub mod quad;
pub mod rng;
pub mod spde;
pub mod stats;
pub mod verify;

pub use error::{Result, SbmError};
pub use estimate::{ComplexEstimate, MomentEstimate};
pub use grid::{FieldPair, GridSpec, ModelParams};
pub use rng::{RngStream, SeedPlan, StreamTag};

//! Projection-based Monte Carlo maximum likelihood for spatial generalized
//! linear mixed models.

// `!(a > b)` forms are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod glm;
pub mod kernels;
pub mod linalg;
pub mod mcml;
pub mod model;
pub mod predict;
pub mod projection;
pub mod rng;
pub mod sampler;
pub mod simulate;
pub mod uncertainty;

pub use error::{Result, SglmmError};

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

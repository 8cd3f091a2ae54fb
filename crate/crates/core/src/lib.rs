//! Optimal transport between stationary point processes, at desk scale.
//!
//! Samplers for Poisson, lattice and perturbed-grid processes, exact box
//! matchings and per-volume cost estimators, displacement interpolation, the
//! boundary modification that equalises box counts, specific entropy and Fisher
//! information, and Brownian semigroups with the checks built on them.

// `!(x > 0.0)` also rejects NaN, which is the point
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dynamics;
pub mod entropy;
pub mod error;
pub mod geodesics;
pub mod geometry;
pub mod heat;
pub mod modification;
pub mod parallel;
pub mod processes;
pub mod quadrature;
pub mod rng;
pub mod stats;
pub mod validation;
pub mod transport;

pub use error::{Error, Result};
pub use geometry::{BoxSpec, Configuration, Point, Window};
pub use rng::RngStream;

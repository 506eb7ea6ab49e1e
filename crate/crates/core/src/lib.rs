//! Occupancy-field surface reconstruction from sparse, noisy, unoriented point clouds.
//!
//! A small coordinate MLP predicts two occupancy logits per point. Training pulls the
//! zero set of the margin `U = P(inside) - P(outside)` onto the input samples with a
//! single generalized Newton step per query, while an entropy term drives the field to
//! be decided everywhere except at the input points. The surface is then extracted with
//! marching cubes and can be scored against a reference mesh.
//!
//! The crate is `no_std` (with `alloc`). The default `std` feature only enables runtime
//! CPU feature detection in the matrix kernels and the `std` paths of the RNG crates.
//! File formats, checkpoints and the command line live in the `occfit` crate.

#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod cloud;
pub mod diffnet;
mod error;
mod math;
pub mod field;
pub mod geom;
pub mod kdtree;
pub mod mesher;
pub mod metrics;
pub mod objective;
pub mod trainer;

pub use error::{Error, Result};
pub use geom::Vec3;

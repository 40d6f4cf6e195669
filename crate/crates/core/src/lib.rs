//! Metric convolutions: adaptive image convolutions whose sample locations
//! are points of unit balls of explicit Randers metrics.
//!
//! The crate is organised bottom-up:
//!
//! - [`metric`]: Randers metric evaluation, unit circles, duals, positivity
//!   floors and reconstruction of a metric from a sampled unit ball.
//! - [`params`]: maps from unconstrained raw numbers to valid metrics
//!   (Cholesky 5-number and spectral 6/7-number parameterizations).
//! - [`image`]: grayscale images, bilinear sampling, Sobel gradients, seeded
//!   noise, quality metrics and PGM/PNG I/O.
//! - [`sampling`]: kernel supports (reference, dilated, shifted, deformed) and
//!   the polar unit-ball sampling schemes.
//! - [`conv`]: the gather convolution engine and the intermediate head.
//! - [`heuristic`]: gradient-driven metric fields for edge-aware filtering.
//! - [`geodesic`]: the unit geodesic ball proof of concept.
//! - [`train`]: analytic gradients, gradient descent and the learning-rate finder.
//!
//! Pixel-parallel work goes through [`par`], which uses rayon when the
//! `parallel` feature is enabled and a plain loop otherwise. Results never
//! depend on the execution mode.

pub mod conv;
pub mod error;
pub mod geodesic;
pub mod heuristic;
pub mod image;
pub mod metric;
pub mod par;
pub mod params;
pub mod phantom;
pub mod report;
pub mod sampling;
pub mod selftest;
pub mod train;

pub use error::{Error, Result};
pub use metric::{RandersParams, Sym2, Vec2};

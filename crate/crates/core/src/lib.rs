//! Geometry of batch-normalized continuous piecewise-affine networks.
//!
//! A network with piecewise-linear activations is an affine spline: it
//! partitions its input space into convex regions and applies one affine map
//! per region. This crate computes those partitions, the hyperplanes and
//! folded hyperplanes that bound them, and how batch-normalization
//! statistics move them toward the data.
//!
//! * [`network`] evaluates networks, activation codes and per-region maps.
//! * [`batchnorm`] computes layer statistics and their sampling variance.
//! * [`geometry`] holds distances, total-least-squares fits and angle checks.
//! * [`partition`] traces exact 2-D partitions.
//! * [`concentration`] counts boundary facets near points.
//! * [`jitter`] studies mini-batch variability of the decision boundary.
//! * [`training`] is a small SGD trainer with manual backpropagation.
//! * [`datasets`] generates the synthetic data used by the experiments.
//! * [`checks`] is the seeded verification battery.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod batchnorm;
pub mod checks;
pub mod concentration;
pub mod datasets;
pub mod error;
pub mod geometry;
pub mod jitter;
pub mod network;
pub mod par;
pub mod partition;
pub mod rng;
pub mod svg;
pub mod training;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use network::{
    absorb_gamma, activation_code, forward, preactivation_normal, region_affine, Activation, ActivationCode, BNState, BnMode, BnParams,
    Layer, NetworkSpec, RegionAffine, Trace,
};

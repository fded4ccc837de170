//! Lattice flow graphs, differentiable Markov clustering and rotated-box
//! detection utilities.
//!
//! The pipeline: per-node stochastic flows over a grid ([`flow`]) become a
//! column-stochastic matrix, which Markov clustering ([`mcl`]) drives to
//! one-hot columns; clusters turn into oriented boxes ([`boxgen`]); a
//! cross-entropy flow loss backpropagates through the clustering iterations
//! ([`grad`]) and the flow mapping layer ([`fml`]) down to a small trainable
//! per-node predictor ([`toy`]).
//!
//! All numerical code is generic over a [`Scalar`] (`f32` or `f64`);
//! concrete aliases live at the crate root.

pub mod boxgen;
pub mod error;
pub mod flow;
pub mod fml;
pub mod geom;
pub mod grad;
pub mod grid;
pub mod labeling;
pub mod matrix;
pub mod mcl;
pub mod scalar;
pub mod toy;
#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use grid::{GridShape, NodeId};
pub use scalar::Scalar;

/// Double-precision flow maps.
pub type FlowMaps64 = flow::FlowMaps<f64>;
/// Single-precision flow maps.
pub type FlowMaps32 = flow::FlowMaps<f32>;
/// Double-precision flow matrix.
pub type FlowMatrix64 = matrix::FlowMatrix<f64>;
/// Single-precision flow matrix.
pub type FlowMatrix32 = matrix::FlowMatrix<f32>;

//! Multiview cross-supervision for binary segmentation.
//!
//! A set of calibrated views observes one object. Given per-view foreground
//! beliefs from any subset of views, epipolar geometry transfers them into any
//! other view: a target pixel's belief is the best joint support found along
//! its viewing ray. The transfer has a slow ray-sweep form and a fast
//! rectified row-scan form, is differentiable, and yields training losses
//! that let a small per-pixel model learn from sparsely labeled view sets.
//! Synthetic scenes, a voxel-carving oracle and metrics close the loop.

pub mod error;
pub mod eval;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod losses;
pub mod model;
pub mod rectification;
pub mod synth;
pub mod transfer;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use grid::{BinaryMask, PixelGrid, ProbMap};

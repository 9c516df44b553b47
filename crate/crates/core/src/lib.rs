//! Occlusion fields for non-line-of-sight surface reconstruction.
//!
//! The crate covers the whole desk-scale pipeline: confocal transient rendering of
//! hidden meshes, ground-truth occlusion labels by ray casting against a BVH,
//! fitting an implicit occlusion field with a small coordinate network, surface
//! extraction by marching cubes plus centroid-visibility segmentation, the
//! normal-ray Fermat filter, SPAD-style noise, and mesh/label metrics.

pub mod error;
pub mod field;
pub mod geometry;
pub mod metrics;
pub mod noise;
pub mod occlusion;
pub mod binio;
pub mod render;
pub mod scene;
pub mod surface;

pub use error::{Error, Result};

//! Semi-supervised single-view 3D point-cloud reconstruction.
//!
//! The crate is organized around six subsystems:
//!
//! - [`cloud`] / [`cloud_io`] / [`spatial`] — point-cloud data model,
//!   chamfer distance and its gradient, farthest point sampling, unit-sphere
//!   normalization, exact nearest-neighbor index, and serialization.
//! - [`fusion`] — per-category shape priors: a point-cloud autoencoder,
//!   latent-space k-means prototypes, and chamfer-weighted fusion of the
//!   prototypes into one initial cloud.
//! - [`net`] — the reconstruction network: image encoder, attribute-flow
//!   encoder (geometric modulation + semantic subspace), shape-matching
//!   deformer (neighborhood attention + adaptive instance normalization),
//!   and a self-attention displacement decoder.
//! - [`train`] — two-stage training: supervised warm-up of the teacher,
//!   then EMA teacher-guided training of the student under weak/strong
//!   image perturbations and feature perturbation.
//! - [`data`] — procedural synthetic datasets with rendered single views,
//!   label-ratio splitting, and ingestion of external directories.
//! - [`eval`] / [`ablate`] — evaluation reports and the paired-seed
//!   ablation runner.

pub mod ablate;
pub mod checkpoint;
pub mod cloud;
pub mod cloud_io;
pub mod data;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod img;
pub mod net;
pub mod nn;
pub mod pipeline;
pub mod spatial;
pub mod train;

pub use cloud::{
    chamfer_distance, chamfer_distance_brute, chamfer_distance_grad, farthest_point_sample,
    normalize_unit_sphere, PointCloud,
};
pub use error::{Error, Result};
pub use spatial::SpatialIndex;

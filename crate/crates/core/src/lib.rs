//! LiDAR place recognition in a learned Mahalanobis space.
//!
//! The crate covers the whole offline pipeline:
//!
//! * [`scan_io`] reads KITTI-layout velodyne scans and pose files.
//! * [`projection`] turns a scan into multi-layer range-view and bird's-eye-view
//!   images and stacks them into a pseudo-global view.
//! * [`descriptor_store`] persists global descriptors (and computes a
//!   Fourier-profile baseline descriptor when no external network is available).
//! * [`mapvlm`] fits the metric: PCA, locality-weighted discriminant analysis
//!   and the low-rank positive semi-definite matrix `M = W1 W2 W2ᵀ W1ᵀ`.
//! * [`metric_index`] answers k-nearest-neighbour queries under that metric.
//! * [`evaluation`] computes AR@N, precision/recall, AUC, F1max and Recall@1%.
//! * [`triplet`] evaluates the Mahalanobis triplet loss and mines hard samples.

pub mod descriptor_store;
pub mod error;
pub mod evaluation;
pub mod mapvlm;
pub mod metric_index;
pub mod projection;
pub mod scan_io;
pub mod triplet;

pub use error::{Error, Result};

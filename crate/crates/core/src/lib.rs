//! Statistical shape model construction and evaluation.
//!
//! Binary segmentation volumes are turned into closed surfaces, correspondence
//! particle systems are optimized over cohorts of those surfaces, PCA shape
//! spaces are fitted to the particles, and the resulting models are scored
//! with compactness, specificity, generalization and Grassmannian distance.
//! Segmentation-level overlap and surface-distance metrics are provided for
//! comparing predicted masks with manual ones.

pub mod error;
pub mod geometry;
pub mod io;

pub use error::{Error, Result};
pub mod particles;
pub mod pipeline;
pub mod procrustes;
pub mod optimizer;
pub mod shapespace;
pub mod seg_metrics;
pub mod ssm_metrics;
pub mod synth;

pub use particles::ParticleSystem;

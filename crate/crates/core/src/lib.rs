//! Sparse-view radiance field laboratory.
//!
//! Trains small neural radiance fields from three or nine posed views with
//! frequency, occlusion, depth and feature regularisers, distils a
//! teacher into a higher-capacity student, fuses candidate renders and scores
//! them with masked image metrics.

pub mod autodiff;
pub mod encoding;
pub mod error;
pub mod field;
pub mod geometry;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod pipelines;
pub mod priors;
pub mod renderer;
pub mod scene;

pub use error::{Error, Result};

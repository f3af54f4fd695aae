//! Unsupervised interest-point learning by maximizing the joint probability
//! that extracted points are sparse, repeatable and discriminative.
//!
//! The crate is organized bottom-up:
//!
//! - [`model`]: a small fully-convolutional detector/descriptor with a shared
//!   encoder, exact analytic backward pass, Adam and text checkpoints.
//! - [`properties`]: sparsity, repeatability and discriminability
//!   probabilities and the latent log-likelihood item.
//! - [`em`]: mini-batch expectation maximization (local-maximum latent mask,
//!   log-domain sample-space counts, approximate posterior, gradients, the
//!   training loop).
//! - [`oracle`]: brute-force enumeration over tiny latent sample spaces.
//! - [`simulate`]: photometric transforms, random homographies, warping and
//!   ground-truth correspondences, synthetic shape scenes.
//! - [`eval`]: point extraction, mutual nearest-neighbour matching, matching
//!   score, RANSAC homography estimation and visualization.
//! - [`cli`]: configuration and the `train`/`eval`/`oracle-check`/`visualize`
//!   commands behind the `pointprops` binary.

pub mod cli;
pub mod em;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod grid;
pub mod image;
pub mod model;
pub mod oracle;
pub mod properties;
pub mod rng;
pub mod simulate;

pub use crate::error::{Error, Result};
pub use crate::geometry::Homography;
pub use crate::grid::Grid;
pub use crate::image::Image;

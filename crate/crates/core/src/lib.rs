//! Privacy-preserving erythema masks by counterfactual twin synthesis.
//!
//! The pipeline de-identifies a source image with an inversion-free flow edit,
//! regenerates the surrogate as a pathological/healthy twin pair from one
//! latent anchor, subtracts their CIELAB a* channels, and thresholds the
//! difference at an IoU-calibrated level. A federated simulation then trains
//! a tiny segmenter on the surrogate artifacts and audits what leaves each
//! client.

pub mod cli;
pub mod colorlab;
pub mod error;
pub mod fedsim;
pub mod flowedit;
pub mod histstats;
pub mod io;
pub mod maskdiff;
pub mod rng;
pub mod toyflow;
pub mod twinsynth;

pub use colorlab::{AStarPlane, DiffMap, LabImage, RgbImage};
pub use error::{Error, Result};
pub use maskdiff::{BinaryMask, CalibrationResult};

//! Facial expression recognition from face crops and their visual-saliency
//! products.
//!
//! The pipeline runs: [`dataset`] scan and split, [`face`] detection and
//! cropping, [`saliency`] maps, the [`product`] of face and map, a
//! [`classifier`] trained by [`trainer`], and [`evaluation`] into confusion
//! matrices and experiment reports. [`synthetic`] draws fixture datasets in
//! the same on-disk layouts as the real ones.

pub mod classifier;
pub mod cli;
pub mod dataset;
pub mod emotion;
pub mod error;
pub mod evaluation;
pub mod face;
pub mod image;
pub mod pipeline;
pub mod product;
pub mod saliency;
pub mod synthetic;
pub mod trainer;

pub use emotion::{Emotion, NUM_CLASSES};
pub use error::{Error, Result};

//! Scene completion for semantically labeled indoor point clouds.
//!
//! Partial object observations are segmented out of a labeled scene, matched
//! against a database of complete synthetic models, and replaced by the best
//! match. The completed objects feed an augmented scene cloud and a 2D
//! navigation costmap.

pub mod augmentation;
pub mod cloud;
pub mod costmap;
pub mod error;
pub mod evalkit;
pub mod modeldb;
pub mod pipeline;
pub mod registration;
pub mod segmentation;

pub use error::{Error, Result};

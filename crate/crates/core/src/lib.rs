//! Coarse-to-fine registration of a low-resolution functional ventricle cloud
//! onto a high-resolution anatomical one, and voxel fusion of the two
//! volumes, with a synthetic phantom generator for ground-truth checks.

pub mod cli;
pub mod coarse;
pub mod error;
pub mod fine;
pub mod geometry;
pub mod io;
pub mod landmarks;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod transform;
pub mod umeyama;
pub mod volume;

pub use error::{Error, Result};

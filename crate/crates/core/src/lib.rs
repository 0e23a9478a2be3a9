//! Water free-space segmentation for unmanned surface vehicles from a
//! current camera frame and a few previous frames.

pub mod alignment;
pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod contour;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod harness;
pub mod kernels;
pub mod losses;
pub mod params;
pub mod report;
pub mod synthgen;
pub mod tensor;

pub use error::{Error, Result};

//! Photometric depth super-resolution.
//!
//! Upsamples a low-resolution depth map to the resolution of its companion
//! RGB data by jointly solving depth super-resolution with photometric
//! 3D-reconstruction: shape-from-shading for a single RGB-D frame, or
//! uncalibrated photometric stereo for a sequence captured under varying
//! lighting. Ships with a synthetic benchmark generator and the evaluation
//! metrics used to score reconstructions.

pub mod error;
pub mod filters;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod operators;
pub mod report;
pub mod sfs;
pub mod shading;
pub mod solvers;
pub mod synth;
pub mod ups;

pub use error::{Error, Result};

//! Instance-decomposed 4D Gaussian splatting on the CPU.
//!
//! Gaussians carry an identity feature alongside their appearance. Each input
//! video owns a learnable `K x K` latent whose Sinkhorn normalization maps the
//! shared canonical instance ids onto that video's own segmentation ids, so
//! inconsistent per-view labels can supervise one identity field directly.
//! After the first frame is fitted, per-instance motion bases carry the
//! Gaussians through the remaining timesteps by dual-quaternion blending.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, run
//! directories, and the command line live in the `inst4dgs` crate.

#![no_std]
// `Float` supplies f64 math without std; it looks unused whenever a
// dependency links std into the same build.
#![allow(unused_imports)]

extern crate alloc;

pub mod align;
pub mod camera;
pub mod checks;
pub mod dataset;
pub mod error;
pub mod gaussian;
pub mod geometry;
pub mod image;
pub mod metrics;
pub mod optim;
pub mod raster;
pub mod rng;
pub mod scaffold;
pub mod synth;

pub use error::{Error, Result};

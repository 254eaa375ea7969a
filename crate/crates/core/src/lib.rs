//! Two-stage surface-defect detector trainable under weak, mixed and full
//! supervision.
//!
//! The crate is `no_std` + `alloc`. Everything here is a pure computation over
//! in-memory data: the segmentation/classification network and its backward
//! pass, the supervision-gated loss with distance-transform pixel weighting,
//! the balanced negative sampler, mask rasterizers, a procedural defect
//! generator, the SGD training loop and the per-image metrics. File formats,
//! dataset layouts and the command line live in the `segdec` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod data;
pub mod ellipse;
pub mod error;
pub mod experiment;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod raster;
pub mod real;
pub mod rle;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use model::{ModelConfig, ModelOutput, ParamGroup, SegDecNet, Widths};
pub use raster::{Image, Mask};
pub use real::Real;

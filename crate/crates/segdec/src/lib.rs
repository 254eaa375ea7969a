//! Dataset adapters, on-disk formats and the command line front end for
//! [`segdec_core`].

pub mod checkpoint;
pub mod cli;
pub mod datasets;
pub mod history;
pub mod imageio;
pub mod manifest;
pub mod plot;
pub mod report;
pub mod synth_io;

pub use segdec_core as core;

//! Melt-pool cross-section prediction from sequences of surface thermal images.
//!
//! The crate is organised around the data flow of the toolkit:
//!
//! * [`geometry`] converts between explicit cross-section contours and the
//!   truncated signed-distance images used as regression targets.
//! * [`ingest`] loads 16-bit thermal frames and turns them into cropped,
//!   averaged, windowed and normalized model inputs.
//! * [`synthdata`] generates paired surface sequences and cross-sections from a
//!   moving point-source conduction model.
//! * [`nn`] is a small reverse-mode autodiff engine that the networks in
//!   [`model`] are written against.
//! * [`metrics`] holds the evaluation quantities.
//! * [`pipeline`] ties everything together: splits, training, fine-tuning,
//!   evaluation sweeps and hatch analysis.

pub mod error;
pub mod geometry;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod synthdata;

pub use error::{Error, Result};

//! Sparse block-DCT frame representations and the autoregressive machinery
//! built on top of them.
//!
//! The pipeline runs RGB frames through [`colorspace`] into YCbCr planes,
//! [`blockdct`] into quantized coefficient blocks, and [`sparse`] into the
//! ordered `(channel, position, value)` token list. [`sequence`] scores and
//! samples those token lists behind the [`sequence::Predictor`] seam,
//! [`tasks`] schedules multi-frame conditional generation, [`metrics`]
//! measures reconstructions and sparsity, and [`store`] owns every on-disk
//! format.

pub mod blockdct;
pub mod colorspace;
mod error;
pub mod metrics;
pub mod presets;
pub mod sequence;
pub mod sparse;
pub mod store;
pub mod tasks;

pub use error::{Error, Result};

//! Universal token space: command encoders, FSQ, decoders and alignment losses.

pub mod checkpoint;
pub mod fsq;
mod model;
pub mod nn;

pub use fsq::{fsq_quantize, FsqSpec, UniversalToken};
pub use model::*;

//! Restoration and reference-based colorization of black-and-white video.

pub mod attention;
pub mod colorspace;
pub mod degrade;
pub mod error;
pub mod eval;
pub mod frames;
pub mod gradcheck;
pub mod networks;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};

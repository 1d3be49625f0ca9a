pub mod error;
pub mod fusion;
pub mod geometry;
pub mod layout;
pub mod raster;
pub mod register;
pub mod synth;
pub mod viewpoint;

pub use error::{Error, Result};

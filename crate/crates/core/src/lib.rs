//! Model-based 3D hand reconstruction from a single RGB image by direct
//! optimization of a parametric hand against 2D keypoints and photometric
//! evidence.

pub mod camera;
pub mod config;
pub mod energy;
pub mod error;
pub mod imaging;
pub mod io;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod render;
pub mod rotation;
pub mod synth;

pub use error::{Error, Result};

//! Photon-efficient LIDAR toolkit: detection model, simulator, unmixing,
//! penalized-ML image formation, and study harnesses.

pub mod error;
pub mod estimate;
pub mod experiments;
pub mod formats;
pub mod model;
pub mod sim;
pub mod special;
pub mod unmix;

pub use error::{Error, Result};

pub mod error;
pub mod image;
pub mod io;
pub mod mask;
pub mod membank;
pub mod metrics;
pub mod pipeline;
pub mod propagation;
pub mod refiner;
pub mod seed;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use image::GrayImage;
pub use mask::{BBox, Bitmask, LabelMap, RleMask};

pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod discriminator;
pub mod encoder;
pub mod gradcheck;
pub mod layers;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod prior;
pub mod degradation;
pub mod error;
pub mod image;
pub mod rng;
pub mod selftest;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use error::{GpenError, Result};
pub use image::Image;
pub use tensor::Tensor;

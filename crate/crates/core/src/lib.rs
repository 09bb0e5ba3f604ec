pub mod error;
pub mod evaluation;
pub mod image;
pub mod models;
pub mod phantom;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use image::Image;
pub use rng::Rng;
pub use tensor::{Tape, Tensor, Var};

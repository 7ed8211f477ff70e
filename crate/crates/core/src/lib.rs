pub mod audio;
pub mod data;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod numerics;
pub mod objectives;
pub mod pipeline;
pub mod text;
pub mod trainer;

pub use error::{Error, Result};

pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod extraction;
pub mod gnn;
pub mod kg;
pub mod numerics;
pub mod params;
pub mod sample;
pub mod text;
pub mod training;
mod util;

pub use error::{Error, Result};
pub use sample::MrsSample;

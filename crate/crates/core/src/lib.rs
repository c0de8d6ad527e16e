pub mod backnorm;
pub mod corpus;
pub mod decoder;
pub mod digest;
pub mod error;
pub mod manifest;
pub mod metrics;
pub mod noisegen;
pub mod numerics;
pub mod parallel;
pub mod tokenizer;
pub mod trainer;
pub mod transformer;

pub use error::{Error, Result};

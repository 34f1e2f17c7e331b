pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval_bench;
pub mod detector;
pub mod geometry;
pub mod grounding;
pub mod language;
pub mod model;
pub mod par;
pub mod scene;
pub mod seed;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};

pub mod align;
pub mod bench;
pub mod cli;
pub mod curation;
pub mod error;
pub mod mam;
pub mod nn;
pub mod perceiver;
pub mod seed;
pub mod synthgen;
pub mod tensor;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};

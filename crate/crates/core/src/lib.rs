pub mod error;
pub mod substrate;

pub use error::{Error, Result};
pub mod data;
pub mod config;
pub mod decoders;
pub mod embeddings;
pub mod encoder;
pub mod layers;
pub mod model;
pub mod evaluation;
pub mod training;
pub mod verify;
pub mod cli;

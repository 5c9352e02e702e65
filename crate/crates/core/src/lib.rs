#![doc = include_str!("../../../book/src/introduction.md")]

pub mod dimension;
pub mod entropy;
pub mod error;
pub mod experiment;
pub mod loss;
pub mod measure;
pub mod model;
pub mod quantizer;
pub mod reconstruct;
pub mod systems;

pub use error::{Error, Result};

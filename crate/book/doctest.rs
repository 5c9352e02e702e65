//! Compiles the guide's code blocks as doc-tests, so `cargo test --doc`
//! keeps the book in step with the library.

// The introduction is the core crate's top-level doc and is tested there.

#[doc = include_str!("src/quantization.md")]
pub mod quantization {}

#[doc = include_str!("src/entropy-curves.md")]
pub mod entropy_curves {}

#[doc = include_str!("src/relative-loss.md")]
pub mod relative_loss {}

#[doc = include_str!("src/absolute-loss.md")]
pub mod absolute_loss {}

#[doc = include_str!("src/bounds.md")]
pub mod bounds {}

#[doc = include_str!("src/experiments.md")]
pub mod experiments {}

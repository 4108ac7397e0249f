//! Compiles every Rust snippet in the guide (`book/`) as a doctest, so the
//! book cannot drift from the library it documents. Each chapter's markdown
//! becomes the doc comment of an empty module; rustdoc extracts and runs
//! the fenced code blocks.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/tensors.md")]
pub mod tensors {}

#[doc = include_str!("../../../book/src/network.md")]
pub mod network {}

#[doc = include_str!("../../../book/src/heatmaps.md")]
pub mod heatmaps {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}

#[doc = include_str!("../../../book/src/augmentation.md")]
pub mod augmentation {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/phantoms.md")]
pub mod phantoms {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}

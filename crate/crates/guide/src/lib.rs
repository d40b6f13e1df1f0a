//! The book under `book/` is the narrative guide to the `ergodic` crate.
//! mdbook does not compile snippets against local dependencies, so each
//! chapter is included here as module documentation and `cargo test` runs
//! every code fence as a doctest, keeping the book and the crate in sync.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/chaotic-systems.md")]
pub mod chaotic_systems {}

#[doc = include_str!("../../../book/src/invariant-statistics.md")]
pub mod invariant_statistics {}

#[doc = include_str!("../../../book/src/optimal-transport.md")]
pub mod optimal_transport {}

#[doc = include_str!("../../../book/src/contrastive-features.md")]
pub mod contrastive_features {}

#[doc = include_str!("../../../book/src/training-objectives.md")]
pub mod training_objectives {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}

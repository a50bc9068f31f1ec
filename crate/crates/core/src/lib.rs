//! Quantum discord of two-qubit states, closed forms for X-states, and
//! neural networks that learn the measurement-optimization term from
//! power-series features of the state parameters.
//!
//! The modules follow the pipeline: [`quantum`] and [`xstate`] compute
//! labels, [`datagen`] samples and labels states, [`features`] expands
//! parameters into monomials, and [`models`] and [`training`] fit the
//! regressors.

pub mod datagen;
pub mod error;
pub mod features;
pub mod linalg;
pub mod models;
pub mod quantum;
pub mod simplex;
pub mod training;
pub mod xstate;

pub use error::{Error, Result};

// Runs the book's code blocks as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/discord.md")]
    mod discord {}
    #[doc = include_str!("../../../book/src/xstates.md")]
    mod xstates {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/files.md")]
    mod files {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}

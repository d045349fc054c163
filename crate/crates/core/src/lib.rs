//! Fairness-aware news recommendation lab.
//!
//! A user model is split into a bias-aware and a bias-free encoder. The
//! bias-aware embedding is pushed to predict a sensitive attribute, the
//! bias-free one is trained against an adversarial attribute discriminator
//! and kept orthogonal to the bias-aware one, and only the bias-free
//! embedding ranks news at serving time.
//!
//! Modules:
//! - [`datagen`]: synthetic corpora with a tunable attribute/topic bias
//! - [`autograd`], [`params`]: the reverse-mode tape and Adam optimizer
//! - [`encoders`]: self-attention news and history encoders
//! - [`fairrec`]: the decomposed model and its losses
//! - [`trainer`]: negative sampling, training loop, checkpoints
//! - [`evaluator`]: ranking metrics and the attribute-probe fairness audit
//! - [`geometry`]: Monte-Carlo checks of the projection bounds

pub mod autograd;
pub mod datagen;
pub mod encoders;
pub mod error;
pub mod evaluator;
pub mod fairrec;
pub mod geometry;
pub mod params;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};

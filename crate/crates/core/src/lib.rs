//! LLM actor-critic decision engine.
//!
//! An agent step samples candidate actions from a language-model prior,
//! predicts a short future for each with the same model acting as a world
//! model, scores each candidate from the model's belief in the "GOOD"/"BAD"
//! judgment tokens, and picks the argmax of the KL-regularized improved
//! policy `π_prior · exp(α·Q)`.
//!
//! The crate ships a scripted backend, an HTTP completions backend, and a
//! text gridworld whose exact oracle backend makes every part of the loop
//! checkable without a real model.

pub mod actor;
pub mod analysis;
pub mod backend;
pub mod cli;
pub mod critic;
pub mod demo;
pub mod error;
pub mod gridworld;
pub mod harness;
pub mod policy;
pub mod prompt;
pub mod types;
pub mod world_model;

pub use error::{Error, Result};

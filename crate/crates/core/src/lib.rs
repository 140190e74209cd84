//! Test-time prompt optimization for text-to-image generation.
//!
//! A prompt is analysed for mismatches between its text and the image it
//! produces ([`error_analysis`]), then each detected error is repaired by
//! a search over rewritten prompts that clusters candidates, weights the
//! clusters by a Bayesian posterior over their scores and keeps a memory of
//! what was tried ([`optimizer`], [`clustering`]). [`synthetic`] provides a
//! deterministic stand-in for every model so the whole loop runs offline.

pub mod backends;
pub mod cli;
pub mod clustering;
pub mod engine;
pub mod error_analysis;
pub mod optimizer;
pub mod pattern_catalog;
pub mod runlog;
pub mod synthetic;
pub mod templates;
pub mod text;

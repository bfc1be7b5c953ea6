//! Context compression for long-horizon LLM agents.
//!
//! The crate gates history and observation compression on token thresholds,
//! runs agents against a deterministic simulated environment, optimizes the
//! natural-language compression guidelines from contrastive trajectories,
//! accounts tokens and API cost exactly, and exports teacher pairs for
//! distilling a smaller compressor.

pub mod agent_loop;
pub mod cli;
pub mod compression;
pub mod config;
pub mod distill;
pub mod error;
pub mod gateway;
pub mod guideline;
pub mod history;
pub mod io;
pub mod metrics;
pub mod optimizer;
pub mod rng;
pub mod sim;
pub mod templates;
pub mod tokens;

pub use error::{Error, Result};

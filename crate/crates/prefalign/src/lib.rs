//! Desk-scale preference alignment lab for toy image inpainting.
//!
//! A small MLP denoiser (DDPM or flow matching) is pretrained on a
//! procedural 16x16 image world, candidate completions are ranked by biased
//! reward scorers, best-of-N preference pairs feed a DPO fine-tuning stage,
//! and an evaluation suite measures fidelity, win rates, reward drift, and
//! scaling behavior. Everything is deterministic in the seeds.

pub mod config;
pub mod cond;
pub mod diffusion;
pub mod dpo;
pub mod error;
pub mod evalsuite;
pub mod flowmatch;
pub mod generate;
pub mod judge;
pub mod nn;
pub mod prefdata;
pub mod rewards;
pub mod rng;
pub mod tensor;
pub mod toyworld;

pub use error::{Error, Result};

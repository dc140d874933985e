//! Diffusion-perception laboratory.
//!
//! DDIM inversion and sampling over pluggable denoisers, brightness-illusion
//! stimuli with exact target masks, region metering and alignment scores,
//! and the target-guided generation loop that plants physically identical
//! patches meant to be perceived differently.

pub mod denoiser;
pub mod error;
pub mod evalreport;
pub mod guidance;
pub mod imagecore;
pub mod perception;
pub mod schedule;
pub mod seeds;
pub mod stimuli;
pub mod study;

pub use error::{Error, Result};

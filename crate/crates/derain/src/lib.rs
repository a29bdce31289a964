//! Desk-scale laboratory for self-supervised video deraining.
//!
//! Synthesizes parametric rain over clean frame sequences, trains a
//! two-stage denoiser (a per-frame stage, then a cascaded spatio-temporal
//! stage over 5-frame windows) without any clean training targets, and
//! evaluates with PSNR/SSIM against held-out clean frames.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod metrics;
pub mod models;
pub mod rain;
pub mod rng;
pub mod synthetic;
pub mod tensor;
pub mod trainer;

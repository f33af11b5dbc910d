//! Text-conditioned dual-branch segmentation of thyroid nodules in
//! ultrasound images.
//!
//! The model couples a frozen vision-language backbone with two trainable
//! branches:
//!
//! - a **coarse branch** that pulls token activations out of intermediate
//!   backbone layers, fuses them with a text-derived conditioning vector via
//!   feature-wise linear modulation, refines them with a small transformer
//!   decoder stack, and upsamples to full resolution;
//! - a **fine branch**, a residual encoder/decoder with U-Net style skip
//!   connections over the raw image.
//!
//! A prediction head concatenates both feature maps and emits a pixel-wise
//! probability map. The crate also ships the data pipeline (manifest
//! ingestion, object-aware cropping, augmentation, prompt assembly), the
//! training loop (Dice loss, Adam, cosine learning-rate annealing,
//! checkpointing), segmentation metrics, and a branch-zeroing ablation
//! harness.

pub mod error;
pub mod nn;

pub use error::{Error, Result};

//! Dual-spectrum (RGB + thermal) drone detection post-processing: decision
//! fusion, IoU tracking, multi-cue direction estimation, synthetic scenarios
//! and evaluation metrics.

pub mod detio;
pub mod direction;
pub mod fusion;
pub mod geometry;
pub mod metrics;
pub mod modality;
pub mod pipeline;
pub mod synth;
pub mod tracker;

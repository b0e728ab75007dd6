//! Desk-scale testbed for wireless multimodal models.
//!
//! End-to-end pipeline: synthetic vehicle-to-infrastructure scenario
//! generation with ground-truth mmWave beam labels, stage-1 contrastive
//! alignment of modality encoders against an anchor modality, stage-2
//! multi-task adaptation of a GPT-style backbone (beam classification,
//! power forecasting, autoregressive generation), a gated-RNN baseline,
//! and zero-shot cross-scenario evaluation.
//!
//! Start with the runnable programs in `examples/` — one per capability —
//! or the `wmlm` binary, which exposes the same pipeline as subcommands.

pub mod align;
pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod compare;
pub mod config;
pub mod digest;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod phy;
pub mod report;
pub mod rng;
pub mod rnn;
pub mod scenegen;
pub mod train;

pub use error::{Error, Result};

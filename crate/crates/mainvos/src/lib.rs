//! Multi-attention video instance segmentation, desk scale.
//!
//! The library implements a one-shot pipeline that segments every tracked
//! instance of a video in a single forward pass per frame. A frame enters the
//! network together with three attention cues stacked into the input tensor:
//!
//! * **uOF** — unit optical flow (direction + normalized magnitude),
//! * **LTA** — long-term attention: one box-indicator channel per instance,
//! * **STA** — short-term attention: the previous frame's prediction warped
//!   along backward flow into the current frame.
//!
//! Supervision uses a weighted instance dice loss whose fit term favours
//! small objects and whose overlap term penalizes channels that claim the
//! same pixels. Training follows a three-phase curriculum that gradually
//! replaces ideal cues with noisy and self-predicted ones, so inference can
//! run causally on the model's own outputs.
//!
//! Everything runs on the CPU: the network, its hand-written backward
//! passes, the synthetic moving-shapes data generator, and the J/F
//! evaluation suite. Start with the examples:
//!
//! ```text
//! cargo run --release --example generate_dataset
//! cargo run --release --example visualize_cues
//! cargo run --release --example train_overfit
//! cargo run --release --example run_inference
//! cargo run --release --example evaluate_model
//! cargo run --release --example ablation_grid
//! cargo run --release --example benchmark_forward
//! cargo run --release --example extend_pretrained
//! ```
//!
//! The same capabilities are reachable through the `mainvos` binary
//! (`generate-data`, `train`, `infer`, `evaluate`, `ablate`,
//! `render-overlay`); run `mainvos --help` for the CLI surface.

pub mod cli;
pub mod cues;
pub mod data;
pub mod error;
pub mod eval;
pub mod infer;
pub mod loss;
pub mod net;
pub mod synth;
pub mod train;

pub use error::{Error, Result};

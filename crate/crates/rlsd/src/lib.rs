//! Multi-label image classification from regional latent semantic
//! dependencies.
//!
//! The model family implemented here couples a small convolutional backbone
//! with a region-proposal localizer, a per-region LSTM that decodes label
//! sequences, and a max-pool fusion step that turns the per-region, per-step
//! label distributions into one score vector per image. Two baselines share
//! the same parts: a plain multi-label CNN head and a single global
//! image-to-LSTM decoder. Everything runs on a self-contained f64 reverse-mode
//! autodiff tape — no external tensor library.
//!
//! The quickest way to get a feel for the pieces is the `examples/`
//! directory; each example is a runnable walkthrough of one capability:
//!
//! ```text
//! cargo run --release --example autodiff_basics
//! cargo run --release --example generate_dataset
//! cargo run --release --example region_proposals
//! cargo run --release --example label_sequences
//! cargo run --release --example train_multi_cnn
//! cargo run --release --example train_rlsd
//! cargo run --release --example evaluate_metrics
//! ```
//!
//! A thin `rlsd` binary wraps the same library entry points as subcommands
//! (`gen-data`, `train`, `eval`, `propose`, `plot`) for scripted use.

#![forbid(unsafe_code)]

pub mod backbone;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod encoder;
pub mod fusion;
pub mod localizer;
pub mod metrics;
pub mod optim;
pub mod params;
pub mod plot;
pub mod rnn;
pub mod synthdata;
pub mod tensor;
pub mod train;

pub use tensor::{Tape, Tensor, TensorId};

//! Low-rank adaptation (LoRA) for a small decoder-only transformer, module
//! composition (weighted averaging and gradient-free weight search), and an
//! experiment harness for cross-lingual summarization on synthetic languages.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`], [`autodiff`], [`optim`], [`gradcheck`]: dense tensors,
//!   reverse-mode differentiation and first-order optimizers.
//! * [`transformer`]: the causal language model.
//! * [`lora`]: attaching, merging and serializing adapters.
//! * [`composition`], [`search`], [`lorahub`]: combining adapter modules.
//! * [`data`]: synthetic languages, tokenizers, JSONL ingestion and splits.
//! * [`metrics`]: ROUGE, paired bootstrap and the metric registry.
//! * [`harness`]: training, checkpoint selection and experiment regimes.
//! * [`cli`]: argument handling and report rendering for the binary.

pub mod autodiff;
pub mod cli;
pub mod composition;
pub mod container;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod kernels;
pub mod lora;
pub mod lorahub;
pub mod metrics;
pub mod optim;
pub mod params;
pub mod search;
pub mod tensor;
pub mod transformer;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};

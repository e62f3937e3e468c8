//! Latent concept discovery and analysis over contextualized word
//! representations.
//!
//! The pipeline runs in stages, each reading the artifacts of the stage
//! before it:
//!
//! * [`corpus`]: frequency-filtered occurrence dataset and data splits.
//! * [`embedstore`]: bit-exact per-layer embedding files.
//! * [`cluster`]: Ward agglomerative clustering (nearest-neighbor chain) and
//!   dendrogram cuts; each cluster is a latent concept.
//! * [`annotate`]: concept labelling through an OpenAI-compatible
//!   chat-completion endpoint.
//! * [`probe`]: binary softmax probes with control-task selectivity.
//! * [`neurons`]: Probeless and elastic-net neuron rankings, super-concept
//!   alignment.
//! * [`evaluate`]: majority voting and Fleiss' kappa over human judgments.
//! * [`report`]: JSONL dataset export, word clouds and result tables.
//! * [`pipeline`]: configuration and stage orchestration used by the CLI.

pub mod annotate;
pub mod cluster;
pub mod corpus;
pub mod embedstore;
mod error;
pub mod evaluate;
pub mod neurons;
pub mod pipeline;
pub mod probe;
pub mod report;
pub mod seed;
pub mod synthetic;

pub use error::{Error, Result};

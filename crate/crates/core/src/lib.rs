//! Domain-aware graph convolution for shared-account cross-domain
//! sequential recommendation.
//!
//! The pipeline: parse interaction logs into hybrid sequences
//! ([`data`]), build the cross-domain sequential graph ([`graph`]),
//! propagate attention-weighted messages between latent users and items
//! ([`model`]), train both domains jointly ([`training`]) and score
//! leave-last-out targets ([`eval`]).

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod training;

pub use data::{Domain, HybridSequence, ItemRef, VocabSizes, Vocabulary};
pub use error::{Error, Result};
pub use eval::MetricsReport;
pub use graph::{build_cds_graph, CdsGraph, GraphOptions};
pub use model::{ModelConfig, ModelParams};
pub use training::{TrainConfig, TrainOutcome};

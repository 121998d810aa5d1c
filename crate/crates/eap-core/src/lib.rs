//! Discovery, quantification, and inference-time mitigation of bias
//! circuits in decoder-only transformers via edge attribution patching.
//!
//! The crate ships a desk-scale hooked transformer (`f64` throughout, with
//! activation capture and per-port gradients), exact computational-graph
//! enumeration, EAP scoring with an exact-patching oracle, top-k bias
//! metrics, sentence-template corpus generation with symmetric token
//! replacement, localization/stability analyses, and corrupted-activation
//! debiasing.

pub mod analysis;
pub mod attribution;
pub mod config;
pub mod corpus;
pub mod debias;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod reference;
mod rng;
pub mod weightio;

pub use config::ModelConfig;
pub use corpus::{CorruptionMode, ExamplePair, TemplateId, TemplateSpec, Vocabulary};
pub use error::{Error, Result};
pub use graph::{CircuitGraph, DestPort, Edge, EdgeId, ExportFormat, Node, Qkv, Topology};
pub use metrics::{BiasMetricSpec, Lexicon, LexiconMode, MetricKind};
pub use model::{ActivationCache, CapturedRun, Gradients, ParamGrads, PatchSet, Weights};

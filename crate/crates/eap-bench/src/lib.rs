//! Shared fixtures for the criterion benches.

use eap_core::corpus::{CorruptionMode, ExamplePair, TemplateId};
use eap_core::metrics::{BiasMetricSpec, Lexicon, LexiconMode, MetricKind};
use eap_core::{ModelConfig, Weights};

pub fn bench_config() -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 32,
        d_head: 16,
        d_mlp: 64,
        vocab_size: 64,
        max_seq_len: 8,
        layernorm_enabled: true,
        ln_epsilon: 1e-5,
    }
}

pub fn bench_weights() -> Weights {
    Weights::init_random(&bench_config(), 42).expect("valid config")
}

pub fn bench_pair() -> ExamplePair {
    ExamplePair {
        clean: vec![10, 3, 4, 5],
        corrupt: vec![20, 3, 4, 5],
        clean_text: String::new(),
        corrupt_text: String::new(),
        entity: String::new(),
        template: TemplateId::Dss1,
        mode: CorruptionMode::C2,
    }
}

pub fn bench_spec() -> BiasMetricSpec {
    let lexicon = Lexicon::from_id_sets(
        LexiconMode::Sentiment,
        (40u32..48).collect(),
        (50u32..58).collect(),
        64,
    )
    .expect("disjoint classes");
    BiasMetricSpec::new(MetricKind::L2, 10, lexicon)
}

//! Library-level end-to-end flow on a trained toy model: template pairs in,
//! attribution, localization, dataset splitting, and debiasing out.

use eap_core::analysis::{self, layer_histogram};
use eap_core::attribution::{eap_scores, evaluate_baseline};
use eap_core::corpus::{
    builtin_nationalities, generate_pairs, CorruptionMode, TemplateId, TemplateSpec, Vocabulary,
};
use eap_core::debias::{auto_corrupt, default_patch_count, delta_bias};
use eap_core::metrics::{
    categorize_dataset, mean_bias, BiasMetricSpec, Lexicon, MetricKind,
};
use eap_core::{CircuitGraph, ModelConfig, Weights};

fn trained_model(vocab: &Vocabulary) -> Weights {
    let config = ModelConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 16,
        d_head: 8,
        d_mlp: 32,
        vocab_size: vocab.len(),
        max_seq_len: 8,
        layernorm_enabled: true,
        ln_epsilon: 1e-5,
    };
    let positive = ["good", "nice", "kind", "friendly"];
    let negative = ["bad", "poor", "lazy", "rude"];
    let neutral = ["very", "big", "small", "they"];
    let nationalities = builtin_nationalities();
    let mut corpus: Vec<Vec<u32>> = Vec::new();
    // positively biased entities, negatively biased entities, and a
    // neutral C2 replacement
    for nat in nationalities.iter().take(6) {
        for word in positive {
            corpus.push(vocab.tokenize(&format!("{nat} people are so {word}")));
        }
    }
    for nat in nationalities.iter().skip(6).take(3) {
        for word in negative {
            corpus.push(vocab.tokenize(&format!("{nat} people are so {word}")));
        }
    }
    for word in neutral {
        corpus.push(vocab.tokenize(&format!("emirati people are so {word}")));
    }
    Weights::init_random(&config, 7).unwrap().fine_tune(&corpus, 400, 0.05, 7).unwrap()
}

#[test]
fn bias_discovery_to_debias_round_trip() {
    let vocab = Vocabulary::builtin();
    let weights = trained_model(vocab);
    let spec = BiasMetricSpec::new(MetricKind::L2, 10, Lexicon::builtin_sentiment(vocab));

    // dataset categorization: positively trained entities land in the
    // positive split, negatively trained ones in the negative split
    let nationalities = builtin_nationalities();
    let sentences: Vec<Vec<u32>> = nationalities
        .iter()
        .take(9)
        .map(|nat| vocab.tokenize(&format!("{nat} people are so")))
        .collect();
    let split = categorize_dataset(&weights, &sentences, &spec).unwrap();
    assert_eq!(split.positive.len() + split.negative.len(), sentences.len());
    assert_eq!(split.positive, (0..6).collect::<Vec<_>>());
    assert_eq!(split.negative, (6..9).collect::<Vec<_>>());

    // the positive split really is positively biased
    let positive_sentences: Vec<Vec<u32>> =
        split.positive.iter().map(|&i| sentences[i].clone()).collect();
    let bias = mean_bias(&weights, &positive_sentences, &spec).unwrap();
    assert!(bias > 0.5, "positive split bias {bias}");

    // attribution over the positive split's C2 pairs
    let template = TemplateSpec::builtin(TemplateId::Dss1).unwrap();
    let entities: Vec<String> = nationalities.iter().take(6).cloned().collect();
    let pairs = generate_pairs(&template, &entities, CorruptionMode::C2, vocab).unwrap().pairs;
    let mut graph = CircuitGraph::build(&weights.config).unwrap();
    eap_scores(&weights, &pairs, &spec).unwrap().apply(&mut graph).unwrap();

    // localization artifacts exist and partition correctly
    let hist = layer_histogram(&graph, 0.1, 0.2).unwrap();
    assert_eq!(hist.counts.iter().sum::<usize>(), hist.selected_edges);
    let curve =
        analysis::ablation_curve(&weights, &pairs, &spec, &graph, &[0.0, 0.4, 1.0]).unwrap();
    let baseline = evaluate_baseline(&weights, &pairs, &spec).unwrap();
    assert!((curve[0].1 - baseline).abs() < 1e-9);
    assert!(curve[2].1 < baseline, "full ablation should remove trained bias");

    // debiasing with auto-corrupted inputs reduces the bias
    let registry = TemplateSpec::builtins();
    let mut auto_pairs = pairs.clone();
    for pair in &mut auto_pairs {
        pair.corrupt = auto_corrupt(&pair.clean, &registry, vocab);
        assert_eq!(pair.corrupt.len(), pair.clean.len());
    }
    let n = default_patch_count(graph.edge_count()).max(4);
    let report = delta_bias(&weights, &auto_pairs, &spec, graph.edges(), n).unwrap();
    let delta = report.delta_percent.expect("clean bias is nonzero");
    assert!(
        report.bias_patched < report.bias_clean,
        "patching top {n} edges should reduce bias: {} -> {}",
        report.bias_clean,
        report.bias_patched
    );
    assert!(delta < 0.0);

    // the single-input route agrees: patching the top 10% of edges drops
    // the per-sentence metric below the clean forward's
    let top_tenth = (0.1 * graph.edge_count() as f64).ceil() as usize;
    let first = &auto_pairs[0];
    let patched_logits = eap_core::debias::debias_forward(
        &weights,
        &first.clean,
        &first.corrupt,
        graph.edges(),
        top_tenth,
    )
    .unwrap();
    let clean_value = spec.value(&weights.forward(&first.clean).unwrap()).unwrap();
    let patched_value = spec.value(&patched_logits).unwrap();
    assert!(
        patched_value < clean_value,
        "debias forward: {clean_value} -> {patched_value}"
    );
}

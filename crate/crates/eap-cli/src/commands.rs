//! Subcommand implementations.

use std::fs::File;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use eap_core::analysis;
use eap_core::attribution::{
    self, eap_scores, evaluate_baseline, evaluate_graph, exact_patch_sweep, metric_change,
};
use eap_core::corpus::{
    self, builtin_nationalities, builtin_professions, generate_pairs, CorruptionMode,
    ExamplePair, TemplateId, TemplateSpec,
};
use eap_core::debias::{auto_corrupt, debias_forward, default_patch_count, delta_bias};
use eap_core::graph::{CircuitGraph, Edge, EdgeId};
use eap_core::{weightio, ModelConfig, Weights};

use crate::helpers::{
    build_spec, load_model, load_pairs, load_vocab, parse_fractions, resolve_out, usage,
};
use crate::{BuiltinEntities, Command, CorruptionFlag, GlobalArgs, TemplateFlag};

pub fn dispatch(global: &GlobalArgs, command: Command) -> Result<()> {
    match command {
        Command::GraphInfo { layers, heads } => graph_info(layers, heads),
        Command::GenPairs {
            template,
            templates_file,
            template_id,
            entities,
            builtin_entities,
            corruption,
            vocab,
            out,
        } => gen_pairs(
            global,
            template,
            templates_file,
            template_id,
            entities,
            builtin_entities,
            corruption,
            &vocab,
            &out,
        ),
        Command::InitModel {
            layers,
            heads,
            d_model,
            d_head,
            d_mlp,
            vocab_size,
            max_seq,
            no_layernorm,
            ln_epsilon,
            vocab,
            out,
        } => init_model(
            global,
            layers,
            heads,
            d_model,
            d_head,
            d_mlp,
            vocab_size,
            max_seq,
            no_layernorm,
            ln_epsilon,
            &vocab,
            &out,
        ),
        Command::Finetune { model, corpus, steps, lr, vocab, out } => {
            finetune(global, &model, &corpus, steps, lr, &vocab, &out)
        }
        Command::Attribute { model, pairs, metric, vocab, out, top, circuit_json, dot } => {
            attribute(global, &model, &pairs, &metric, &vocab, &out, top, circuit_json, dot)
        }
        Command::Oracle { model, pairs, pair_index, metric, vocab, out } => {
            oracle(global, &model, &pairs, pair_index, &metric, &vocab, &out)
        }
        Command::Evaluate { model, pairs, circuit, metric, vocab } => {
            evaluate(&model, &pairs, circuit, &metric, &vocab)
        }
        Command::Localize {
            model,
            pairs,
            fraction,
            threshold,
            fractions,
            metric,
            vocab,
            hist_out,
            curve_out,
        } => localize(
            global,
            &model,
            &pairs,
            fraction,
            threshold,
            &fractions,
            &metric,
            &vocab,
            &hist_out,
            &curve_out,
        ),
        Command::Overlap { k, inputs, labels, out } => overlap(global, k, &inputs, labels, &out),
        Command::Debias { model, pairs, scores, n, auto_corrupt, metric, vocab, out } => {
            debias(global, &model, &pairs, &scores, n, auto_corrupt, &metric, &vocab, &out)
        }
    }
}

fn graph_info(layers: usize, heads: usize) -> Result<()> {
    if layers == 0 || heads == 0 {
        return Err(usage("--layers and --heads must be at least 1"));
    }
    let graph = CircuitGraph::build_dims(layers, heads);
    println!("nodes={} edges={}", graph.node_count(), graph.edge_count());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn gen_pairs(
    global: &GlobalArgs,
    template: Option<TemplateFlag>,
    templates_file: Option<PathBuf>,
    template_id: Option<String>,
    entities: Option<PathBuf>,
    builtin: Option<BuiltinEntities>,
    corruption: CorruptionFlag,
    vocab_args: &crate::VocabArgs,
    out: &std::path::Path,
) -> Result<()> {
    let spec = match (template, &templates_file) {
        (Some(flag), None) => {
            let id = match flag {
                TemplateFlag::Dss1 => TemplateId::Dss1,
                TemplateFlag::Dss2 => TemplateId::Dss2,
                TemplateFlag::Gss1 => TemplateId::Gss1,
                TemplateFlag::Gss2 => TemplateId::Gss2,
            };
            TemplateSpec::builtin(id).expect("builtin templates exist")
        }
        (None, Some(path)) => {
            let wanted = template_id.expect("clap enforces --template-id");
            TemplateSpec::from_file(path)
                .with_context(|| format!("loading templates {}", path.display()))?
                .into_iter()
                .find(|t| t.id.to_string() == wanted)
                .ok_or_else(|| anyhow::anyhow!("no template {wanted:?} in {}", path.display()))?
        }
        _ => return Err(usage("pass either --template or --templates-file with --template-id")),
    };

    let entity_list = match (entities, builtin) {
        (Some(path), None) => corpus::load_entities(&path)
            .with_context(|| format!("loading entities {}", path.display()))?,
        (None, Some(BuiltinEntities::Nationalities)) => builtin_nationalities(),
        (None, Some(BuiltinEntities::Professions)) => builtin_professions(),
        (None, None) => match spec.id {
            TemplateId::Dss1 | TemplateId::Dss2 => builtin_nationalities(),
            TemplateId::Gss1 | TemplateId::Gss2 => builtin_professions(),
            TemplateId::Custom(_) => {
                return Err(usage("custom templates need --entities or --builtin-entities"))
            }
        },
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };

    let vocab = load_vocab(vocab_args)?;
    let mode = match corruption {
        CorruptionFlag::C1 => CorruptionMode::C1,
        CorruptionFlag::C2 => CorruptionMode::C2,
    };
    let batch = generate_pairs(&spec, &entity_list, mode, &vocab)?;
    let out = resolve_out(global, out)?;
    corpus::write_pairs(&batch.pairs, &out)?;
    println!("pairs={} dropped={}", batch.pairs.len(), batch.dropped);
    println!("wrote {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn init_model(
    global: &GlobalArgs,
    layers: usize,
    heads: usize,
    d_model: usize,
    d_head: Option<usize>,
    d_mlp: Option<usize>,
    vocab_size: Option<usize>,
    max_seq: usize,
    no_layernorm: bool,
    ln_epsilon: f64,
    vocab_args: &crate::VocabArgs,
    out: &std::path::Path,
) -> Result<()> {
    let vocab_size = match vocab_size {
        Some(v) => v,
        None => load_vocab(vocab_args)?.len(),
    };
    let d_head = d_head.unwrap_or_else(|| d_model / heads.max(1));
    let config = ModelConfig {
        n_layers: layers,
        n_heads: heads,
        d_model,
        d_head,
        d_mlp: d_mlp.unwrap_or(4 * d_model),
        vocab_size,
        max_seq_len: max_seq,
        layernorm_enabled: !no_layernorm,
        ln_epsilon,
    };
    let weights = Weights::init_random(&config, global.seed)?;
    let params: usize = weights
        .tensor_names()
        .iter()
        .map(|n| weights.tensor(n).map(|(data, _)| data.len()).unwrap_or(0))
        .sum();
    let out = resolve_out(global, out)?;
    weightio::save_weights(&weights, &out)?;
    println!(
        "initialized {layers}-layer/{heads}-head model ({params} parameters, vocab {vocab_size})"
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn finetune(
    global: &GlobalArgs,
    model: &std::path::Path,
    corpus_path: &std::path::Path,
    steps: usize,
    lr: f64,
    vocab_args: &crate::VocabArgs,
    out: &std::path::Path,
) -> Result<()> {
    let weights = load_model(model)?;
    let vocab = load_vocab(vocab_args)?;
    let text = std::fs::read_to_string(corpus_path)
        .with_context(|| format!("loading corpus {}", corpus_path.display()))?;
    let corpus: Vec<Vec<u32>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| vocab.tokenize(l))
        .collect();
    let before = weights.mean_cross_entropy(&corpus)?;
    let tuned = weights.fine_tune(&corpus, steps, lr, global.seed)?;
    let after = tuned.mean_cross_entropy(&corpus)?;
    let out = resolve_out(global, out)?;
    weightio::save_weights(&tuned, &out)?;
    println!(
        "fine-tuned {} sentences for {steps} steps (lr {lr}): cross-entropy {before:.4} -> {after:.4}",
        corpus.len()
    );
    println!("wrote {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn attribute(
    global: &GlobalArgs,
    model: &std::path::Path,
    pairs_path: &std::path::Path,
    metric: &crate::MetricArgs,
    vocab_args: &crate::VocabArgs,
    out: &std::path::Path,
    top: Option<usize>,
    circuit_json: Option<PathBuf>,
    dot: Option<PathBuf>,
) -> Result<()> {
    let weights = load_model(model)?;
    let pairs = load_pairs(pairs_path)?;
    let vocab = load_vocab(vocab_args)?;
    let spec = build_spec(metric, &vocab)?;

    let mut graph = CircuitGraph::build(&weights.config)?;
    let result = eap_scores(&weights, &pairs, &spec)?;
    result.apply(&mut graph)?;

    if let Some(n) = top {
        let circuit: Vec<EdgeId> = graph.top_k(n)?.iter().map(|e| e.id).collect();
        graph.select_circuit(&circuit)?;
    }

    let out = resolve_out(global, out)?;
    attribution::write_scores_csv(&graph, &out)?;
    println!("scored {} edges over {} pairs", graph.edge_count(), result.pair_count);
    for edge in graph.top_k(5.min(graph.edge_count()))? {
        println!("  {}  {:+.6e}", edge.id.name(), edge.score);
    }
    println!("wrote {}", out.display());

    if let Some(path) = circuit_json {
        let path = resolve_out(global, &path)?;
        graph.write_json(&path)?;
        println!("wrote {}", path.display());
    }
    if let Some(path) = dot {
        let path = resolve_out(global, &path)?;
        graph.write_dot(&path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn oracle(
    global: &GlobalArgs,
    model: &std::path::Path,
    pairs_path: &std::path::Path,
    pair_index: usize,
    metric: &crate::MetricArgs,
    vocab_args: &crate::VocabArgs,
    out: &std::path::Path,
) -> Result<()> {
    let weights = load_model(model)?;
    let pairs = load_pairs(pairs_path)?;
    let pair = pairs
        .get(pair_index)
        .ok_or_else(|| anyhow::anyhow!("pair index {pair_index} out of range"))?;
    let vocab = load_vocab(vocab_args)?;
    let spec = build_spec(metric, &vocab)?;

    let eap = eap_scores(&weights, std::slice::from_ref(pair), &spec)?;
    let exact = exact_patch_sweep(&weights, pair, &spec)?;

    let out = resolve_out(global, out)?;
    let mut file = File::create(&out)?;
    writeln!(file, "edge_name,eap_score,exact_delta")?;
    let topology = weights.topology();
    for (i, id) in topology.edge_ids().enumerate() {
        writeln!(file, "{},{},{}", id.name(), eap.scores[i], exact[i])?;
    }

    let argmax = |v: &[f64]| {
        (0..v.len())
            .max_by(|&a, &b| v[a].abs().partial_cmp(&v[b].abs()).expect("finite"))
            .expect("nonempty")
    };
    match analysis::pearson(&eap.scores, &exact) {
        Ok(r) => println!("pearson={r:.6}"),
        Err(_) => println!("pearson=undefined (constant scores)"),
    }
    let top_eap = topology.edge_at(argmax(&eap.scores));
    let top_exact = topology.edge_at(argmax(&exact));
    println!("top_eap={} top_exact={}", top_eap.name(), top_exact.name());
    println!("wrote {}", out.display());
    Ok(())
}

fn evaluate(
    model: &std::path::Path,
    pairs_path: &std::path::Path,
    circuit: Option<PathBuf>,
    metric: &crate::MetricArgs,
    vocab_args: &crate::VocabArgs,
) -> Result<()> {
    let weights = load_model(model)?;
    let pairs = load_pairs(pairs_path)?;
    let vocab = load_vocab(vocab_args)?;
    let spec = build_spec(metric, &vocab)?;

    let baseline = evaluate_baseline(&weights, &pairs, &spec)?;
    println!("baseline={baseline:.6}");
    if let Some(path) = circuit {
        let graph = CircuitGraph::read_json(&path)
            .with_context(|| format!("loading circuit {}", path.display()))?;
        if graph.topology() != &weights.topology() {
            anyhow::bail!(
                "circuit architecture ({} layers, {} heads) does not match the model",
                graph.topology().n_layers(),
                graph.topology().n_heads()
            );
        }
        let value = evaluate_graph(&weights, &pairs, &spec, &graph)?;
        println!("circuit={value:.6} (in-graph edges: {})", graph.in_graph_count());
        println!("metric_change={:.6}", metric_change(baseline, value));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn localize(
    global: &GlobalArgs,
    model: &std::path::Path,
    pairs_path: &std::path::Path,
    fraction: f64,
    threshold: f64,
    fractions: &str,
    metric: &crate::MetricArgs,
    vocab_args: &crate::VocabArgs,
    hist_out: &std::path::Path,
    curve_out: &std::path::Path,
) -> Result<()> {
    let weights = load_model(model)?;
    let pairs = load_pairs(pairs_path)?;
    let vocab = load_vocab(vocab_args)?;
    let spec = build_spec(metric, &vocab)?;
    let curve_fractions = parse_fractions(fractions)?;

    let mut graph = CircuitGraph::build(&weights.config)?;
    eap_scores(&weights, &pairs, &spec)?.apply(&mut graph)?;

    let hist = analysis::layer_histogram(&graph, fraction, threshold)?;
    let hist_path = resolve_out(global, hist_out)?;
    analysis::write_histogram_csv(&hist, &hist_path)?;
    let flagged: Vec<String> = hist
        .flagged
        .iter()
        .enumerate()
        .filter(|(_, &f)| f)
        .map(|(layer, _)| {
            if layer == hist.counts.len() - 1 { "logits".to_string() } else { layer.to_string() }
        })
        .collect();
    println!(
        "histogram: top {} edges; layers over {:.0}%: [{}]",
        hist.selected_edges,
        100.0 * threshold,
        flagged.join(", ")
    );
    println!("wrote {}", hist_path.display());

    let curve =
        analysis::ablation_curve_parallel(&weights, &pairs, &spec, &graph, &curve_fractions)?;
    let curve_path = resolve_out(global, curve_out)?;
    analysis::write_curve_csv(&curve, &curve_path)?;
    for (f, v) in &curve {
        println!("  ablate {:>5.1}% -> metric {v:.6}", 100.0 * f);
    }
    println!("wrote {}", curve_path.display());
    Ok(())
}

fn overlap(
    global: &GlobalArgs,
    k: usize,
    inputs: &[PathBuf],
    labels: Option<String>,
    out: &std::path::Path,
) -> Result<()> {
    if k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    if inputs.len() < 2 {
        return Err(usage("--inputs needs at least two score files"));
    }
    let labels: Vec<String> = match labels {
        Some(list) => {
            let labels: Vec<String> = list.split(',').map(|s| s.trim().to_string()).collect();
            if labels.len() != inputs.len() {
                return Err(usage("--labels count must match --inputs"));
            }
            labels
        }
        None => inputs
            .iter()
            .map(|p| {
                p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
            })
            .collect(),
    };

    let mut named = Vec::with_capacity(inputs.len());
    for (label, path) in labels.iter().zip(inputs) {
        let rows = attribution::read_scores_csv(path)
            .with_context(|| format!("loading scores {}", path.display()))?;
        let scores: Vec<(String, f64)> =
            rows.into_iter().map(|r| (r.edge_name, r.score)).collect();
        named.push((label.clone(), analysis::ranked_ids_from_scores(&scores)?));
    }

    let matrix = analysis::overlap_matrix(&named, k)?;
    let out = resolve_out(global, out)?;
    analysis::write_matrix_csv(&matrix, &out)?;
    for (label, row) in matrix.labels.iter().zip(&matrix.values) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.3}")).collect();
        println!("{label}: [{}]", cells.join(", "));
    }
    println!("wrote {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn debias(
    global: &GlobalArgs,
    model: &std::path::Path,
    pairs_path: &std::path::Path,
    scores: &std::path::Path,
    n: Option<usize>,
    regenerate_corrupt: bool,
    metric: &crate::MetricArgs,
    vocab_args: &crate::VocabArgs,
    out: &std::path::Path,
) -> Result<()> {
    let weights = load_model(model)?;
    let mut pairs = load_pairs(pairs_path)?;
    let vocab = load_vocab(vocab_args)?;
    let spec = build_spec(metric, &vocab)?;

    if regenerate_corrupt {
        let registry = TemplateSpec::builtins();
        for pair in &mut pairs {
            pair.corrupt = auto_corrupt(&pair.clean, &registry, &vocab);
            pair.corrupt_text = vocab.detokenize(&pair.corrupt);
        }
    }

    let rows = attribution::read_scores_csv(scores)
        .with_context(|| format!("loading scores {}", scores.display()))?;
    let bias_edges: Vec<Edge> = rows
        .into_iter()
        .map(|r| {
            Ok(Edge {
                id: EdgeId::parse(&r.edge_name)?,
                score: r.score,
                in_graph: r.in_graph,
                rank: r.rank,
            })
        })
        .collect::<eap_core::Result<_>>()?;

    let n = n.unwrap_or_else(|| default_patch_count(weights.topology().edge_count()));
    let report = delta_bias(&weights, &pairs, &spec, &bias_edges, n)?;

    // one worked example through the single-input API, so the report's
    // aggregate numbers can be cross-checked by hand
    let first: &ExamplePair = &pairs[0];
    let _ = debias_forward(&weights, &first.clean, &first.corrupt, &bias_edges, n)?;

    let out = resolve_out(global, out)?;
    serde_json::to_writer_pretty(File::create(&out)?, &report)?;
    match report.delta_percent {
        Some(delta) => println!(
            "bias {:.6} -> {:.6} ({delta:+.2}% with {n} edges patched)",
            report.bias_clean, report.bias_patched
        ),
        None => println!(
            "bias 0 -> {:.6} (delta undefined with {n} edges patched)",
            report.bias_patched
        ),
    }
    println!("wrote {}", out.display());
    Ok(())
}

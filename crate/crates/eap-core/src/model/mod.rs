//! Desk-scale decoder-only transformer with per-node activation capture,
//! reverse-mode gradients at every destination port, and exact-intervention
//! forward passes.
//!
//! Architecture is pre-layernorm GPT-2 style. The "input" to a destination
//! port is the raw residual sum BEFORE layernorm, so the upstream
//! decomposition is exactly linear; layernorm belongs to the destination
//! node's computation. Attention output bias is fixed at zero and the MLP
//! output bias is folded into the MLP node's contribution, so every residual
//! term has a source node. Positional embeddings ride on the input node.
//! All arithmetic is in `f64`.

mod backward;
mod forward;
mod math;
mod train;

use ndarray::{Array1, Array2};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::graph::{CircuitGraph, DestPort, EdgeId, Node, Topology};
use crate::rng::NamedRng;

pub(crate) use forward::{Intervention, Trace};

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

/// Per-head projection matrices. `w_o` is the head's slice of the attention
/// output projection, so head outputs decompose the block exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub w_o: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub heads: Vec<HeadWeights>,
    pub mlp_in: Array2<f64>,
    pub mlp_in_bias: Array1<f64>,
    pub mlp_out: Array2<f64>,
    pub mlp_out_bias: Array1<f64>,
}

/// Learned scale/shift of the final layernorm (per-layer norms are
/// parameter-free).
#[derive(Debug, Clone, PartialEq)]
pub struct FinalLayerNorm {
    pub scale: Array1<f64>,
    pub shift: Array1<f64>,
}

/// Dense parameter tensors of the hooked transformer. Immutable after
/// construction; forward/backward calls are pure and may run concurrently
/// over shared references.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub config: ModelConfig,
    pub token_embed: Array2<f64>,
    pub pos_embed: Array2<f64>,
    pub layers: Vec<LayerWeights>,
    pub unembed: Array2<f64>,
    pub final_ln: Option<FinalLayerNorm>,
}

/// Identifies one tensor inside a [`Weights`] bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum TensorSlot {
    TokenEmbed,
    PosEmbed,
    HeadWq(usize, usize),
    HeadWk(usize, usize),
    HeadWv(usize, usize),
    HeadWo(usize, usize),
    MlpWin(usize),
    MlpBin(usize),
    MlpWout(usize),
    MlpBout(usize),
    Unembed,
    FinalScale,
    FinalShift,
}

impl TensorSlot {
    pub(crate) fn name(&self) -> String {
        match *self {
            TensorSlot::TokenEmbed => "token_embed".into(),
            TensorSlot::PosEmbed => "pos_embed".into(),
            TensorSlot::HeadWq(l, h) => format!("layers.{l}.heads.{h}.w_q"),
            TensorSlot::HeadWk(l, h) => format!("layers.{l}.heads.{h}.w_k"),
            TensorSlot::HeadWv(l, h) => format!("layers.{l}.heads.{h}.w_v"),
            TensorSlot::HeadWo(l, h) => format!("layers.{l}.heads.{h}.w_o"),
            TensorSlot::MlpWin(l) => format!("layers.{l}.mlp.w_in"),
            TensorSlot::MlpBin(l) => format!("layers.{l}.mlp.b_in"),
            TensorSlot::MlpWout(l) => format!("layers.{l}.mlp.w_out"),
            TensorSlot::MlpBout(l) => format!("layers.{l}.mlp.b_out"),
            TensorSlot::Unembed => "unembed".into(),
            TensorSlot::FinalScale => "final_ln.scale".into(),
            TensorSlot::FinalShift => "final_ln.shift".into(),
        }
    }

    pub(crate) fn shape(&self, c: &ModelConfig) -> Vec<usize> {
        match self {
            TensorSlot::TokenEmbed => vec![c.vocab_size, c.d_model],
            TensorSlot::PosEmbed => vec![c.max_seq_len, c.d_model],
            TensorSlot::HeadWq(..) | TensorSlot::HeadWk(..) | TensorSlot::HeadWv(..) => {
                vec![c.d_model, c.d_head]
            }
            TensorSlot::HeadWo(..) => vec![c.d_head, c.d_model],
            TensorSlot::MlpWin(_) => vec![c.d_model, c.d_mlp],
            TensorSlot::MlpBin(_) => vec![c.d_mlp],
            TensorSlot::MlpWout(_) => vec![c.d_mlp, c.d_model],
            TensorSlot::MlpBout(_) => vec![c.d_model],
            TensorSlot::Unembed => vec![c.d_model, c.vocab_size],
            TensorSlot::FinalScale | TensorSlot::FinalShift => vec![c.d_model],
        }
    }

    /// Input dimension of the op this tensor feeds; scales the init range.
    fn fan_in(&self, c: &ModelConfig) -> usize {
        match self {
            TensorSlot::HeadWo(..) => c.d_head,
            TensorSlot::MlpWout(_) | TensorSlot::MlpBout(_) => c.d_mlp,
            _ => c.d_model,
        }
    }

    /// Canonical slot list for a config, in bundle/update order.
    pub(crate) fn all(c: &ModelConfig) -> Vec<TensorSlot> {
        let mut slots = vec![TensorSlot::TokenEmbed, TensorSlot::PosEmbed];
        for l in 0..c.n_layers {
            for h in 0..c.n_heads {
                slots.push(TensorSlot::HeadWq(l, h));
                slots.push(TensorSlot::HeadWk(l, h));
                slots.push(TensorSlot::HeadWv(l, h));
                slots.push(TensorSlot::HeadWo(l, h));
            }
            slots.push(TensorSlot::MlpWin(l));
            slots.push(TensorSlot::MlpBin(l));
            slots.push(TensorSlot::MlpWout(l));
            slots.push(TensorSlot::MlpBout(l));
        }
        slots.push(TensorSlot::Unembed);
        if c.layernorm_enabled {
            slots.push(TensorSlot::FinalScale);
            slots.push(TensorSlot::FinalShift);
        }
        slots
    }
}

impl Weights {
    /// Deterministic random initialization: every weight tensor is drawn
    /// uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in))` on a per-tensor
    /// stream named after the tensor, so results are bit-reproducible
    /// across platforms. The final layernorm starts at identity.
    pub fn init_random(config: &ModelConfig, seed: u64) -> Result<Weights> {
        config.validate()?;
        let mut w = Self::zeros_unchecked(config);
        for slot in TensorSlot::all(config) {
            match slot {
                TensorSlot::FinalScale => {
                    w.slot_mut(slot).fill(1.0);
                }
                TensorSlot::FinalShift => {}
                _ => {
                    let bound = 1.0 / (slot.fan_in(config) as f64).sqrt();
                    let mut rng = NamedRng::new(seed, &slot.name());
                    for x in w.slot_mut(slot).iter_mut() {
                        *x = rng.uniform_pm(bound);
                    }
                }
            }
        }
        Ok(w)
    }

    /// All-zero weights (final layernorm at identity when enabled).
    pub fn zeros(config: &ModelConfig) -> Result<Weights> {
        config.validate()?;
        let mut w = Self::zeros_unchecked(config);
        if config.layernorm_enabled {
            w.slot_mut(TensorSlot::FinalScale).fill(1.0);
        }
        Ok(w)
    }

    fn zeros_unchecked(config: &ModelConfig) -> Weights {
        let c = config;
        let head = || HeadWeights {
            w_q: Array2::zeros((c.d_model, c.d_head)),
            w_k: Array2::zeros((c.d_model, c.d_head)),
            w_v: Array2::zeros((c.d_model, c.d_head)),
            w_o: Array2::zeros((c.d_head, c.d_model)),
        };
        let layers = (0..c.n_layers)
            .map(|_| LayerWeights {
                heads: (0..c.n_heads).map(|_| head()).collect(),
                mlp_in: Array2::zeros((c.d_model, c.d_mlp)),
                mlp_in_bias: Array1::zeros(c.d_mlp),
                mlp_out: Array2::zeros((c.d_mlp, c.d_model)),
                mlp_out_bias: Array1::zeros(c.d_model),
            })
            .collect();
        Weights {
            config: c.clone(),
            token_embed: Array2::zeros((c.vocab_size, c.d_model)),
            pos_embed: Array2::zeros((c.max_seq_len, c.d_model)),
            layers,
            unembed: Array2::zeros((c.d_model, c.vocab_size)),
            final_ln: c.layernorm_enabled.then(|| FinalLayerNorm {
                scale: Array1::zeros(c.d_model),
                shift: Array1::zeros(c.d_model),
            }),
        }
    }

    pub fn topology(&self) -> Topology {
        self.config.topology()
    }

    /// Names of all tensors in canonical bundle order.
    pub fn tensor_names(&self) -> Vec<String> {
        TensorSlot::all(&self.config).iter().map(TensorSlot::name).collect()
    }

    /// Flat view of a tensor by name, with its shape.
    pub fn tensor(&self, name: &str) -> Option<(&[f64], Vec<usize>)> {
        let slot = self.parse_slot(name)?;
        Some((self.slot_slice(slot), slot.shape(&self.config)))
    }

    /// Mutable flat view of a tensor by name.
    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let slot = self.parse_slot(name)?;
        Some(self.slot_mut(slot))
    }

    fn parse_slot(&self, name: &str) -> Option<TensorSlot> {
        // cheap exact-match resolution against the canonical list
        TensorSlot::all(&self.config).into_iter().find(|s| s.name() == name)
    }

    pub(crate) fn slot_slice(&self, slot: TensorSlot) -> &[f64] {
        match slot {
            TensorSlot::TokenEmbed => self.token_embed.as_slice().unwrap(),
            TensorSlot::PosEmbed => self.pos_embed.as_slice().unwrap(),
            TensorSlot::HeadWq(l, h) => self.layers[l].heads[h].w_q.as_slice().unwrap(),
            TensorSlot::HeadWk(l, h) => self.layers[l].heads[h].w_k.as_slice().unwrap(),
            TensorSlot::HeadWv(l, h) => self.layers[l].heads[h].w_v.as_slice().unwrap(),
            TensorSlot::HeadWo(l, h) => self.layers[l].heads[h].w_o.as_slice().unwrap(),
            TensorSlot::MlpWin(l) => self.layers[l].mlp_in.as_slice().unwrap(),
            TensorSlot::MlpBin(l) => self.layers[l].mlp_in_bias.as_slice().unwrap(),
            TensorSlot::MlpWout(l) => self.layers[l].mlp_out.as_slice().unwrap(),
            TensorSlot::MlpBout(l) => self.layers[l].mlp_out_bias.as_slice().unwrap(),
            TensorSlot::Unembed => self.unembed.as_slice().unwrap(),
            TensorSlot::FinalScale => {
                self.final_ln.as_ref().expect("slot listed").scale.as_slice().unwrap()
            }
            TensorSlot::FinalShift => {
                self.final_ln.as_ref().expect("slot listed").shift.as_slice().unwrap()
            }
        }
    }

    pub(crate) fn slot_mut(&mut self, slot: TensorSlot) -> &mut [f64] {
        match slot {
            TensorSlot::TokenEmbed => self.token_embed.as_slice_mut().unwrap(),
            TensorSlot::PosEmbed => self.pos_embed.as_slice_mut().unwrap(),
            TensorSlot::HeadWq(l, h) => self.layers[l].heads[h].w_q.as_slice_mut().unwrap(),
            TensorSlot::HeadWk(l, h) => self.layers[l].heads[h].w_k.as_slice_mut().unwrap(),
            TensorSlot::HeadWv(l, h) => self.layers[l].heads[h].w_v.as_slice_mut().unwrap(),
            TensorSlot::HeadWo(l, h) => self.layers[l].heads[h].w_o.as_slice_mut().unwrap(),
            TensorSlot::MlpWin(l) => self.layers[l].mlp_in.as_slice_mut().unwrap(),
            TensorSlot::MlpBin(l) => self.layers[l].mlp_in_bias.as_slice_mut().unwrap(),
            TensorSlot::MlpWout(l) => self.layers[l].mlp_out.as_slice_mut().unwrap(),
            TensorSlot::MlpBout(l) => self.layers[l].mlp_out_bias.as_slice_mut().unwrap(),
            TensorSlot::Unembed => self.unembed.as_slice_mut().unwrap(),
            TensorSlot::FinalScale => {
                self.final_ln.as_mut().expect("slot listed").scale.as_slice_mut().unwrap()
            }
            TensorSlot::FinalShift => {
                self.final_ln.as_mut().expect("slot listed").shift.as_slice_mut().unwrap()
            }
        }
    }

    // -- forward / backward entry points ------------------------------------

    /// Next-token logits at every position, `seq_len x vocab_size`.
    pub fn forward(&self, tokens: &[u32]) -> Result<Array2<f64>> {
        Ok(forward::run(self, tokens, Intervention::None)?.logits)
    }

    /// Forward pass that also captures every node's residual contribution
    /// and the internals needed for a later backward pass.
    pub fn forward_captured(&self, tokens: &[u32]) -> Result<CapturedRun> {
        let out = forward::run(self, tokens, Intervention::None)?;
        Ok(CapturedRun {
            logits: out.logits,
            cache: ActivationCache {
                topology: self.topology(),
                d_model: self.config.d_model,
                contributions: out.contributions,
            },
            trace: out.trace,
        })
    }

    /// Exact do-intervention: for every patched edge `(u -> v)`, the input
    /// assembled at port `v` uses `u`'s contribution from `corr` instead of
    /// this run's own; downstream computation then proceeds normally.
    ///
    /// An empty patch set is bit-identical to [`Weights::forward`] on the
    /// clean tokens; patching every edge is bit-identical to a plain
    /// forward on the corrupted tokens.
    pub fn forward_patched(
        &self,
        tokens_clean: &[u32],
        cache_corr: &ActivationCache,
        patched: &PatchSet,
    ) -> Result<Array2<f64>> {
        Ok(forward::run(self, tokens_clean, Intervention::Patch {
            corr: cache_corr,
            set: patched,
        })?
        .logits)
    }

    /// Forward pass with an additive probe at one destination port (the
    /// finite-difference hook used by the gradient checker).
    pub fn forward_with_port_offset(
        &self,
        tokens: &[u32],
        port: DestPort,
        delta: &Array2<f64>,
    ) -> Result<Array2<f64>> {
        let topology = self.topology();
        let idx = topology.port_index(port);
        if idx >= topology.port_count() || topology.port_at(idx) != port {
            return Err(Error::InvalidArgument(format!("no port {port} in this architecture")));
        }
        Ok(forward::run(self, tokens, Intervention::Offset { port: idx, delta })?.logits)
    }

    /// Reverse-mode pass seeded with `d metric / d logits`. Returns the
    /// gradient of the metric at every destination port's pre-layernorm
    /// residual input, plus parameter gradients for the trainer.
    pub fn backward(&self, run: &CapturedRun, metric_grad_at_logits: &Array2<f64>) -> Result<Gradients> {
        let s = run.trace.tokens.len();
        if metric_grad_at_logits.dim() != (s, self.config.vocab_size) {
            return Err(Error::InvalidArgument(format!(
                "metric gradient shape {:?} != ({s}, {})",
                metric_grad_at_logits.dim(),
                self.config.vocab_size
            )));
        }
        Ok(backward::run(self, &run.trace, metric_grad_at_logits))
    }

    /// Full-batch gradient descent on mean next-token cross-entropy.
    /// Deterministic for a given `(corpus, steps, learning_rate, seed)`.
    pub fn fine_tune(
        &self,
        corpus: &[Vec<u32>],
        steps: usize,
        learning_rate: f64,
        seed: u64,
    ) -> Result<Weights> {
        train::fine_tune(self, corpus, steps, learning_rate, seed)
    }

    /// Mean next-token cross-entropy over a corpus.
    pub fn mean_cross_entropy(&self, corpus: &[Vec<u32>]) -> Result<f64> {
        train::mean_cross_entropy(self, corpus)
    }
}

// ---------------------------------------------------------------------------
// Activation cache and captured runs
// ---------------------------------------------------------------------------

/// Per-node residual-stream output contributions from one forward pass.
///
/// The decomposition is exactly linear: summing the upstream contributions
/// reproduces the residual value entering any destination port.
#[derive(Debug, Clone)]
pub struct ActivationCache {
    topology: Topology,
    d_model: usize,
    contributions: Vec<Array2<f64>>,
}

impl ActivationCache {
    pub fn seq_len(&self) -> usize {
        self.contributions[0].nrows()
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    /// Residual contribution of a source node, `seq_len x d_model`.
    pub fn contribution(&self, node: Node) -> Result<&Array2<f64>> {
        if !node.is_source() {
            return Err(Error::InvalidArgument("logits node has no residual contribution".into()));
        }
        Ok(&self.contributions[self.topology.node_index(node)])
    }

    pub(crate) fn contribution_by_index(&self, index: usize) -> &Array2<f64> {
        &self.contributions[index]
    }

    /// Replace one node's contribution (synthetic-intervention probe).
    pub fn set_contribution(&mut self, node: Node, contribution: Array2<f64>) -> Result<()> {
        if !node.is_source() {
            return Err(Error::InvalidArgument("logits node has no residual contribution".into()));
        }
        if contribution.dim() != (self.seq_len(), self.d_model) {
            return Err(Error::InvalidArgument(format!(
                "contribution shape {:?} != ({}, {})",
                contribution.dim(),
                self.seq_len(),
                self.d_model
            )));
        }
        self.contributions[self.topology.node_index(node)] = contribution;
        Ok(())
    }

    /// Interpolate every contribution toward `other`: `self + t*(other - self)`.
    /// Used to probe the first-order regime of attribution scores.
    pub fn lerp(&self, other: &ActivationCache, t: f64) -> Result<ActivationCache> {
        if self.seq_len() != other.seq_len() {
            return Err(Error::LengthMismatch { clean: self.seq_len(), corrupt: other.seq_len() });
        }
        if self.topology != other.topology {
            return Err(Error::InvalidArgument("caches from different architectures".into()));
        }
        let contributions = self
            .contributions
            .iter()
            .zip(&other.contributions)
            .map(|(a, b)| a + &((b - a) * t))
            .collect();
        Ok(ActivationCache { topology: self.topology.clone(), d_model: self.d_model, contributions })
    }
}

/// Logits plus everything captured during a forward pass.
pub struct CapturedRun {
    logits: Array2<f64>,
    cache: ActivationCache,
    trace: Trace,
}

impl CapturedRun {
    pub fn logits(&self) -> &Array2<f64> {
        &self.logits
    }

    pub fn cache(&self) -> &ActivationCache {
        &self.cache
    }

    pub fn tokens(&self) -> &[u32] {
        &self.trace.tokens
    }

    /// The assembled pre-layernorm residual input of a destination port.
    pub fn port_input(&self, port: DestPort) -> &Array2<f64> {
        &self.trace.port_inputs[self.cache.topology.port_index(port)]
    }
}

// ---------------------------------------------------------------------------
// Gradients
// ---------------------------------------------------------------------------

/// Parameter gradients, shaped exactly like the weights they differentiate.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    tensors: Weights,
}

impl ParamGrads {
    pub(crate) fn zeros(config: &ModelConfig) -> ParamGrads {
        // zeros_unchecked leaves the final-layernorm scale at 0, which is
        // what a gradient accumulator wants (Weights::zeros sets it to 1)
        ParamGrads { tensors: Weights::zeros_unchecked(config) }
    }

    pub fn tensor(&self, name: &str) -> Option<(&[f64], Vec<usize>)> {
        self.tensors.tensor(name)
    }

    pub(crate) fn tensors(&self) -> &Weights {
        &self.tensors
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut Weights {
        &mut self.tensors
    }

    /// `self += other`, tensor by tensor.
    pub(crate) fn add_assign(&mut self, other: &ParamGrads) {
        for slot in TensorSlot::all(&self.tensors.config) {
            let src = other.tensors.slot_slice(slot).to_vec();
            for (a, b) in self.tensors.slot_mut(slot).iter_mut().zip(src) {
                *a += b;
            }
        }
    }
}

/// Output of one backward pass: the metric gradient at every destination
/// port's pre-layernorm residual input, plus parameter gradients.
pub struct Gradients {
    topology: Topology,
    pub(crate) port_grads: Vec<Array2<f64>>,
    pub params: ParamGrads,
}

impl Gradients {
    /// `d metric / d (port residual input)`, `seq_len x d_model`.
    pub fn port(&self, port: DestPort) -> &Array2<f64> {
        &self.port_grads[self.topology.port_index(port)]
    }

    #[cfg(test)]
    pub(crate) fn port_by_index(&self, index: usize) -> &Array2<f64> {
        &self.port_grads[index]
    }

    pub(crate) fn new(topology: Topology, port_grads: Vec<Array2<f64>>, params: ParamGrads) -> Self {
        Gradients { topology, port_grads, params }
    }
}

// ---------------------------------------------------------------------------
// Patch sets
// ---------------------------------------------------------------------------

/// A set of edges receiving corrupted activations during a patched forward
/// pass. Membership is a dense (source node, destination port) bitmap, so
/// lookup inside the hot assembly loop is an index.
#[derive(Debug, Clone)]
pub struct PatchSet {
    node_count: usize,
    bits: Vec<bool>,
    len: usize,
}

impl PatchSet {
    pub fn empty(topology: &Topology) -> PatchSet {
        PatchSet {
            node_count: topology.node_count(),
            bits: vec![false; topology.node_count() * topology.port_count()],
            len: 0,
        }
    }

    /// Every legal edge.
    pub fn full(topology: &Topology) -> PatchSet {
        let mut set = Self::empty(topology);
        for id in topology.edge_ids() {
            set.insert(topology, &id).expect("enumerated edges are legal");
        }
        set
    }

    pub fn from_edges<'a, I>(topology: &Topology, edges: I) -> Result<PatchSet>
    where
        I: IntoIterator<Item = &'a EdgeId>,
    {
        let mut set = Self::empty(topology);
        for id in edges {
            set.insert(topology, id)?;
        }
        Ok(set)
    }

    /// The complement of a circuit: every edge whose `in_graph` flag is
    /// false. This is the patch set used by evaluate-graph scoring.
    pub fn out_of_circuit(graph: &CircuitGraph) -> PatchSet {
        let mut set = Self::empty(graph.topology());
        for edge in graph.edges() {
            if !edge.in_graph {
                set.insert(graph.topology(), &edge.id).expect("graph edges are legal");
            }
        }
        set
    }

    pub fn insert(&mut self, topology: &Topology, id: &EdgeId) -> Result<()> {
        topology.edge_index(id)?; // validates legality
        let bit = topology.port_index(id.dst) * self.node_count + topology.node_index(id.src);
        if !self.bits[bit] {
            self.bits[bit] = true;
            self.len += 1;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub(crate) fn contains_indices(&self, src_node: usize, port: usize) -> bool {
        self.bits[port * self.node_count + src_node]
    }
}

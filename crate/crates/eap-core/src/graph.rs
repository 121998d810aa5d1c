//! Computational-graph enumeration: nodes, edges, circuits.
//!
//! The graph has one `input` node, `n_heads` attention-head nodes and one
//! MLP node per layer, and a final `logits` node. Attention and MLP are
//! wired sequentially within a layer, so a layer's MLP sees that layer's
//! heads but heads never see same-layer heads. Every source node feeds
//! every later destination port: `q`/`k`/`v` of each head, the single MLP
//! input, and the logits input.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Nodes and ports
// ---------------------------------------------------------------------------

/// Which input of an attention head an edge feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Qkv {
    Q,
    K,
    V,
}

impl Qkv {
    pub fn letter(self) -> char {
        match self {
            Qkv::Q => 'q',
            Qkv::K => 'k',
            Qkv::V => 'v',
        }
    }

    pub const ALL: [Qkv; 3] = [Qkv::Q, Qkv::K, Qkv::V];
}

/// A computational node: the input embedding, one attention head, one MLP
/// block, or the logits/unembedding.
///
/// Display names follow the `input` / `a{i}.h{j}` / `m{i}` / `logits`
/// convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Node {
    Input,
    Head { layer: usize, head: usize },
    Mlp { layer: usize },
    Logits,
}

impl Node {
    pub fn name(&self) -> String {
        self.to_string()
    }

    /// True for nodes that write a contribution into the residual stream.
    pub fn is_source(&self) -> bool {
        !matches!(self, Node::Logits)
    }

    /// Layer the node lives in; `None` for input and logits.
    pub fn layer(&self) -> Option<usize> {
        match self {
            Node::Head { layer, .. } | Node::Mlp { layer } => Some(*layer),
            _ => None,
        }
    }

    pub fn parse(s: &str) -> Result<Node> {
        match s {
            "input" => return Ok(Node::Input),
            "logits" => return Ok(Node::Logits),
            _ => {}
        }
        if let Some(rest) = s.strip_prefix('m') {
            let layer = rest
                .parse::<usize>()
                .map_err(|_| Error::Parse(format!("bad node name: {s}")))?;
            return Ok(Node::Mlp { layer });
        }
        if let Some(rest) = s.strip_prefix('a') {
            if let Some((l, h)) = rest.split_once(".h") {
                let layer = l
                    .parse::<usize>()
                    .map_err(|_| Error::Parse(format!("bad node name: {s}")))?;
                let head = h
                    .parse::<usize>()
                    .map_err(|_| Error::Parse(format!("bad node name: {s}")))?;
                return Ok(Node::Head { layer, head });
            }
        }
        Err(Error::Parse(format!("bad node name: {s}")))
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Input => write!(f, "input"),
            Node::Head { layer, head } => write!(f, "a{layer}.h{head}"),
            Node::Mlp { layer } => write!(f, "m{layer}"),
            Node::Logits => write!(f, "logits"),
        }
    }
}

/// A destination endpoint: a node input port. Heads expose `q`/`k`/`v`
/// ports; MLP and logits each expose a single port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DestPort {
    Head { layer: usize, head: usize, slot: Qkv },
    Mlp { layer: usize },
    Logits,
}

impl DestPort {
    /// The node this port belongs to.
    pub fn node(&self) -> Node {
        match *self {
            DestPort::Head { layer, head, .. } => Node::Head { layer, head },
            DestPort::Mlp { layer } => Node::Mlp { layer },
            DestPort::Logits => Node::Logits,
        }
    }

    pub fn slot(&self) -> Option<Qkv> {
        match self {
            DestPort::Head { slot, .. } => Some(*slot),
            _ => None,
        }
    }

    pub fn name(&self) -> String {
        self.to_string()
    }

    /// Parse `m3`, `logits`, or `a0.h5<k>`.
    pub fn parse(s: &str) -> Result<DestPort> {
        let (node_str, slot) = match s.find('<') {
            Some(i) => {
                let slot = match &s[i..] {
                    "<q>" => Qkv::Q,
                    "<k>" => Qkv::K,
                    "<v>" => Qkv::V,
                    other => return Err(Error::Parse(format!("bad port suffix: {other}"))),
                };
                (&s[..i], Some(slot))
            }
            None => (s, None),
        };
        match (Node::parse(node_str)?, slot) {
            (Node::Head { layer, head }, Some(slot)) => Ok(DestPort::Head { layer, head, slot }),
            (Node::Head { .. }, None) => {
                Err(Error::Parse(format!("head destination {s} needs a <q|k|v> port")))
            }
            (Node::Mlp { layer }, None) => Ok(DestPort::Mlp { layer }),
            (Node::Logits, None) => Ok(DestPort::Logits),
            _ => Err(Error::Parse(format!("bad destination: {s}"))),
        }
    }
}

impl fmt::Display for DestPort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DestPort::Head { layer, head, slot } => {
                write!(f, "a{layer}.h{head}<{}>", slot.letter())
            }
            DestPort::Mlp { layer } => write!(f, "m{layer}"),
            DestPort::Logits => write!(f, "logits"),
        }
    }
}

/// Identity of a directed edge: source node output into a destination port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EdgeId {
    pub src: Node,
    pub dst: DestPort,
}

impl EdgeId {
    /// Display form, e.g. `input->a0.h5<k>`, `m0->m2`, `a33.h11->logits`.
    pub fn name(&self) -> String {
        self.to_string()
    }

    pub fn parse(s: &str) -> Result<EdgeId> {
        let (src, dst) = s
            .split_once("->")
            .ok_or_else(|| Error::Parse(format!("bad edge name: {s}")))?;
        Ok(EdgeId { src: Node::parse(src)?, dst: DestPort::parse(dst)? })
    }
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.src, self.dst)
    }
}

/// A scored edge with circuit membership.
#[derive(Debug, Clone)]
pub struct Edge {
    pub id: EdgeId,
    /// Signed EAP attribution; ranking uses the magnitude.
    pub score: f64,
    pub in_graph: bool,
    /// 1-based position under (|score| desc, name asc), set by `assign_ranks`.
    pub rank: Option<usize>,
}

// ---------------------------------------------------------------------------
// Topology: the index space
// ---------------------------------------------------------------------------

/// Closed-form node/port/edge indexing for an `(n_layers, n_heads)`
/// architecture.
///
/// Node order is computation order: input, then per layer all heads then
/// the MLP, then logits. Ports are ordered the same way (`q`,`k`,`v` per
/// head). Edges are ordered destination-major with sources ascending, so
/// every index is a prefix-sum away and no hash map is needed even for
/// million-edge graphs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    n_layers: usize,
    n_heads: usize,
    /// Cumulative edge count before each port, plus a trailing total.
    port_edge_offsets: Vec<usize>,
}

impl Topology {
    pub fn new(n_layers: usize, n_heads: usize) -> Self {
        let mut t = Topology { n_layers, n_heads, port_edge_offsets: Vec::new() };
        let mut offsets = Vec::with_capacity(t.port_count() + 1);
        let mut total = 0usize;
        for p in 0..t.port_count() {
            offsets.push(total);
            total += t.upstream_sources(t.port_at(p));
        }
        offsets.push(total);
        t.port_edge_offsets = offsets;
        t
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    /// `2 + n_layers * (n_heads + 1)` nodes.
    pub fn node_count(&self) -> usize {
        2 + self.n_layers * (self.n_heads + 1)
    }

    /// Nodes that write into the residual stream (everything but logits).
    pub fn source_node_count(&self) -> usize {
        self.node_count() - 1
    }

    /// `n_layers * (3 * n_heads + 1) + 1` destination ports.
    pub fn port_count(&self) -> usize {
        self.n_layers * (3 * self.n_heads + 1) + 1
    }

    pub fn edge_count(&self) -> usize {
        *self.port_edge_offsets.last().expect("offsets built in new")
    }

    pub fn node_index(&self, node: Node) -> usize {
        let h = self.n_heads;
        match node {
            Node::Input => 0,
            Node::Head { layer, head } => 1 + layer * (h + 1) + head,
            Node::Mlp { layer } => 1 + layer * (h + 1) + h,
            Node::Logits => 1 + self.n_layers * (h + 1),
        }
    }

    pub fn node_at(&self, index: usize) -> Node {
        let h = self.n_heads;
        if index == 0 {
            return Node::Input;
        }
        if index == 1 + self.n_layers * (h + 1) {
            return Node::Logits;
        }
        let rest = index - 1;
        let layer = rest / (h + 1);
        let within = rest % (h + 1);
        if within == h {
            Node::Mlp { layer }
        } else {
            Node::Head { layer, head: within }
        }
    }

    pub fn port_index(&self, port: DestPort) -> usize {
        let h = self.n_heads;
        match port {
            DestPort::Head { layer, head, slot } => {
                layer * (3 * h + 1) + 3 * head + slot as usize
            }
            DestPort::Mlp { layer } => layer * (3 * h + 1) + 3 * h,
            DestPort::Logits => self.n_layers * (3 * h + 1),
        }
    }

    pub fn port_at(&self, index: usize) -> DestPort {
        let h = self.n_heads;
        let per_layer = 3 * h + 1;
        if index == self.n_layers * per_layer {
            return DestPort::Logits;
        }
        let layer = index / per_layer;
        let within = index % per_layer;
        if within == 3 * h {
            DestPort::Mlp { layer }
        } else {
            DestPort::Head { layer, head: within / 3, slot: Qkv::ALL[within % 3] }
        }
    }

    /// Number of upstream source nodes feeding a port. Sources always form
    /// a prefix `0..n` of the node index space.
    pub fn upstream_sources(&self, port: DestPort) -> usize {
        let h = self.n_heads;
        match port {
            DestPort::Head { layer, .. } => 1 + layer * (h + 1),
            DestPort::Mlp { layer } => 1 + layer * (h + 1) + h,
            DestPort::Logits => 1 + self.n_layers * (h + 1),
        }
    }

    /// Index of an edge in the canonical enumeration; errors on edges not
    /// in the graph (e.g. a source at or after its destination).
    pub fn edge_index(&self, id: &EdgeId) -> Result<usize> {
        let src = self.node_index(id.src);
        if !self.contains_node(id.src) || !self.contains_port(id.dst) {
            return Err(Error::UnknownEdge(id.name()));
        }
        let upstream = self.upstream_sources(id.dst);
        if !id.src.is_source() || src >= upstream {
            return Err(Error::UnknownEdge(id.name()));
        }
        Ok(self.port_edge_offsets[self.port_index(id.dst)] + src)
    }

    pub fn edge_at(&self, index: usize) -> EdgeId {
        // offsets are strictly increasing (every port sees the input node)
        let p = match self.port_edge_offsets.binary_search(&index) {
            Ok(p) => p,
            Err(p) => p - 1,
        };
        EdgeId { src: self.node_at(index - self.port_edge_offsets[p]), dst: self.port_at(p) }
    }

    fn contains_node(&self, node: Node) -> bool {
        match node {
            Node::Input | Node::Logits => true,
            Node::Head { layer, head } => layer < self.n_layers && head < self.n_heads,
            Node::Mlp { layer } => layer < self.n_layers,
        }
    }

    fn contains_port(&self, port: DestPort) -> bool {
        self.contains_node(port.node())
    }

    /// All destination ports in computation order.
    pub fn ports(&self) -> impl Iterator<Item = DestPort> + '_ {
        (0..self.port_count()).map(|i| self.port_at(i))
    }

    /// All nodes in computation order.
    pub fn nodes(&self) -> impl Iterator<Item = Node> + '_ {
        (0..self.node_count()).map(|i| self.node_at(i))
    }

    /// Canonical edge enumeration: destination ports in computation order,
    /// sources ascending within each port.
    pub fn edge_ids(&self) -> impl Iterator<Item = EdgeId> + '_ {
        self.ports().flat_map(move |port| {
            (0..self.upstream_sources(port))
                .map(move |s| EdgeId { src: self.node_at(s), dst: port })
        })
    }
}

// ---------------------------------------------------------------------------
// CircuitGraph
// ---------------------------------------------------------------------------

/// The full scored edge list plus circuit-membership flags.
#[derive(Debug, Clone)]
pub struct CircuitGraph {
    topology: Topology,
    edges: Vec<Edge>,
}

impl CircuitGraph {
    /// Enumerate all nodes and edges for a model configuration. Every edge
    /// starts in-graph with score 0.
    pub fn build(config: &ModelConfig) -> Result<CircuitGraph> {
        config.validate()?;
        Ok(Self::build_dims(config.n_layers, config.n_heads))
    }

    /// Enumerate from bare layer/head counts (no full config needed).
    pub fn build_dims(n_layers: usize, n_heads: usize) -> CircuitGraph {
        let topology = Topology::new(n_layers, n_heads);
        let edges = topology
            .edge_ids()
            .map(|id| Edge { id, score: 0.0, in_graph: true, rank: None })
            .collect();
        CircuitGraph { topology, edges }
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn node_count(&self) -> usize {
        self.topology.node_count()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = Node> + '_ {
        self.topology.nodes()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, id: &EdgeId) -> Result<&Edge> {
        Ok(&self.edges[self.topology.edge_index(id)?])
    }

    pub fn in_graph_count(&self) -> usize {
        self.edges.iter().filter(|e| e.in_graph).count()
    }

    /// Overwrite all edge scores (canonical order) and recompute ranks.
    pub fn set_scores(&mut self, scores: &[f64]) -> Result<()> {
        if scores.len() != self.edges.len() {
            return Err(Error::InvalidArgument(format!(
                "score vector length {} != edge count {}",
                scores.len(),
                self.edges.len()
            )));
        }
        for (edge, &s) in self.edges.iter_mut().zip(scores) {
            edge.score = s;
        }
        self.assign_ranks();
        Ok(())
    }

    pub fn set_score(&mut self, id: &EdgeId, score: f64) -> Result<()> {
        let i = self.topology.edge_index(id)?;
        self.edges[i].score = score;
        Ok(())
    }

    /// Rank edges 1-based by |score| descending, ties broken by display
    /// name ascending. Deterministic regardless of storage order.
    pub fn assign_ranks(&mut self) {
        let order = rank_order(&self.edges);
        for (rank0, &i) in order.iter().enumerate() {
            self.edges[i].rank = Some(rank0 + 1);
        }
    }

    /// The `min(k, |edges|)` highest-|score| edges, ties by name.
    pub fn top_k(&self, k: usize) -> Result<Vec<&Edge>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        let order = rank_order(&self.edges);
        Ok(order.into_iter().take(k).map(|i| &self.edges[i]).collect())
    }

    /// Set `in_graph` true for exactly the given edges, false elsewhere.
    pub fn select_circuit(&mut self, circuit: &[EdgeId]) -> Result<()> {
        // validate first so a bad id leaves the graph untouched
        let mut indices = Vec::with_capacity(circuit.len());
        for id in circuit {
            indices.push(self.topology.edge_index(id)?);
        }
        for e in &mut self.edges {
            e.in_graph = false;
        }
        for i in indices {
            self.edges[i].in_graph = true;
        }
        Ok(())
    }

    pub fn select_all(&mut self) {
        for e in &mut self.edges {
            e.in_graph = true;
        }
    }

    /// Export to DOT or JSON based on the `format` argument.
    pub fn export(&self, format: ExportFormat, path: &Path) -> Result<()> {
        match format {
            ExportFormat::Dot => self.write_dot(path),
            ExportFormat::Json => self.write_json(path),
        }
    }

    /// DOT rendering: all nodes (input green, heads orange, MLPs purple,
    /// logits yellow), in-graph edges only, head edges labelled with the
    /// port letter.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph circuit {\n  node [style=filled];\n");
        for node in self.nodes() {
            let color = match node {
                Node::Input => "green",
                Node::Head { .. } => "orange",
                Node::Mlp { .. } => "purple",
                Node::Logits => "yellow",
            };
            out.push_str(&format!("  \"{node}\" [fillcolor={color}];\n"));
        }
        for edge in &self.edges {
            if !edge.in_graph {
                continue;
            }
            let src = edge.id.src;
            let dst = edge.id.dst.node();
            match edge.id.dst.slot() {
                Some(slot) => out.push_str(&format!(
                    "  \"{src}\" -> \"{dst}\" [label=\"{}\"];\n",
                    slot.letter()
                )),
                None => out.push_str(&format!("  \"{src}\" -> \"{dst}\";\n")),
            }
        }
        out.push_str("}\n");
        out
    }

    pub fn write_dot(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        f.write_all(self.to_dot().as_bytes())?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let f = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(f, &CircuitJson::from(self))?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<CircuitGraph> {
        let f = BufReader::new(File::open(path)?);
        let json: CircuitJson = serde_json::from_reader(f)?;
        json.into_graph()
    }
}

/// Sorted edge indices under (|score| desc, name asc).
pub fn rank_order(edges: &[Edge]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..edges.len()).collect();
    let names: Vec<String> = edges.iter().map(|e| e.id.name()).collect();
    order.sort_by(|&a, &b| {
        edges[b]
            .score
            .abs()
            .partial_cmp(&edges[a].score.abs())
            .expect("scores are finite")
            .then_with(|| names[a].cmp(&names[b]))
    });
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Dot,
    Json,
}

// ---------------------------------------------------------------------------
// JSON schema
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct GraphConfigJson {
    n_layers: usize,
    n_heads: usize,
}

#[derive(Serialize, Deserialize)]
struct NodeJson {
    name: String,
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    layer: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    head: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct EdgeJson {
    src: String,
    dst: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    port: Option<char>,
    score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    rank: Option<usize>,
    in_graph: bool,
}

/// On-disk circuit schema.
#[derive(Serialize, Deserialize)]
pub struct CircuitJson {
    config: GraphConfigJson,
    nodes: Vec<NodeJson>,
    edges: Vec<EdgeJson>,
}

impl From<&CircuitGraph> for CircuitJson {
    fn from(g: &CircuitGraph) -> Self {
        let nodes = g
            .nodes()
            .map(|n| NodeJson {
                name: n.name(),
                kind: match n {
                    Node::Input => "input",
                    Node::Head { .. } => "head",
                    Node::Mlp { .. } => "mlp",
                    Node::Logits => "logits",
                }
                .to_string(),
                layer: n.layer(),
                head: match n {
                    Node::Head { head, .. } => Some(head),
                    _ => None,
                },
            })
            .collect();
        let edges = g
            .edges
            .iter()
            .map(|e| EdgeJson {
                src: e.id.src.name(),
                dst: e.id.dst.node().name(),
                port: e.id.dst.slot().map(Qkv::letter),
                score: e.score,
                rank: e.rank,
                in_graph: e.in_graph,
            })
            .collect();
        CircuitJson {
            config: GraphConfigJson {
                n_layers: g.topology.n_layers(),
                n_heads: g.topology.n_heads(),
            },
            nodes,
            edges,
        }
    }
}

impl CircuitJson {
    fn into_graph(self) -> Result<CircuitGraph> {
        let mut g = CircuitGraph::build_dims(self.config.n_layers, self.config.n_heads);
        for e in &mut g.edges {
            e.in_graph = false;
        }
        let mut seen = HashSet::new();
        for rec in &self.edges {
            let name = match rec.port {
                Some(p) => format!("{}->{}<{}>", rec.src, rec.dst, p),
                None => format!("{}->{}", rec.src, rec.dst),
            };
            let id = EdgeId::parse(&name)?;
            let i = g.topology.edge_index(&id)?;
            if !seen.insert(i) {
                return Err(Error::Parse(format!("duplicate edge in circuit JSON: {name}")));
            }
            g.edges[i].score = rec.score;
            g.edges[i].rank = rec.rank;
            g.edges[i].in_graph = rec.in_graph;
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn appendix_b_graph_sizes() {
        for (l, h, nodes, edges) in
            [(12, 12, 158, 32491), (36, 20, 758, 810703), (32, 32, 1058, 1592881)]
        {
            let g = CircuitGraph::build_dims(l, h);
            assert_eq!(g.node_count(), nodes, "nodes for ({l},{h})");
            assert_eq!(g.edge_count(), edges, "edges for ({l},{h})");
        }
    }

    #[test]
    fn one_layer_one_head_enumeration() {
        let g = CircuitGraph::build_dims(1, 1);
        assert_eq!(g.node_count(), 4);
        let names: Vec<String> = g.edges().iter().map(|e| e.id.name()).collect();
        assert_eq!(
            names,
            vec![
                "input->a0.h0<q>",
                "input->a0.h0<k>",
                "input->a0.h0<v>",
                "input->m0",
                "a0.h0->m0",
                "input->logits",
                "a0.h0->logits",
                "m0->logits",
            ]
        );
    }

    #[test]
    fn closed_form_matches_exhaustive_enumeration() {
        // independent brute-force count: every (source node, later port)
        for l in 1..=4 {
            for h in 1..=4 {
                let t = Topology::new(l, h);
                let mut brute = 0usize;
                for p in 0..t.port_count() {
                    let port = t.port_at(p);
                    for n in 0..t.node_count() {
                        let node = t.node_at(n);
                        if !node.is_source() {
                            continue;
                        }
                        // a node feeds a port iff it is computed strictly
                        // before the port's node; heads of the same layer
                        // never feed each other
                        let feeds = match (node, port) {
                            (Node::Input, _) => true,
                            (Node::Head { layer: sl, .. }, DestPort::Head { layer: dl, .. }) => {
                                sl < dl
                            }
                            (Node::Head { layer: sl, .. }, DestPort::Mlp { layer: dl }) => {
                                sl <= dl
                            }
                            (Node::Head { .. }, DestPort::Logits) => true,
                            (Node::Mlp { layer: sl }, DestPort::Head { layer: dl, .. }) => sl < dl,
                            (Node::Mlp { layer: sl }, DestPort::Mlp { layer: dl }) => sl < dl,
                            (Node::Mlp { .. }, DestPort::Logits) => true,
                            (Node::Logits, _) => unreachable!(),
                        };
                        if feeds {
                            brute += 1;
                        }
                    }
                }
                assert_eq!(t.edge_count(), brute, "(L={l},H={h})");
            }
        }
    }

    #[test]
    fn edge_index_round_trips() {
        let t = Topology::new(3, 2);
        for (i, id) in t.edge_ids().enumerate() {
            assert_eq!(t.edge_index(&id).unwrap(), i);
            assert_eq!(t.edge_at(i), id);
        }
    }

    #[test]
    fn node_index_round_trips() {
        let t = Topology::new(3, 4);
        for i in 0..t.node_count() {
            assert_eq!(t.node_index(t.node_at(i)), i);
        }
        for p in 0..t.port_count() {
            assert_eq!(t.port_index(t.port_at(p)), p);
        }
    }

    #[test]
    fn format_parse_round_trip_all_edges() {
        let g = CircuitGraph::build_dims(2, 2);
        assert_eq!(g.edge_count(), 46);
        for e in g.edges() {
            let parsed = EdgeId::parse(&e.id.name()).unwrap();
            assert_eq!(parsed, e.id);
        }
    }

    #[test]
    fn table6_edge_names() {
        let m11_logits = EdgeId { src: Node::Mlp { layer: 11 }, dst: DestPort::Logits };
        assert_eq!(m11_logits.name(), "m11->logits");
        let gss1 = EdgeId {
            src: Node::Input,
            dst: DestPort::Head { layer: 0, head: 5, slot: Qkv::K },
        };
        assert_eq!(gss1.name(), "input->a0.h5<k>");
        let large = EdgeId { src: Node::Head { layer: 33, head: 11 }, dst: DestPort::Logits };
        assert_eq!(large.name(), "a33.h11->logits");
    }

    #[test]
    fn top_k_tie_breaking_and_clamp() {
        let mut g = CircuitGraph::build_dims(1, 1);
        // all zero scores, k=3: first three edges in name order
        let top = g.top_k(3).unwrap();
        let names: Vec<String> = top.iter().map(|e| e.id.name()).collect();
        let mut all: Vec<String> = g.edges().iter().map(|e| e.id.name()).collect();
        all.sort();
        assert_eq!(names, all[..3].to_vec());

        // magnitude ordering with signs
        let e1 = g.edges()[0].id;
        let e2 = g.edges()[1].id;
        let e3 = g.edges()[2].id;
        g.set_score(&e1, -5.0).unwrap();
        g.set_score(&e2, 4.0).unwrap();
        g.set_score(&e3, 1.0).unwrap();
        let top = g.top_k(2).unwrap();
        assert_eq!(top[0].id, e1);
        assert_eq!(top[1].id, e2);

        // k >= |edges| clamps
        assert_eq!(g.top_k(1000).unwrap().len(), g.edge_count());
        assert!(g.top_k(0).is_err());
    }

    #[test]
    fn rank_order_is_storage_order_invariant() {
        let mut g = CircuitGraph::build_dims(2, 2);
        let scores: Vec<f64> =
            (0..g.edge_count()).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        g.set_scores(&scores).unwrap();
        let names: Vec<String> = g.top_k(10).unwrap().iter().map(|e| e.id.name()).collect();

        // shuffle internal storage, re-rank, compare
        let mut shuffled = g.clone();
        shuffled.edges.reverse();
        shuffled.assign_ranks();
        let names2: Vec<String> =
            shuffled.top_k(10).unwrap().iter().map(|e| e.id.name()).collect();
        assert_eq!(names, names2);
    }

    #[test]
    fn select_circuit_cardinality() {
        let mut g = CircuitGraph::build_dims(12, 12);
        g.select_circuit(&[]).unwrap();
        assert_eq!(g.in_graph_count(), 0);
        let all: Vec<EdgeId> = g.topology().edge_ids().collect();
        g.select_circuit(&all).unwrap();
        assert_eq!(g.in_graph_count(), 32491);
        let single = EdgeId::parse("m11->logits").unwrap();
        g.select_circuit(&[single]).unwrap();
        assert_eq!(g.in_graph_count(), 1);
        assert!(g.edge(&single).unwrap().in_graph);
    }

    #[test]
    fn select_circuit_rejects_unknown_edges() {
        let mut g = CircuitGraph::build_dims(1, 1);
        // same-layer head->head edge does not exist
        let bad = EdgeId::parse("m0->a0.h0<q>").unwrap();
        assert!(matches!(g.select_circuit(&[bad]), Err(Error::UnknownEdge(_))));
        // out-of-range layer
        let bad = EdgeId::parse("m5->logits").unwrap();
        assert!(g.select_circuit(&[bad]).is_err());
    }

    #[test]
    fn dot_export_counts() {
        let mut g = CircuitGraph::build_dims(1, 1);
        let dot = g.to_dot();
        assert_eq!(dot.matches("->").count(), 8);
        assert_eq!(dot.matches("fillcolor").count(), 4);
        assert!(dot.contains("fillcolor=green"));
        assert!(dot.contains("fillcolor=orange"));
        assert!(dot.contains("fillcolor=purple"));
        assert!(dot.contains("fillcolor=yellow"));
        g.select_circuit(&[]).unwrap();
        assert_eq!(g.to_dot().matches("->").count(), 0);
    }

    #[test]
    fn json_round_trip_preserves_scores_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("circuit.json");
        let mut g = CircuitGraph::build_dims(2, 2);
        let scores: Vec<f64> = (0..g.edge_count())
            .map(|i| (i as f64 + 0.1) * 1.0e-3 * if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        g.set_scores(&scores).unwrap();
        g.select_circuit(&[g.edges()[3].id, g.edges()[17].id]).unwrap();
        g.write_json(&path).unwrap();
        let back = CircuitGraph::read_json(&path).unwrap();
        assert_eq!(back.edge_count(), g.edge_count());
        for (a, b) in g.edges().iter().zip(back.edges()) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.score.to_bits(), b.score.to_bits());
            assert_eq!(a.in_graph, b.in_graph);
            assert_eq!(a.rank, b.rank);
        }
    }
}

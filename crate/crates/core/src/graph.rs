//! Binomial random graphs, eagerly generated or exposed pair by pair.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashMap;
use thiserror::Error;

pub type NodeId = u32;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("node count must be positive")]
    EmptyGraph,
    #[error("edge probability {0} is outside [0, 1]")]
    InvalidProbability(f64),
    #[error("node {node} is out of range for a graph on {n} nodes")]
    NodeOutOfRange { node: NodeId, n: usize },
    #[error("self-loop requested at node {0}")]
    SelfLoop(NodeId),
    #[error("duplicate edge {{{0}, {1}}}")]
    DuplicateEdge(NodeId, NodeId),
    #[error("degree threshold needs n >= 16, got {0}")]
    ThresholdDomain(usize),
    #[error("malformed edge list at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for GraphError {
    fn from(e: std::io::Error) -> Self {
        GraphError::Io(e.to_string())
    }
}

fn check_probability(p: f64) -> Result<(), GraphError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(GraphError::InvalidProbability(p))
    }
}

/// Adjacency view consumed by the dynamics.
///
/// `expose` is invoked right before `v` updates, with every node that has
/// announced so far. Eager graphs ignore it; deferred graphs sample the pairs
/// between a first-time node and the announced set.
pub trait Topology {
    fn node_count(&self) -> usize;

    fn neighbours(&self, v: NodeId) -> &[NodeId];

    fn expose(
        &mut self,
        _v: NodeId,
        _announced: &[NodeId],
        _first_selection: bool,
    ) -> Result<(), GraphError> {
        Ok(())
    }
}

/// Simple undirected graph in compressed sparse row form. Neighbour lists are sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    offsets: Vec<usize>,
    targets: Vec<NodeId>,
}

impl Graph {
    /// Builds a graph from undirected edges; rejects loops and repeated pairs.
    pub fn from_edges(n: usize, edges: &[(NodeId, NodeId)]) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::EmptyGraph);
        }
        let mut degree = vec![0usize; n];
        for &(u, v) in edges {
            for node in [u, v] {
                if node as usize >= n {
                    return Err(GraphError::NodeOutOfRange { node, n });
                }
            }
            if u == v {
                return Err(GraphError::SelfLoop(u));
            }
            degree[u as usize] += 1;
            degree[v as usize] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut fill = offsets[..n].to_vec();
        let mut targets = vec![0; offsets[n]];
        for &(u, v) in edges {
            targets[fill[u as usize]] = v;
            fill[u as usize] += 1;
            targets[fill[v as usize]] = u;
            fill[v as usize] += 1;
        }
        for v in 0..n {
            let list = &mut targets[offsets[v]..offsets[v + 1]];
            list.sort_unstable();
            if let Some(w) = list.windows(2).find(|w| w[0] == w[1]) {
                let (a, b) = (v as NodeId, w[0]);
                return Err(GraphError::DuplicateEdge(a.min(b), a.max(b)));
            }
        }
        Ok(Graph { offsets, targets })
    }

    pub fn empty(n: usize) -> Result<Self, GraphError> {
        Self::from_edges(n, &[])
    }

    pub fn complete(n: usize) -> Result<Self, GraphError> {
        let edges: Vec<_> = (0..n as NodeId)
            .flat_map(|u| (u + 1..n as NodeId).map(move |v| (u, v)))
            .collect();
        Self::from_edges(n, &edges)
    }

    /// Star with centre 0.
    pub fn star(n: usize) -> Result<Self, GraphError> {
        let edges: Vec<_> = (1..n as NodeId).map(|v| (0, v)).collect();
        Self::from_edges(n, &edges)
    }

    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn edge_count(&self) -> usize {
        self.targets.len() / 2
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.offsets[v as usize + 1] - self.offsets[v as usize]
    }

    pub fn neighbours(&self, v: NodeId) -> &[NodeId] {
        &self.targets[self.offsets[v as usize]..self.offsets[v as usize + 1]]
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        self.neighbours(u).binary_search(&v).is_ok()
    }

    /// Edges as `(u, v)` with `u < v`, in ascending lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        (0..self.n() as NodeId).flat_map(move |u| {
            self.neighbours(u)
                .iter()
                .copied()
                .filter(move |&v| v > u)
                .map(move |v| (u, v))
        })
    }

    /// Writes the plain edge-list format: a header line `n m`, then one `u v` line per edge.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> Result<(), GraphError> {
        writeln!(out, "{} {}", self.n(), self.edge_count())?;
        for (u, v) in self.edges() {
            writeln!(out, "{u} {v}")?;
        }
        Ok(())
    }

    pub fn read_edge_list<R: BufRead>(input: R) -> Result<Self, GraphError> {
        let mut lines = input.lines();
        let parse_pair = |line: usize, text: &str| -> Result<(u64, u64), GraphError> {
            let bad = |reason: &str| GraphError::Parse {
                line,
                reason: reason.to_string(),
            };
            let mut parts = text.split_whitespace();
            let a = parts.next().ok_or_else(|| bad("missing field"))?;
            let b = parts.next().ok_or_else(|| bad("missing field"))?;
            if parts.next().is_some() {
                return Err(bad("trailing fields"));
            }
            let a = a.parse().map_err(|_| bad("not an integer"))?;
            let b = b.parse().map_err(|_| bad("not an integer"))?;
            Ok((a, b))
        };
        let header = lines.next().ok_or(GraphError::Parse {
            line: 1,
            reason: "missing header".into(),
        })??;
        let (n, m) = parse_pair(1, &header)?;
        let mut edges = Vec::with_capacity(m as usize);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (u, v) = parse_pair(i + 2, &line)?;
            if u >= v {
                return Err(GraphError::Parse {
                    line: i + 2,
                    reason: "expected u < v".into(),
                });
            }
            edges.push((u as NodeId, v as NodeId));
        }
        if edges.len() as u64 != m {
            return Err(GraphError::Parse {
                line: 1,
                reason: format!("header announces {m} edges, found {}", edges.len()),
            });
        }
        Self::from_edges(n as usize, &edges)
    }
}

impl Topology for Graph {
    fn node_count(&self) -> usize {
        self.n()
    }

    fn neighbours(&self, v: NodeId) -> &[NodeId] {
        Graph::neighbours(self, v)
    }
}

impl Topology for &Graph {
    fn node_count(&self) -> usize {
        self.n()
    }

    fn neighbours(&self, v: NodeId) -> &[NodeId] {
        Graph::neighbours(self, v)
    }
}

/// Samples G(n, p).
///
/// Sparse draws skip geometrically over the pair index space, so the expected
/// work is proportional to the number of edges rather than to n².
pub fn generate_gnp(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Result<Graph, GraphError> {
    if n == 0 {
        return Err(GraphError::EmptyGraph);
    }
    check_probability(p)?;
    if p == 0.0 {
        return Graph::empty(n);
    }
    if p == 1.0 {
        return Graph::complete(n);
    }
    let log_q = (1.0 - p).ln();
    let n = n as u64;
    let mut edges = Vec::new();
    // Pairs are walked as (w, v) with w < v, column by column.
    let mut v: u64 = 1;
    let mut w: u64 = 0;
    let mut first = true;
    while v < n {
        let r: f64 = rng.random();
        let skip = ((1.0 - r).ln() / log_q).floor();
        // Saturating: anything past the end of the pair space terminates.
        let mut step = if skip >= (n * n) as f64 { n * n } else { skip as u64 };
        if !first {
            step += 1;
        }
        first = false;
        w += step;
        while w >= v && v < n {
            w -= v;
            v += 1;
        }
        if v < n {
            edges.push((w as NodeId, v as NodeId));
        }
    }
    Graph::from_edges(n as usize, &edges)
}

fn pair_key(u: NodeId, v: NodeId) -> u64 {
    let (a, b) = if u < v { (u, v) } else { (v, u) };
    (u64::from(a) << 32) | u64::from(b)
}

fn unpack_key(key: u64) -> (NodeId, NodeId) {
    ((key >> 32) as NodeId, key as NodeId)
}

/// G(n, p) whose edge indicators are sampled on first query.
///
/// Each unordered pair is drawn at most once from a dedicated stream and the
/// answer is stored; pairs never asked about occupy no memory.
#[derive(Debug, Clone)]
pub struct DeferredGraph {
    n: usize,
    p: f64,
    revealed: FxHashMap<u64, bool>,
    adjacency: Vec<Vec<NodeId>>,
    revealed_per_node: Vec<u32>,
    edge_count: usize,
    rng: ChaCha8Rng,
}

impl DeferredGraph {
    pub fn new(n: usize, p: f64, rng: ChaCha8Rng) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::EmptyGraph);
        }
        check_probability(p)?;
        Ok(DeferredGraph {
            n,
            p,
            revealed: FxHashMap::default(),
            adjacency: vec![Vec::new(); n],
            revealed_per_node: vec![0; n],
            edge_count: 0,
            rng,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    fn check_node(&self, v: NodeId) -> Result<(), GraphError> {
        if (v as usize) < self.n {
            Ok(())
        } else {
            Err(GraphError::NodeOutOfRange { node: v, n: self.n })
        }
    }

    /// Edge indicator of `{u, v}`, sampling it if this is the first query.
    pub fn query(&mut self, u: NodeId, v: NodeId) -> Result<bool, GraphError> {
        self.check_node(u)?;
        self.check_node(v)?;
        if u == v {
            return Err(GraphError::SelfLoop(u));
        }
        let key = pair_key(u, v);
        if let Some(&present) = self.revealed.get(&key) {
            return Ok(present);
        }
        let present = self.rng.random_bool(self.p);
        self.revealed.insert(key, present);
        self.revealed_per_node[u as usize] += 1;
        self.revealed_per_node[v as usize] += 1;
        if present {
            self.adjacency[u as usize].push(v);
            self.adjacency[v as usize].push(u);
            self.edge_count += 1;
        }
        Ok(present)
    }

    /// Returns the members of `targets` adjacent to `v`, revealing pairs as needed.
    pub fn reveal_edges(
        &mut self,
        v: NodeId,
        targets: &[NodeId],
    ) -> Result<Vec<NodeId>, GraphError> {
        if targets.contains(&v) {
            return Err(GraphError::SelfLoop(v));
        }
        let mut adjacent = Vec::new();
        for &u in targets {
            if self.query(v, u)? {
                adjacent.push(u);
            }
        }
        Ok(adjacent)
    }

    pub fn is_revealed(&self, u: NodeId, v: NodeId) -> bool {
        self.revealed.contains_key(&pair_key(u, v))
    }

    /// Number of revealed pairs (present or absent) with `v` as an endpoint.
    pub fn revealed_at(&self, v: NodeId) -> usize {
        self.revealed_per_node[v as usize] as usize
    }

    pub fn revealed_count(&self) -> usize {
        self.revealed.len()
    }

    pub fn revealed_pairs(&self) -> impl Iterator<Item = (NodeId, NodeId, bool)> + '_ {
        self.revealed.iter().map(|(&k, &present)| {
            let (u, v) = unpack_key(k);
            (u, v, present)
        })
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    /// Neighbours of `v` among revealed pairs, in reveal order.
    pub fn realized_neighbours(&self, v: NodeId) -> &[NodeId] {
        &self.adjacency[v as usize]
    }

    /// Reveals every pair still hidden, visiting pairs in ascending order.
    pub fn reveal_all(&mut self) {
        for u in 0..self.n as NodeId {
            for v in u + 1..self.n as NodeId {
                self.query(u, v).expect("in range");
            }
        }
    }

    /// The graph of present edges among revealed pairs.
    pub fn realized_graph(&self) -> Graph {
        let edges: Vec<_> = self
            .revealed
            .iter()
            .filter(|(_, &present)| present)
            .map(|(&k, _)| unpack_key(k))
            .collect();
        Graph::from_edges(self.n, &edges).expect("revealed pairs form a simple graph")
    }
}

impl Topology for DeferredGraph {
    fn node_count(&self) -> usize {
        self.n
    }

    fn neighbours(&self, v: NodeId) -> &[NodeId] {
        self.realized_neighbours(v)
    }

    fn expose(
        &mut self,
        v: NodeId,
        announced: &[NodeId],
        first_selection: bool,
    ) -> Result<(), GraphError> {
        if first_selection {
            self.reveal_edges(v, announced)?;
        }
        Ok(())
    }
}

/// Degree cutoff `5 ln n / sqrt(ln ln n)` separating small from large nodes.
pub fn degree_threshold(n: usize) -> Result<f64, GraphError> {
    if n < 16 {
        return Err(GraphError::ThresholdDomain(n));
    }
    let ln_n = (n as f64).ln();
    Ok(5.0 * ln_n / ln_n.ln().sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegreeClassification {
    pub threshold: f64,
    pub small_nodes: Vec<NodeId>,
    pub large_nodes: Vec<NodeId>,
}

impl DegreeClassification {
    pub fn new(g: &Graph, threshold: f64) -> Self {
        let (small_nodes, large_nodes) =
            (0..g.n() as NodeId).partition(|&v| g.degree(v) as f64 <= threshold);
        DegreeClassification {
            threshold,
            small_nodes,
            large_nodes,
        }
    }

    /// Membership mask for the large nodes.
    pub fn large_mask(&self, n: usize) -> Vec<bool> {
        let mut mask = vec![false; n];
        for &v in &self.large_nodes {
            mask[v as usize] = true;
        }
        mask
    }
}

/// True iff no two distinct nodes of degree at most `threshold` lie within distance 2.
pub fn check_small_degree_separation(g: &Graph, threshold: f64) -> bool {
    let small: Vec<bool> = (0..g.n() as NodeId)
        .map(|v| g.degree(v) as f64 <= threshold)
        .collect();
    (0..g.n() as NodeId).all(|u| {
        let small_neighbours = g
            .neighbours(u)
            .iter()
            .filter(|&&w| small[w as usize])
            .count();
        // Two small neighbours of u are at distance 2; a small u with a small neighbour is at distance 1.
        small_neighbours < 2 && !(small[u as usize] && small_neighbours > 0)
    })
}

pub fn is_connected(g: &Graph) -> bool {
    let n = g.n();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0 as NodeId]);
    seen[0] = true;
    let mut reached = 1;
    while let Some(u) = queue.pop_front() {
        for &w in g.neighbours(u) {
            if !seen[w as usize] {
                seen[w as usize] = true;
                reached += 1;
                queue.push_back(w);
            }
        }
    }
    reached == n
}

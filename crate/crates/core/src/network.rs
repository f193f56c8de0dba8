//! Sensor graph and Metropolis-Hastings (MHMC) average consensus.
//!
//! Consensus runs in synchronous rounds: every node reads the round-`l`
//! payloads of its neighbors and writes a round-`l+1` payload, with a barrier
//! between rounds. Nodes within a round are independent and may be evaluated
//! in parallel without changing the result.

use std::collections::BTreeSet;
use std::ops::{Deref, DerefMut};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{FusionError, Result};
use crate::exec::{map_indexed, Execution};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITERS: usize = 10_000;

/// Undirected graph over `node_count` sensors. Self membership in a
/// neighborhood is implicit; self-loops are never stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensorGraph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl SensorGraph {
    /// Builds a graph from unordered edges. Duplicate edges collapse; self-loops
    /// and out-of-range indices are rejected.
    pub fn new(node_count: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if node_count == 0 {
            return Err(FusionError::InvalidArgument(
                "graph needs at least one node".into(),
            ));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            for idx in [a, b] {
                if idx >= node_count {
                    return Err(FusionError::IndexOutOfRange {
                        index: idx,
                        node_count,
                    });
                }
            }
            if a == b {
                return Err(FusionError::InvalidArgument(format!(
                    "self-loop on node {a}"
                )));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let mut adjacency = vec![Vec::new(); node_count];
        for &(a, b) in &set {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
        }
        Ok(Self {
            node_count,
            edges: set.into_iter().collect(),
            adjacency,
        })
    }

    pub fn chain(node_count: usize) -> Result<Self> {
        Self::new(node_count, (1..node_count).map(|i| (i - 1, i)))
    }

    pub fn complete(node_count: usize) -> Result<Self> {
        Self::new(
            node_count,
            (0..node_count).flat_map(|i| (i + 1..node_count).map(move |j| (i, j))),
        )
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Edges as `(low, high)` pairs in ascending order.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Neighbors of `i` including `i` itself, ascending.
    pub fn neighbors(&self, i: usize) -> Result<Vec<usize>> {
        let adj = self.adjacency.get(i).ok_or(FusionError::IndexOutOfRange {
            index: i,
            node_count: self.node_count,
        })?;
        let mut out = Vec::with_capacity(adj.len() + 1);
        out.push(i);
        out.extend_from_slice(adj);
        out.sort_unstable();
        Ok(out)
    }

    /// `|N_i|`, the neighborhood size counting the node itself.
    pub fn neighborhood_size(&self, i: usize) -> usize {
        self.adjacency[i].len() + 1
    }

    /// Connected-component label per node; labels are the smallest node index
    /// in the component.
    pub fn component_labels(&self) -> Vec<usize> {
        let mut label = vec![usize::MAX; self.node_count];
        for start in 0..self.node_count {
            if label[start] != usize::MAX {
                continue;
            }
            let mut stack = vec![start];
            label[start] = start;
            while let Some(n) = stack.pop() {
                for &m in &self.adjacency[n] {
                    if label[m] == usize::MAX {
                        label[m] = start;
                        stack.push(m);
                    }
                }
            }
        }
        label
    }

    pub fn is_connected(&self) -> bool {
        self.component_labels().iter().all(|&l| l == 0)
    }
}

/// Free-function form of [`SensorGraph::neighbors`].
pub fn neighbors(g: &SensorGraph, i: usize) -> Result<Vec<usize>> {
    g.neighbors(i)
}

/// MHMC weight matrix: `γ_ij = 1 / max(|N_i|, |N_j|)` on edges, the diagonal
/// takes the remainder of each row, zero elsewhere.
pub fn mhmc_weights(g: &SensorGraph) -> DMatrix<f64> {
    let n = g.node_count();
    let mut w = DMatrix::zeros(n, n);
    for &(a, b) in g.edges() {
        let gamma = 1.0 / g.neighborhood_size(a).max(g.neighborhood_size(b)) as f64;
        w[(a, b)] = gamma;
        w[(b, a)] = gamma;
    }
    for i in 0..n {
        let off: f64 = g.adjacency[i].iter().map(|&j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    w
}

/// Flat per-node consensus state. All nodes in a run carry the same length.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConsensusPayload(pub Vec<f64>);

impl ConsensusPayload {
    pub fn scalar(v: f64) -> Self {
        Self(vec![v])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for ConsensusPayload {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Deref for ConsensusPayload {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ConsensusPayload {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsensusConfig {
    /// Per-coordinate stopping threshold on the change between rounds, scaled
    /// by `max(1, |value|)`.
    pub tol: f64,
    pub max_iters: usize,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iters: DEFAULT_MAX_ITERS,
            execution: Execution::default(),
        }
    }
}

impl ConsensusConfig {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return Err(FusionError::InvalidArgument(format!(
                "consensus tolerance must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iters == 0 {
            return Err(FusionError::InvalidArgument(
                "consensus needs max_iters >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusOutcome {
    pub payloads: Vec<ConsensusPayload>,
    pub iterations: usize,
    pub converged: bool,
}

fn check_shapes(values: &[ConsensusPayload], weights: &DMatrix<f64>) -> Result<usize> {
    let n = values.len();
    if weights.nrows() != n || weights.ncols() != n {
        return Err(FusionError::dim(
            "consensus weight matrix",
            n,
            weights.nrows(),
        ));
    }
    let len = values.first().map_or(0, |p| p.len());
    if let Some(bad) = values.iter().find(|p| p.len() != len) {
        return Err(FusionError::dim("consensus payload", len, bad.len()));
    }
    Ok(len)
}

/// One synchronous MHMC round: `v_i ← Σ_j γ_ij v_j`.
pub fn consensus_round(
    values: &[ConsensusPayload],
    weights: &DMatrix<f64>,
) -> Result<Vec<ConsensusPayload>> {
    consensus_round_with(values, weights, Execution::default())
}

pub fn consensus_round_with(
    values: &[ConsensusPayload],
    weights: &DMatrix<f64>,
    execution: Execution,
) -> Result<Vec<ConsensusPayload>> {
    let len = check_shapes(values, weights)?;
    let rows = sparse_rows(weights);
    Ok(apply_round(values, &rows, len, execution))
}

fn sparse_rows(weights: &DMatrix<f64>) -> Vec<Vec<(usize, f64)>> {
    (0..weights.nrows())
        .map(|i| {
            (0..weights.ncols())
                .filter(|&j| weights[(i, j)] != 0.0)
                .map(|j| (j, weights[(i, j)]))
                .collect()
        })
        .collect()
}

fn apply_round(
    values: &[ConsensusPayload],
    rows: &[Vec<(usize, f64)>],
    len: usize,
    execution: Execution,
) -> Vec<ConsensusPayload> {
    map_indexed(execution, values.len(), |i| {
        let mut out = vec![0.0; len];
        for &(j, gamma) in &rows[i] {
            for (o, v) in out.iter_mut().zip(values[j].iter()) {
                *o += gamma * v;
            }
        }
        ConsensusPayload(out)
    })
}

fn max_scaled_change(old: &[ConsensusPayload], new: &[ConsensusPayload]) -> f64 {
    old.iter()
        .zip(new)
        .flat_map(|(a, b)| a.iter().zip(b.iter()))
        .map(|(a, b)| (b - a).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Iterates MHMC rounds until every node's payload changes by less than
/// `tol · max(1, |value|)` in every coordinate, or `max_iters` rounds ran.
pub fn run_consensus(
    g: &SensorGraph,
    init: Vec<ConsensusPayload>,
    tol: f64,
    max_iters: usize,
) -> Result<ConsensusOutcome> {
    run_consensus_with(
        g,
        init,
        &ConsensusConfig {
            tol,
            max_iters,
            ..ConsensusConfig::default()
        },
    )
}

pub fn run_consensus_with(
    g: &SensorGraph,
    init: Vec<ConsensusPayload>,
    config: &ConsensusConfig,
) -> Result<ConsensusOutcome> {
    config.validate()?;
    let weights = mhmc_weights(g);
    let len = check_shapes(&init, &weights)?;
    let rows = sparse_rows(&weights);
    let mut current = init;
    for iteration in 1..=config.max_iters {
        let next = apply_round(&current, &rows, len, config.execution);
        let change = max_scaled_change(&current, &next);
        current = next;
        if change < config.tol {
            return Ok(ConsensusOutcome {
                payloads: current,
                iterations: iteration,
                converged: true,
            });
        }
    }
    Ok(ConsensusOutcome {
        payloads: current,
        iterations: config.max_iters,
        converged: false,
    })
}

//! Graph and ego-subgraph data structures, dataset ingestion, synthetic
//! generation, and imbalanced split construction.

pub mod io;
pub mod sbm;
pub mod split;

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub use sbm::generate_sbm;
pub use split::{make_imbalanced_split, DatasetSplit};

/// Undirected graph with dense node features. Stored edges are
/// normalized to (min, max), self-loop free, and duplicate free.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    node_features: Matrix,
    edges: Vec<(usize, usize)>,
    pub label: Option<usize>,
    pub node_labels: Option<Vec<usize>>,
}

impl Graph {
    pub fn new(
        node_features: Matrix,
        edges: Vec<(usize, usize)>,
        label: Option<usize>,
        node_labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n = node_features.rows();
        let mut normalized = Vec::with_capacity(edges.len());
        for &(u, v) in &edges {
            if u >= n || v >= n {
                return Err(Error::Schema(format!(
                    "edge ({u}, {v}) out of bounds for a {n}-node graph"
                )));
            }
            if u == v {
                return Err(Error::Schema(format!("self-loop at node {u}")));
            }
            normalized.push((u.min(v), u.max(v)));
        }
        normalized.sort_unstable();
        let before = normalized.len();
        normalized.dedup();
        if normalized.len() != before {
            return Err(Error::Schema("duplicate undirected edge".into()));
        }
        if let Some(labels) = &node_labels {
            if labels.len() != n {
                return Err(Error::Schema(format!(
                    "{} node labels for {n} nodes",
                    labels.len()
                )));
            }
        }
        Ok(Self { node_features, edges: normalized, label, node_labels })
    }

    pub fn node_count(&self) -> usize {
        self.node_features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.node_features.cols()
    }

    pub fn node_features(&self) -> &Matrix {
        &self.node_features
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn adjacency_list(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count()];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        adj
    }

    /// Dense symmetric 0/1 adjacency with zero diagonal.
    pub fn dense_adjacency(&self) -> Matrix {
        let n = self.node_count();
        let mut a = Matrix::zeros(n, n);
        for &(u, v) in &self.edges {
            a.set(u, v, 1.0);
            a.set(v, u, 1.0);
        }
        a
    }
}

/// Induced subgraph around a target node. The target is always local
/// index 0; `node_ids` maps local indices back to the source graph.
#[derive(Clone, Debug, PartialEq)]
pub struct EgoSubgraph {
    pub target: usize,
    pub node_ids: Vec<usize>,
    pub features: Matrix,
    pub adjacency: Matrix,
    pub hops: usize,
}

impl EgoSubgraph {
    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }
}

/// Induced subgraph on all nodes within shortest-path distance <= k of
/// `node`. Nodes are ordered by BFS distance, ties by original index, so
/// the target is local index 0 and construction is deterministic.
pub fn k_hop_subgraph(graph: &Graph, node: usize, k: usize) -> Result<EgoSubgraph> {
    let n = graph.node_count();
    if node >= n {
        return Err(Error::Contract(format!(
            "target node {node} out of bounds for a {n}-node graph"
        )));
    }
    let adj = graph.adjacency_list();
    let mut dist = vec![usize::MAX; n];
    dist[node] = 0;
    let mut queue = VecDeque::from([node]);
    let mut node_ids = vec![node];
    while let Some(u) = queue.pop_front() {
        if dist[u] == k {
            continue;
        }
        // Sorted neighbor order keeps the BFS layering deterministic.
        let mut next: Vec<usize> = adj[u].iter().copied().filter(|&v| dist[v] == usize::MAX).collect();
        next.sort_unstable();
        for v in next {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                node_ids.push(v);
                queue.push_back(v);
            }
        }
    }
    node_ids.sort_by_key(|&v| (dist[v], v));

    let mut local = vec![usize::MAX; n];
    for (i, &v) in node_ids.iter().enumerate() {
        local[v] = i;
    }
    let m = node_ids.len();
    let mut features = Matrix::zeros(m, graph.feature_dim());
    for (i, &v) in node_ids.iter().enumerate() {
        features.row_mut(i).copy_from_slice(graph.node_features.row(v));
    }
    let mut adjacency = Matrix::zeros(m, m);
    for &(u, v) in graph.edges() {
        if local[u] != usize::MAX && local[v] != usize::MAX {
            adjacency.set(local[u], local[v], 1.0);
            adjacency.set(local[v], local[u], 1.0);
        }
    }
    Ok(EgoSubgraph { target: 0, node_ids, features, adjacency, hops: k })
}

/// Whole-graph view used for graph-level instances: every node kept in
/// original order.
pub fn whole_graph_view(graph: &Graph) -> EgoSubgraph {
    EgoSubgraph {
        target: 0,
        node_ids: (0..graph.node_count()).collect(),
        features: graph.node_features().clone(),
        adjacency: graph.dense_adjacency(),
        hops: 0,
    }
}

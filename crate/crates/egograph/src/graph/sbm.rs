//! Stochastic block model generator for synthetic experiments.

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RandomStream};

use super::Graph;

/// Generates a stochastic block model graph with `classes` blocks of
/// `nodes_per_class` nodes each. Intra-block edges appear with
/// probability `p_in`, inter-block edges with `p_out`. Node features are
/// a one-hot class signal plus zero-mean Gaussian noise of scale
/// `feature_noise`. Deterministic under `seed`.
pub fn generate_sbm(
    classes: usize,
    nodes_per_class: usize,
    p_in: f64,
    p_out: f64,
    feature_noise: f64,
    seed: u64,
) -> Result<Graph> {
    if !(0.0..=1.0).contains(&p_out) || !(0.0..=1.0).contains(&p_in) || p_out > p_in {
        return Err(Error::Config(format!(
            "require 0 <= p_out <= p_in <= 1, got p_in={p_in}, p_out={p_out}"
        )));
    }
    if classes == 0 || nodes_per_class == 0 {
        return Err(Error::Config("classes and nodes_per_class must be positive".into()));
    }
    let n = classes * nodes_per_class;
    let mut rng = RandomStream::new(seed);

    let labels: Vec<usize> = (0..n).map(|i| i / nodes_per_class).collect();
    let mut features = Matrix::zeros(n, classes);
    for (i, &c) in labels.iter().enumerate() {
        for j in 0..classes {
            let signal = if j == c { 1.0 } else { 0.0 };
            features.set(i, j, signal + feature_noise * rng.standard_normal());
        }
    }

    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if labels[u] == labels[v] { p_in } else { p_out };
            if rng.uniform() < p {
                edges.push((u, v));
            }
        }
    }

    Graph::new(features, edges, None, Some(labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_probabilities_give_disjoint_cliques() {
        let g = generate_sbm(2, 3, 1.0, 0.0, 0.0, 1).unwrap();
        assert_eq!(g.node_count(), 6);
        // Two 3-cliques: 2 * C(3,2) = 6 edges, none crossing.
        assert_eq!(g.edges().len(), 6);
        let labels = g.node_labels.as_ref().unwrap();
        for &(u, v) in g.edges() {
            assert_eq!(labels[u], labels[v]);
        }
        // Features are exactly one-hot with zero noise.
        for (i, &c) in labels.iter().enumerate() {
            for j in 0..2 {
                assert_eq!(g.node_features().get(i, j), if j == c { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn within_class_edge_count_matches_binomial_expectation() {
        // 3 classes x 100 nodes, p_in = 0.1: expected within-class count is
        // 3 * C(100,2) * 0.1, checked within a 4-sigma binomial interval.
        let g = generate_sbm(3, 100, 0.1, 0.01, 0.0, 42).unwrap();
        let labels = g.node_labels.as_ref().unwrap();
        let within = g
            .edges()
            .iter()
            .filter(|&&(u, v)| labels[u] == labels[v])
            .count() as f64;
        let trials = 3.0 * (100.0 * 99.0 / 2.0);
        let mean = trials * 0.1;
        let sigma = (trials * 0.1 * 0.9_f64).sqrt();
        assert!(
            (within - mean).abs() <= 4.0 * sigma,
            "within-class edges {within}, expected {mean} +/- {}",
            4.0 * sigma
        );
    }

    #[test]
    fn same_seed_same_graph() {
        let a = generate_sbm(3, 20, 0.2, 0.05, 0.3, 7).unwrap();
        let b = generate_sbm(3, 20, 0.2, 0.05, 0.3, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_sbm(3, 20, 0.2, 0.05, 0.3, 8).unwrap();
        assert_ne!(a.edges(), c.edges());
    }

    #[test]
    fn invalid_probabilities_rejected() {
        assert!(generate_sbm(2, 3, 0.1, 0.5, 0.0, 1).is_err());
        assert!(generate_sbm(2, 3, 1.5, 0.0, 0.0, 1).is_err());
    }
}

//! Imbalanced train/validation/test split construction.

use std::collections::{BTreeMap, VecDeque};

use crate::error::{Error, Result};
use crate::numerics::RandomStream;

use super::Graph;

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub label_ratio: f64,
    pub imbalance_ratio: f64,
}

impl DatasetSplit {
    pub fn is_disjoint(&self) -> bool {
        let mut seen = std::collections::BTreeSet::new();
        self.train
            .iter()
            .chain(&self.validation)
            .chain(&self.test)
            .all(|&i| seen.insert(i))
    }
}

/// Builds a quantity- and topology-imbalanced training split.
///
/// The majority class receives `label_ratio * class size` labeled
/// instances; every minority class receives `imbalance_ratio` times the
/// majority count (at least one). When `graph` is given, minority labels
/// are drawn with probability proportional to 1 / (1 + d) where d is the
/// hop distance to the nearest class-boundary node, so labeled minority
/// nodes concentrate near inter-class edges. Validation and test are
/// stratified and balanced from the remaining instances.
pub fn make_imbalanced_split(
    labels: &[usize],
    graph: Option<&Graph>,
    imbalance_ratio: f64,
    label_ratio: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    if !(0.0 < imbalance_ratio && imbalance_ratio <= 1.0) {
        return Err(Error::Split(format!("imbalance_ratio {imbalance_ratio} not in (0, 1]")));
    }
    if !(0.0 < label_ratio && label_ratio <= 1.0) {
        return Err(Error::Split(format!("label_ratio {label_ratio} not in (0, 1]")));
    }

    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    if by_class.len() < 2 {
        return Err(Error::Split(format!(
            "need at least 2 classes, found {}",
            by_class.len()
        )));
    }

    let (&majority, majority_members) = by_class
        .iter()
        .max_by_key(|(c, members)| (members.len(), std::cmp::Reverse(**c)))
        .expect("non-empty class map");
    let majority_count = ((label_ratio * majority_members.len() as f64).round() as usize)
        .clamp(1, majority_members.len());

    let boundary_dist = graph.map(boundary_distances);

    let mut rng = RandomStream::new(seed);
    let mut train = Vec::new();
    for (&class, members) in &by_class {
        let want = if class == majority {
            majority_count
        } else {
            ((imbalance_ratio * majority_count as f64).round() as usize).max(1)
        };
        if want >= members.len() {
            return Err(Error::Split(format!(
                "class {class} has no eligible evaluation nodes ({} members, {want} labeled)",
                members.len()
            )));
        }
        let picked = match (&boundary_dist, class == majority) {
            (Some(dist), false) => {
                let weights: Vec<f64> =
                    members.iter().map(|&i| 1.0 / (1.0 + dist[i] as f64)).collect();
                rng.sample_weighted(&weights, want)
                    .into_iter()
                    .map(|pos| members[pos])
                    .collect::<Vec<_>>()
            }
            _ => rng
                .sample_indices(members.len(), want)
                .into_iter()
                .map(|pos| members[pos])
                .collect(),
        };
        train.extend(picked);
    }
    train.sort_unstable();

    // Balanced, stratified validation/test from whatever remains.
    let remaining: BTreeMap<usize, Vec<usize>> = by_class
        .iter()
        .map(|(&c, members)| {
            let rest: Vec<usize> = members
                .iter()
                .copied()
                .filter(|i| train.binary_search(i).is_err())
                .collect();
            (c, rest)
        })
        .collect();
    let per_class = remaining.values().map(|v| v.len()).min().unwrap_or(0);
    if per_class == 0 {
        let class = remaining.iter().find(|(_, v)| v.is_empty()).map(|(c, _)| *c);
        return Err(Error::Split(format!(
            "class {:?} has zero eligible evaluation nodes",
            class
        )));
    }
    let val_per_class = per_class / 2;
    let mut validation = Vec::new();
    let mut test = Vec::new();
    for rest in remaining.values() {
        let chosen = rng.sample_indices(rest.len(), per_class);
        for (k, pos) in chosen.into_iter().enumerate() {
            if k < val_per_class {
                validation.push(rest[pos]);
            } else {
                test.push(rest[pos]);
            }
        }
    }
    validation.sort_unstable();
    test.sort_unstable();

    Ok(DatasetSplit { train, validation, test, label_ratio, imbalance_ratio })
}

/// Hop distance from every node to the nearest node incident to an
/// inter-class edge. Nodes in graphs without any boundary (or unreachable
/// from one) get the node count as an effectively-infinite distance.
fn boundary_distances(graph: &Graph) -> Vec<usize> {
    let n = graph.node_count();
    let labels = match &graph.node_labels {
        Some(l) => l,
        None => return vec![0; n],
    };
    let mut dist = vec![n; n];
    let mut queue = VecDeque::new();
    for &(u, v) in graph.edges() {
        if labels[u] != labels[v] {
            for w in [u, v] {
                if dist[w] != 0 {
                    dist[w] = 0;
                    queue.push_back(w);
                }
            }
        }
    }
    let adj = graph.adjacency_list();
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if dist[v] > dist[u] + 1 {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

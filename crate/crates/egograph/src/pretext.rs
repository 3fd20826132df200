//! Local-global pretext tasks: masking augmentations, the contrastive
//! loss, and the cross-reconstruction predictive loss.

use serde::{Deserialize, Serialize};

use crate::ego::ExtendedGraph;
use crate::error::{Error, Result};
use crate::numerics::{cosine, dot, softplus, Matrix, RandomStream, Tape, ValueId};

const RESAMPLE_TRIES: usize = 100;

/// Edge-drop augmentation: a fraction of local edges and a fraction of
/// descriptor edges are removed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub local_drop: f64,
    pub global_drop: f64,
    pub seed: u64,
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [("local_drop", self.local_drop), ("global_drop", self.global_drop)] {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::Config(format!("{name} {f} not in [0, 1)")));
            }
        }
        Ok(())
    }
}

/// Substructure masking: a connected set of local nodes plus a random set
/// of descriptors is split off for cross-reconstruction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub local_mask_fraction: f64,
    pub descriptor_mask_fraction: f64,
    pub seed: u64,
}

impl MaskSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("local_mask_fraction", self.local_mask_fraction),
            ("descriptor_mask_fraction", self.descriptor_mask_fraction),
        ] {
            if !(0.0 < f && f < 1.0) {
                return Err(Error::Config(format!("{name} {f} not in (0, 1)")));
            }
        }
        Ok(())
    }
}

fn edge_pairs(
    adjacency: &Matrix,
    n_local: usize,
) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
    let total = adjacency.rows();
    let mut local = Vec::new();
    let mut descriptor = Vec::new();
    for i in 0..total {
        for j in (i + 1)..total {
            if adjacency.get(i, j) == 1.0 {
                if j < n_local {
                    local.push((i, j));
                } else {
                    descriptor.push((i, j));
                }
            }
        }
    }
    (local, descriptor)
}

/// Removes floor(local_drop * |local edges|) local edges and
/// floor(global_drop * |descriptor edges|) descriptor edges, uniformly
/// chosen. The target always keeps at least one incident edge when it had
/// one (drop sets that would isolate it are resampled).
pub fn augment_adjacency(
    adjacency: &Matrix,
    n_local: usize,
    target: usize,
    spec: &AugmentationSpec,
) -> Result<Matrix> {
    spec.validate()?;
    let (local, descriptor) = edge_pairs(adjacency, n_local);
    let drop_local = (spec.local_drop * local.len() as f64).floor() as usize;
    let drop_desc = (spec.global_drop * descriptor.len() as f64).floor() as usize;
    let target_degree = local
        .iter()
        .chain(&descriptor)
        .filter(|&&(u, v)| u == target || v == target)
        .count();

    let mut rng = RandomStream::new(spec.seed);
    let mut dropped: Option<(Vec<usize>, Vec<usize>)> = None;
    for attempt in 0..=RESAMPLE_TRIES {
        let (dl, dd) = if attempt < RESAMPLE_TRIES {
            (
                rng.sample_indices(local.len(), drop_local),
                rng.sample_indices(descriptor.len(), drop_desc),
            )
        } else {
            // Deterministic fallback: protect the first target-incident
            // edge and sample the drops from everything else.
            let keep = local
                .iter()
                .chain(descriptor.iter())
                .position(|&(u, v)| u == target || v == target);
            let protected = keep.expect("target had incident edges");
            let mut pool_local: Vec<usize> = (0..local.len()).collect();
            let mut pool_desc: Vec<usize> = (0..descriptor.len()).collect();
            if protected < local.len() {
                pool_local.retain(|&i| i != protected);
            } else {
                pool_desc.retain(|&i| i != protected - local.len());
            }
            rng.shuffle(&mut pool_local);
            rng.shuffle(&mut pool_desc);
            (
                pool_local.into_iter().take(drop_local).collect(),
                pool_desc.into_iter().take(drop_desc).collect(),
            )
        };
        if target_degree > 0 {
            let surviving = local
                .iter()
                .enumerate()
                .filter(|(i, _)| !dl.contains(i))
                .map(|(_, e)| e)
                .chain(
                    descriptor
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| !dd.contains(i))
                        .map(|(_, e)| e),
                )
                .any(|&(u, v)| u == target || v == target);
            if !surviving {
                continue;
            }
        }
        dropped = Some((dl, dd));
        break;
    }
    let (dl, dd) = dropped.expect("fallback drop set always satisfies the constraint");

    let mut out = adjacency.clone();
    for &i in &dl {
        let (u, v) = local[i];
        out.set(u, v, 0.0);
        out.set(v, u, 0.0);
    }
    for &i in &dd {
        let (u, v) = descriptor[i];
        out.set(u, v, 0.0);
        out.set(v, u, 0.0);
    }
    Ok(out)
}

/// [`augment_adjacency`] applied to a whole extended graph.
pub fn augment(g: &ExtendedGraph, spec: &AugmentationSpec) -> Result<ExtendedGraph> {
    let adjacency = augment_adjacency(&g.adjacency, g.n_local, g.target, spec)?;
    Ok(ExtendedGraph { adjacency, ..g.clone() })
}

/// Node selection for one side of a masked partition, indices into the
/// extended graph (locals < n_local, descriptors >= n_local).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubgraphSelection {
    pub local: Vec<usize>,
    pub descriptors: Vec<usize>,
}

impl SubgraphSelection {
    pub fn all_nodes(&self) -> Vec<usize> {
        let mut v = self.local.clone();
        v.extend(&self.descriptors);
        v
    }
}

/// Splits an extended graph's node set into a remainder (always
/// containing the target) and a masked part: a connected non-target
/// local set grown by breadth-first expansion plus a random descriptor
/// subset.
pub fn mask_partition(
    adjacency: &Matrix,
    n_local: usize,
    n_descriptors: usize,
    target: usize,
    spec: &MaskSpec,
) -> Result<(SubgraphSelection, SubgraphSelection)> {
    spec.validate()?;
    if n_local < 2 || n_descriptors < 1 {
        return Err(Error::Contract(format!(
            "masking needs >= 2 local nodes and >= 1 descriptor, got {n_local} and {n_descriptors}"
        )));
    }
    let mut rng = RandomStream::new(spec.seed);

    let want_local =
        ((spec.local_mask_fraction * n_local as f64).ceil() as usize).clamp(1, n_local - 1);
    let candidates: Vec<usize> = (0..n_local).filter(|&i| i != target).collect();
    let seed_node = candidates[rng.below(candidates.len())];

    // BFS over local edges, never crossing into the target.
    let mut masked_local = vec![seed_node];
    let mut visited = vec![false; n_local];
    visited[seed_node] = true;
    visited[target] = true;
    let mut frontier = vec![seed_node];
    'grow: while masked_local.len() < want_local && !frontier.is_empty() {
        let mut next = Vec::new();
        for &u in &frontier {
            let mut neighbors: Vec<usize> = (0..n_local)
                .filter(|&v| !visited[v] && adjacency.get(u, v) == 1.0)
                .collect();
            neighbors.sort_unstable();
            for v in neighbors {
                visited[v] = true;
                masked_local.push(v);
                next.push(v);
                if masked_local.len() == want_local {
                    break 'grow;
                }
            }
        }
        frontier = next;
    }
    masked_local.sort_unstable();

    let want_desc = ((spec.descriptor_mask_fraction * n_descriptors as f64).ceil() as usize)
        .clamp(1, n_descriptors);
    let mut masked_desc: Vec<usize> = rng
        .sample_indices(n_descriptors, want_desc)
        .into_iter()
        .map(|k| n_local + k)
        .collect();
    masked_desc.sort_unstable();

    let part2 = SubgraphSelection { local: masked_local.clone(), descriptors: masked_desc.clone() };
    let part1 = SubgraphSelection {
        local: (0..n_local).filter(|i| !masked_local.contains(i)).collect(),
        descriptors: (n_local..n_local + n_descriptors)
            .filter(|i| !masked_desc.contains(i))
            .collect(),
    };
    Ok((part1, part2))
}

/// [`mask_partition`] applied to a whole extended graph.
pub fn mask_substructure(
    g: &ExtendedGraph,
    spec: &MaskSpec,
) -> Result<(SubgraphSelection, SubgraphSelection)> {
    mask_partition(&g.adjacency, g.n_local, g.n_descriptors, g.target, spec)
}

/// Adjacency induced on `nodes` (extended-graph indices).
pub fn induced_adjacency(adjacency: &Matrix, nodes: &[usize]) -> Matrix {
    let m = nodes.len();
    let mut out = Matrix::zeros(m, m);
    for (i, &u) in nodes.iter().enumerate() {
        for (j, &v) in nodes.iter().enumerate() {
            out.set(i, j, adjacency.get(u, v));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Losses.
// ---------------------------------------------------------------------------

/// Contrastive loss: minus the mean cosine similarity over positive pairs
/// plus the mean cosine similarity over all anchor/negative pairs.
pub fn contrastive_loss(
    anchors: &[Matrix],
    positives: &[Matrix],
    negatives: &[Vec<Matrix>],
) -> Result<f64> {
    if anchors.is_empty() || anchors.len() != positives.len() {
        return Err(Error::Loss(format!(
            "{} anchors against {} positives",
            anchors.len(),
            positives.len()
        )));
    }
    if !negatives.is_empty() && negatives.len() != anchors.len() {
        return Err(Error::Loss("negative lists must align with anchors".into()));
    }
    let mut pos = 0.0;
    for (a, p) in anchors.iter().zip(positives) {
        pos += cosine(a.row(0), p.row(0))?;
    }
    pos /= anchors.len() as f64;

    let mut neg = 0.0;
    let mut pairs = 0usize;
    for (i, negs) in negatives.iter().enumerate() {
        for n in negs {
            neg += cosine(anchors[i].row(0), n.row(0))?;
            pairs += 1;
        }
    }
    let neg = if pairs > 0 { neg / pairs as f64 } else { 0.0 };
    Ok(-pos + neg)
}

/// Predictive (cross-reconstruction) loss for one instance:
/// -log sigmoid(e1 . e2) plus the mean of -log(1 - sigmoid(e1 . n))
/// over negative substructure embeddings.
pub fn predictive_loss(emb1: &Matrix, emb2: &Matrix, negatives: &[Matrix]) -> Result<f64> {
    if emb1.shape() != emb2.shape() || emb1.rows() != 1 {
        return Err(Error::Loss(format!(
            "embedding shapes {:?} and {:?}",
            emb1.shape(),
            emb2.shape()
        )));
    }
    let mut total = softplus(-dot(emb1.row(0), emb2.row(0)));
    if !negatives.is_empty() {
        let mut neg = 0.0;
        for n in negatives {
            if n.shape() != emb1.shape() {
                return Err(Error::Loss("negative embedding shape mismatch".into()));
            }
            neg += softplus(dot(emb1.row(0), n.row(0)));
        }
        total += neg / negatives.len() as f64;
    }
    Ok(total)
}

/// Tape version of [`contrastive_loss`] for training.
pub fn contrastive_on_tape(
    tape: &mut Tape,
    anchors: &[ValueId],
    positives: &[ValueId],
    negatives: &[Vec<ValueId>],
) -> Result<ValueId> {
    assert_eq!(anchors.len(), positives.len());
    let mut pos_terms = Vec::with_capacity(anchors.len());
    for (&a, &p) in anchors.iter().zip(positives) {
        pos_terms.push(tape.cosine(a, p)?);
    }
    let pos = tape.mean_scalars(&pos_terms);
    let mut loss = tape.neg(pos);

    let mut neg_terms = Vec::new();
    for (i, negs) in negatives.iter().enumerate() {
        for &n in negs {
            neg_terms.push(tape.cosine(anchors[i], n)?);
        }
    }
    if !neg_terms.is_empty() {
        let neg = tape.mean_scalars(&neg_terms);
        loss = tape.add(loss, neg);
    }
    Ok(loss)
}

/// Tape version of [`predictive_loss`], averaged over the batch.
pub fn predictive_on_tape(
    tape: &mut Tape,
    emb1: &[ValueId],
    emb2: &[ValueId],
    negatives: &[Vec<ValueId>],
) -> Result<ValueId> {
    assert_eq!(emb1.len(), emb2.len());
    let mut per_instance = Vec::with_capacity(emb1.len());
    for (i, (&a, &b)) in emb1.iter().zip(emb2).enumerate() {
        let d = tape.dot(a, b);
        let nd = tape.neg(d);
        let mut term = tape.softplus(nd);
        if let Some(negs) = negatives.get(i) {
            if !negs.is_empty() {
                let mut neg_terms = Vec::with_capacity(negs.len());
                for &n in negs {
                    let dn = tape.dot(a, n);
                    neg_terms.push(tape.softplus(dn));
                }
                let neg = tape.mean_scalars(&neg_terms);
                term = tape.add(term, neg);
            }
        }
        per_instance.push(term);
    }
    Ok(tape.mean_scalars(&per_instance))
}

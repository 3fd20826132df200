//! Message-passing encoder: sum aggregation over neighbors with a
//! two-layer perceptron per layer and a mean readout.
//!
//! Layer l computes V_l = MLP_l(V_{l-1} + sum of neighbor rows); a linear
//! input projection maps raw features to the hidden width first, so that
//! descriptor rows (already in hidden space) can be appended before the
//! message-passing layers run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::EgoSubgraph;
use crate::numerics::{Binding, Matrix, ParameterStore, RandomStream, Tape, ValueId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Node,
    Graph,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub hidden_dim: usize,
    pub input_dim: usize,
    pub mode: Mode,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden_dim == 0 || self.input_dim == 0 {
            return Err(Error::Config(format!(
                "encoder dims must be positive: layers={}, hidden={}, input={}",
                self.layers, self.hidden_dim, self.input_dim
            )));
        }
        Ok(())
    }
}

/// Per-layer node embeddings; index 0 is the projected input.
#[derive(Clone, Debug)]
pub struct NodeEmbeddings {
    pub layers: Vec<Matrix>,
}

impl NodeEmbeddings {
    pub fn final_layer(&self) -> &Matrix {
        self.layers.last().expect("at least the projected input")
    }
}

/// Inserts freshly initialized encoder parameters under `prefix`
/// ("{prefix}.input.{w,b}", "{prefix}.layer{i}.{w1,b1,w2,b2}").
pub fn init_encoder_params(
    store: &mut ParameterStore,
    prefix: &str,
    config: &EncoderConfig,
    rng: &mut RandomStream,
) -> Result<()> {
    config.validate()?;
    let d = config.hidden_dim;
    let xavier = |rng: &mut RandomStream, rows: usize, cols: usize| {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        rng.uniform_matrix(rows, cols, -limit, limit)
    };
    store.insert(&format!("{prefix}.input.w"), xavier(rng, config.input_dim, d))?;
    store.insert(&format!("{prefix}.input.b"), Matrix::zeros(1, d))?;
    for i in 1..=config.layers {
        store.insert(&format!("{prefix}.layer{i}.w1"), xavier(rng, d, d))?;
        store.insert(&format!("{prefix}.layer{i}.b1"), Matrix::zeros(1, d))?;
        store.insert(&format!("{prefix}.layer{i}.w2"), xavier(rng, d, d))?;
        store.insert(&format!("{prefix}.layer{i}.b2"), Matrix::zeros(1, d))?;
    }
    Ok(())
}

fn check_encode_inputs(adjacency: &Matrix, feature_rows: usize) -> Result<()> {
    let (m, n) = adjacency.shape();
    if m != n {
        return Err(Error::Shape(format!("adjacency is {m} x {n}, expected square")));
    }
    if m != feature_rows {
        return Err(Error::Shape(format!(
            "{feature_rows} feature rows for a {m}-node adjacency"
        )));
    }
    for i in 0..m {
        if adjacency.get(i, i) != 0.0 {
            return Err(Error::Shape(format!("adjacency has a self-loop at {i}")));
        }
        for j in (i + 1)..n {
            if adjacency.get(i, j) != adjacency.get(j, i) {
                return Err(Error::Shape(format!("adjacency not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// Input projection on the tape: raw features (N x d_in) -> N x d.
pub fn project_on_tape(
    tape: &mut Tape,
    binding: &Binding,
    prefix: &str,
    features: ValueId,
) -> Result<ValueId> {
    let w = binding.id(&format!("{prefix}.input.w"));
    let b = binding.id(&format!("{prefix}.input.b"));
    if tape.value(features).cols() != tape.value(w).rows() {
        return Err(Error::Shape(format!(
            "layer input: features have {} columns, projection expects {}",
            tape.value(features).cols(),
            tape.value(w).rows()
        )));
    }
    let proj = tape.matmul(features, w);
    Ok(tape.add_row(proj, b))
}

/// Message-passing layers on the tape. `adjacency` must already be a tape
/// node (normally a constant leaf). Returns the per-layer outputs.
pub fn layers_on_tape(
    tape: &mut Tape,
    binding: &Binding,
    prefix: &str,
    adjacency: ValueId,
    h0: ValueId,
    layers: usize,
) -> Result<Vec<ValueId>> {
    let mut out = Vec::with_capacity(layers);
    let mut h = h0;
    for i in 1..=layers {
        let w1 = binding.id(&format!("{prefix}.layer{i}.w1"));
        if tape.value(h).cols() != tape.value(w1).rows() {
            return Err(Error::Shape(format!(
                "layer {i}: input width {} does not match weight rows {}",
                tape.value(h).cols(),
                tape.value(w1).rows()
            )));
        }
        let b1 = binding.id(&format!("{prefix}.layer{i}.b1"));
        let w2 = binding.id(&format!("{prefix}.layer{i}.w2"));
        let b2 = binding.id(&format!("{prefix}.layer{i}.b2"));
        let agg = tape.matmul(adjacency, h);
        let combined = tape.add(h, agg);
        let z = tape.matmul(combined, w1);
        let z = tape.add_row(z, b1);
        let z = tape.relu(z);
        let z = tape.matmul(z, w2);
        h = tape.add_row(z, b2);
        out.push(h);
    }
    Ok(out)
}

/// Full encode pass (projection + message passing) on a fresh tape,
/// returning plain per-layer embeddings.
pub fn encode(
    adjacency: &Matrix,
    features: &Matrix,
    params: &ParameterStore,
    prefix: &str,
    layers: usize,
) -> Result<NodeEmbeddings> {
    check_encode_inputs(adjacency, features.rows())?;
    let mut tape = Tape::new();
    let binding = tape.bind(params);
    let feats = tape.leaf(features.clone());
    let adj = tape.leaf(adjacency.clone());
    let h0 = project_on_tape(&mut tape, &binding, prefix, feats)?;
    let ids = layers_on_tape(&mut tape, &binding, prefix, adj, h0, layers)?;
    let mut out = vec![tape.value(h0).clone()];
    out.extend(ids.iter().map(|&id| tape.value(id).clone()));
    for (l, m) in out.iter().enumerate() {
        m.ensure_finite(&format!("encoder layer {l} output"))?;
    }
    Ok(NodeEmbeddings { layers: out })
}

/// Message passing over features already in hidden space (descriptor
/// rows appended after projection); no input projection is applied.
pub fn encode_hidden(
    adjacency: &Matrix,
    hidden_features: &Matrix,
    params: &ParameterStore,
    prefix: &str,
    layers: usize,
) -> Result<NodeEmbeddings> {
    check_encode_inputs(adjacency, hidden_features.rows())?;
    let mut tape = Tape::new();
    let binding = tape.bind(params);
    let feats = tape.leaf(hidden_features.clone());
    let adj = tape.leaf(adjacency.clone());
    let ids = layers_on_tape(&mut tape, &binding, prefix, adj, feats, layers)?;
    let mut out = vec![hidden_features.clone()];
    out.extend(ids.iter().map(|&id| tape.value(id).clone()));
    for (l, m) in out.iter().enumerate() {
        m.ensure_finite(&format!("encoder layer {l} output"))?;
    }
    Ok(NodeEmbeddings { layers: out })
}

/// Mean of final-layer rows over `subset`.
pub fn readout(embeddings: &NodeEmbeddings, subset: &[usize]) -> Result<Matrix> {
    if subset.is_empty() {
        return Err(Error::Contract("readout over an empty node subset".into()));
    }
    let last = embeddings.final_layer();
    let d = last.cols();
    let mut out = Matrix::zeros(1, d);
    for &i in subset {
        for c in 0..d {
            out.set(0, c, out.get(0, c) + last.get(i, c));
        }
    }
    Ok(out.scale(1.0 / subset.len() as f64))
}

/// Embedding that descriptors are built from: the target node's final-layer
/// row in node mode, the readout over all nodes in graph mode.
pub fn target_embedding(
    subgraph: &EgoSubgraph,
    params: &ParameterStore,
    prefix: &str,
    layers: usize,
    mode: Mode,
) -> Result<Matrix> {
    let embeddings = encode(&subgraph.adjacency, &subgraph.features, params, prefix, layers)?;
    match mode {
        Mode::Node => {
            let row = embeddings.final_layer().row(subgraph.target).to_vec();
            Ok(Matrix::row_vector(&row))
        }
        Mode::Graph => readout(&embeddings, &(0..subgraph.node_count()).collect::<Vec<_>>()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, Matrix};

    fn identity_params(d: usize, layers: usize) -> ParameterStore {
        let mut store = ParameterStore::new();
        store.insert("encoder.input.w", Matrix::identity(d)).unwrap();
        store.insert("encoder.input.b", Matrix::zeros(1, d)).unwrap();
        for i in 1..=layers {
            store.insert(&format!("encoder.layer{i}.w1"), Matrix::identity(d)).unwrap();
            store.insert(&format!("encoder.layer{i}.b1"), Matrix::zeros(1, d)).unwrap();
            store.insert(&format!("encoder.layer{i}.w2"), Matrix::identity(d)).unwrap();
            store.insert(&format!("encoder.layer{i}.b2"), Matrix::zeros(1, d)).unwrap();
        }
        store
    }

    fn random_params(d_in: usize, d: usize, layers: usize, seed: u64) -> ParameterStore {
        let mut store = ParameterStore::new();
        let mut rng = RandomStream::new(seed);
        let config = EncoderConfig { layers, hidden_dim: d, input_dim: d_in, mode: Mode::Node };
        init_encoder_params(&mut store, "encoder", &config, &mut rng).unwrap();
        store
    }

    #[test]
    fn isolated_node_with_identity_mlps_passes_features_through() {
        // Non-negative feature so the rectifier is transparent.
        let params = identity_params(2, 2);
        let adjacency = Matrix::zeros(1, 1);
        let features = Matrix::from_rows(&[vec![0.5, 2.0]]);
        let out = encode(&adjacency, &features, &params, "encoder", 2).unwrap();
        assert_eq!(out.final_layer().row(0), &[0.5, 2.0]);
        // The projected input equals the raw feature under the identity map.
        assert_eq!(out.layers[0].row(0), &[0.5, 2.0]);
    }

    #[test]
    fn permuting_nodes_permutes_outputs() {
        let params = random_params(3, 4, 2, 10);
        // Path 0-1-2 plus a dangling feature-diverse node setup.
        let adjacency = {
            let mut a = Matrix::zeros(3, 3);
            a.set(0, 1, 1.0);
            a.set(1, 0, 1.0);
            a.set(1, 2, 1.0);
            a.set(2, 1, 1.0);
            a
        };
        let features =
            Matrix::from_rows(&[vec![1.0, 0.0, 2.0], vec![0.0, 1.0, -1.0], vec![0.5, 0.5, 0.0]]);
        let base = encode(&adjacency, &features, &params, "encoder", 2).unwrap();

        // Permutation (0 1 2) -> (2 0 1).
        let perm = [2usize, 0, 1];
        let mut p_adj = Matrix::zeros(3, 3);
        let mut p_feat = Matrix::zeros(3, 3);
        for i in 0..3 {
            p_feat.row_mut(perm[i]).copy_from_slice(features.row(i));
            for j in 0..3 {
                p_adj.set(perm[i], perm[j], adjacency.get(i, j));
            }
        }
        let permuted = encode(&p_adj, &p_feat, &params, "encoder", 2).unwrap();
        for i in 0..3 {
            let a = base.final_layer().row(i);
            let b = permuted.final_layer().row(perm[i]);
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn cycle_with_shared_features_gives_equal_rows() {
        // All nodes of a 4-cycle are automorphic when features coincide.
        let params = random_params(2, 5, 3, 3);
        let mut adjacency = Matrix::zeros(4, 4);
        for i in 0..4 {
            let j = (i + 1) % 4;
            adjacency.set(i, j, 1.0);
            adjacency.set(j, i, 1.0);
        }
        let features = Matrix::from_rows(&vec![vec![1.0, -0.5]; 4]);
        let out = encode(&adjacency, &features, &params, "encoder", 3).unwrap();
        let first = out.final_layer().row(0).to_vec();
        for i in 1..4 {
            for (a, b) in first.iter().zip(out.final_layer().row(i)) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn readout_mean_and_invariance() {
        let e = NodeEmbeddings {
            layers: vec![Matrix::from_rows(&[vec![0.0, 2.0], vec![2.0, 0.0]])],
        };
        assert_eq!(readout(&e, &[0]).unwrap().row(0), &[0.0, 2.0]);
        assert_eq!(readout(&e, &[0, 1]).unwrap().row(0), &[1.0, 1.0]);
        assert_eq!(readout(&e, &[1, 0]).unwrap().row(0), &[1.0, 1.0]);
        assert!(readout(&e, &[]).is_err());
    }

    #[test]
    fn asymmetric_adjacency_rejected() {
        let params = random_params(1, 2, 1, 1);
        let mut a = Matrix::zeros(2, 2);
        a.set(0, 1, 1.0);
        let feats = Matrix::zeros(2, 1);
        assert!(matches!(
            encode(&a, &feats, &params, "encoder", 1),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn wrong_feature_width_names_the_layer() {
        let params = random_params(3, 4, 1, 2);
        let a = Matrix::zeros(2, 2);
        let feats = Matrix::zeros(2, 5);
        let err = encode(&a, &feats, &params, "encoder", 1).unwrap_err();
        assert!(err.to_string().contains("layer input"), "got: {err}");
    }

    #[test]
    fn encode_readout_gradients_pass_grad_check() {
        let mut params = random_params(3, 4, 2, 77);
        let mut adjacency = Matrix::zeros(4, 4);
        for (u, v) in [(0, 1), (1, 2), (2, 3), (0, 3)] {
            adjacency.set(u, v, 1.0);
            adjacency.set(v, u, 1.0);
        }
        let features = RandomStream::new(5).normal_matrix(4, 3, 1.0);
        let probe = Matrix::row_vector(&[0.3, -0.2, 0.8, 0.1]);

        let report = grad_check(
            |store: &mut ParameterStore| {
                let mut tape = Tape::new();
                let binding = tape.bind(store);
                let feats = tape.leaf(features.clone());
                let adj = tape.leaf(adjacency.clone());
                let h0 = project_on_tape(&mut tape, &binding, "encoder", feats)?;
                let hs = layers_on_tape(&mut tape, &binding, "encoder", adj, h0, 2)?;
                let pooled = tape.mean_rows(*hs.last().unwrap(), &[0, 1, 2, 3]);
                let p = tape.leaf(probe.clone());
                let loss = tape.matmul_nt(pooled, p);
                tape.backward(loss);
                tape.accumulate_gradients(&binding, store)?;
                Ok(tape.value(loss).scalar())
            },
            &mut params,
            1e-5,
        )
        .unwrap();
        assert!(report.max_error() <= 1e-4, "max rel err {}", report.max_error());
    }

    #[test]
    fn target_embedding_modes_agree_on_a_single_node() {
        let params = random_params(2, 3, 2, 9);
        let sub = EgoSubgraph {
            target: 0,
            node_ids: vec![0],
            features: Matrix::from_rows(&[vec![1.0, -1.0]]),
            adjacency: Matrix::zeros(1, 1),
            hops: 0,
        };
        let node = target_embedding(&sub, &params, "encoder", 2, Mode::Node).unwrap();
        let graph = target_embedding(&sub, &params, "encoder", 2, Mode::Graph).unwrap();
        assert_eq!(node, graph);
        // Recomputation is bit-identical.
        assert_eq!(node, target_embedding(&sub, &params, "encoder", 2, Mode::Node).unwrap());
    }
}

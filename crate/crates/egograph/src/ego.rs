//! Ego-semantic descriptors: first- and second-order feature differences
//! against the cluster hierarchy, attention weighting across all
//! granularities, fusion, and subgraph extension.
//!
//! For a target embedding V and centroids C_k (flat hierarchy-major
//! order, K total):
//!
//! ```text
//! D1_k = (V - C_k) / max(||V - C_k||, eps)          r1_k = ||V - C_k||^2
//! X_k  = [D1_1 . D1_k, ..., D1_K . D1_k]            r2_k = ||X_k||^2
//! D2_k = X_k / max(||X_k||, eps)
//! w_k  = softmax_k(-decay * r_k)      (decay = softplus of a raw scalar)
//! D_k  = LeakyReLU(W . concat(w1_k * D1_k, w2_k * D2_k) + bias)
//! ```
//!
//! The attention magnitudes are the pre-normalization squared norms; the
//! normalized descriptors all have unit length, which would make the
//! weights constant and kill the decay gradient.

use crate::clusters::ClusterHierarchy;
use crate::encoder::Mode;
use crate::error::{Error, Result};
use crate::numerics::{softplus, Matrix, ParameterStore, RandomStream, Tape, ValueId};

/// Normalization guard for degenerate (zero-difference) descriptors.
pub const EPS: f64 = 1e-12;

/// Leaky rectifier slope used by the fusion stage.
pub const FUSION_SLOPE: f64 = 0.01;

/// softplus(x) = 1 at this raw value; used to initialize decay scalars.
pub const SOFTPLUS_INV_ONE: f64 = 0.541324854612918;

/// Full descriptor state for one target embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorSet {
    /// K x d first-order descriptors, unit rows when non-degenerate.
    pub first: Matrix,
    /// K x K second-order descriptors, unit rows when non-degenerate.
    pub second: Matrix,
    /// K x 1 pre-normalization squared norms ||V - C||^2.
    pub raw_first_sqnorms: Matrix,
    /// K x 1 pre-normalization squared norms ||X||^2.
    pub raw_second_sqnorms: Matrix,
    /// K x 1 simplex weights for each order.
    pub weights_first: Matrix,
    pub weights_second: Matrix,
    /// K x d fused descriptors.
    pub fused: Matrix,
}

/// How omni-granular weights are produced.
#[derive(Clone, Copy, Debug)]
pub enum Weighting {
    /// softmax(-decay * raw) with trainable positive decays.
    Decays { alpha: f64, beta: f64 },
    /// Fixed 1/K weights (normalization ablated).
    Uniform,
}

/// Inserts the fusion parameters: decay scalars (raw, softplus-mapped to
/// stay positive, initialized so the decay is 1), the fusion matrix W of
/// shape (d + K) x d, and its bias.
pub fn init_omni_params(
    store: &mut ParameterStore,
    hidden_dim: usize,
    total_clusters: usize,
    rng: &mut RandomStream,
) -> Result<()> {
    store.insert("omni.alpha_raw", Matrix::from_vec(1, 1, vec![SOFTPLUS_INV_ONE]))?;
    store.insert("omni.beta_raw", Matrix::from_vec(1, 1, vec![SOFTPLUS_INV_ONE]))?;
    let rows = hidden_dim + total_clusters;
    let limit = (6.0 / (rows + hidden_dim) as f64).sqrt();
    store.insert("omni.W", rng.uniform_matrix(rows, hidden_dim, -limit, limit))?;
    store.insert("omni.bias", Matrix::zeros(1, hidden_dim))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Tape pipeline (single source of truth; plain wrappers below run it).
// ---------------------------------------------------------------------------

pub struct DescriptorIds {
    pub first: ValueId,
    pub second: ValueId,
    pub raw_first: ValueId,
    pub raw_second: ValueId,
    pub weights_first: ValueId,
    pub weights_second: ValueId,
    pub fused: ValueId,
}

/// First-order descriptors on the tape: target is a 1 x d node, centroids
/// enter as constants. Returns (unit descriptors K x d, raw sqnorms K x 1).
pub fn first_order_on_tape(
    tape: &mut Tape,
    target: ValueId,
    hierarchy: &ClusterHierarchy,
    eps: f64,
) -> Result<(ValueId, ValueId)> {
    let d = tape.value(target).cols();
    if tape.value(target).rows() != 1 || d != hierarchy.dim() {
        return Err(Error::Shape(format!(
            "target embedding {:?} against {}-dimensional centroids",
            tape.value(target).shape(),
            hierarchy.dim()
        )));
    }
    if eps <= 0.0 {
        return Err(Error::Contract("first_order eps must be positive".into()));
    }
    let k = hierarchy.total_clusters();
    let ones = tape.leaf(Matrix::from_vec(k, 1, vec![1.0; k]));
    let repeated = tape.matmul(ones, target);
    let centroids = tape.leaf(hierarchy.stacked());
    let diff = tape.sub(repeated, centroids);
    let raw = tape.row_sqnorm(diff);
    let unit = tape.row_unit(diff, eps);
    Ok((unit, raw))
}

/// Second-order descriptors: the Gram matrix of the first-order set,
/// row-normalized. Entry (s, m) is D1_m . D1_s.
pub fn second_order_on_tape(tape: &mut Tape, first: ValueId, eps: f64) -> (ValueId, ValueId) {
    let gram = tape.matmul_nt(first, first);
    let raw = tape.row_sqnorm(gram);
    let unit = tape.row_unit(gram, eps);
    (unit, raw)
}

/// Omni-granular weights on the tape: softmax over -decay * raw, where
/// `decay` is a 1 x 1 tape node (already positive).
pub fn omni_weights_on_tape(tape: &mut Tape, raw: ValueId, decay: ValueId) -> ValueId {
    let scaled = tape.scale_by_scalar(raw, decay);
    let neg = tape.neg(scaled);
    tape.col_softmax(neg)
}

/// Weighted concatenation and fusion: LeakyReLU(W . concat + bias).
pub fn fuse_on_tape(
    tape: &mut Tape,
    first: ValueId,
    second: ValueId,
    weights_first: ValueId,
    weights_second: ValueId,
    fusion_w: ValueId,
    fusion_bias: ValueId,
) -> Result<ValueId> {
    let (k, d) = tape.value(first).shape();
    let expected_rows = d + tape.value(second).cols();
    if tape.value(fusion_w).shape() != (expected_rows, d) {
        return Err(Error::Shape(format!(
            "fusion matrix is {:?}, expected ({expected_rows}, {d})",
            tape.value(fusion_w).shape()
        )));
    }
    let _ = k;
    let weighted_first = tape.scale_rows(first, weights_first);
    let weighted_second = tape.scale_rows(second, weights_second);
    let cat = tape.concat_cols(weighted_first, weighted_second);
    let pre = tape.matmul(cat, fusion_w);
    let pre = tape.add_row(pre, fusion_bias);
    Ok(tape.leaky_relu(pre, FUSION_SLOPE))
}

pub enum TapeWeighting {
    /// Raw (pre-softplus) decay scalars, typically bound parameters.
    Trainable { alpha_raw: ValueId, beta_raw: ValueId },
    Uniform,
}

/// Full descriptor pipeline on the tape.
pub fn descriptors_on_tape(
    tape: &mut Tape,
    target: ValueId,
    hierarchy: &ClusterHierarchy,
    weighting: TapeWeighting,
    fusion_w: ValueId,
    fusion_bias: ValueId,
    eps: f64,
) -> Result<DescriptorIds> {
    let (first, raw_first) = first_order_on_tape(tape, target, hierarchy, eps)?;
    let (second, raw_second) = second_order_on_tape(tape, first, eps);
    let (weights_first, weights_second) = match weighting {
        TapeWeighting::Trainable { alpha_raw, beta_raw } => {
            let alpha = tape.softplus(alpha_raw);
            let beta = tape.softplus(beta_raw);
            (
                omni_weights_on_tape(tape, raw_first, alpha),
                omni_weights_on_tape(tape, raw_second, beta),
            )
        }
        TapeWeighting::Uniform => {
            let k = hierarchy.total_clusters();
            let u = Matrix::from_vec(k, 1, vec![1.0 / k as f64; k]);
            (tape.leaf(u.clone()), tape.leaf(u))
        }
    };
    let fused = fuse_on_tape(
        tape,
        first,
        second,
        weights_first,
        weights_second,
        fusion_w,
        fusion_bias,
    )?;
    Ok(DescriptorIds {
        first,
        second,
        raw_first,
        raw_second,
        weights_first,
        weights_second,
        fused,
    })
}

// ---------------------------------------------------------------------------
// Plain operations.
// ---------------------------------------------------------------------------

/// First-order descriptors and their pre-normalization squared norms.
pub fn first_order(
    target: &Matrix,
    hierarchy: &ClusterHierarchy,
    eps: f64,
) -> Result<(Matrix, Matrix)> {
    let mut tape = Tape::new();
    let t = tape.leaf(target.clone());
    let (unit, raw) = first_order_on_tape(&mut tape, t, hierarchy, eps)?;
    Ok((tape.value(unit).clone(), tape.value(raw).clone()))
}

/// Second-order descriptors from a first-order set.
pub fn second_order(first: &Matrix) -> (Matrix, Matrix) {
    let mut tape = Tape::new();
    let f = tape.leaf(first.clone());
    let (unit, raw) = second_order_on_tape(&mut tape, f, EPS);
    (tape.value(unit).clone(), tape.value(raw).clone())
}

/// Simplex weights over pre-normalization magnitudes, max-subtracted.
pub fn omni_normalize(raw_sqnorms: &Matrix, decay: f64) -> Result<Matrix> {
    if decay <= 0.0 {
        return Err(Error::Contract(format!("decay must be positive, got {decay}")));
    }
    if raw_sqnorms.cols() != 1 {
        return Err(Error::Shape(format!(
            "raw magnitudes must be a column, got {:?}",
            raw_sqnorms.shape()
        )));
    }
    let mut tape = Tape::new();
    let raw = tape.leaf(raw_sqnorms.clone());
    let d = tape.scalar_leaf(decay);
    let w = omni_weights_on_tape(&mut tape, raw, d);
    Ok(tape.value(w).clone())
}

/// Weighted fusion of both orders through the fusion matrix and bias.
pub fn weight_and_fuse(
    first: &Matrix,
    second: &Matrix,
    weights_first: &Matrix,
    weights_second: &Matrix,
    fusion_w: &Matrix,
    fusion_bias: &Matrix,
) -> Result<Matrix> {
    let mut tape = Tape::new();
    let f = tape.leaf(first.clone());
    let s = tape.leaf(second.clone());
    let w1 = tape.leaf(weights_first.clone());
    let w2 = tape.leaf(weights_second.clone());
    let w = tape.leaf(fusion_w.clone());
    let b = tape.leaf(fusion_bias.clone());
    let fused = fuse_on_tape(&mut tape, f, s, w1, w2, w, b)?;
    Ok(tape.value(fused).clone())
}

/// Full plain pipeline for one target embedding.
pub fn build_descriptor_set(
    target: &Matrix,
    hierarchy: &ClusterHierarchy,
    weighting: Weighting,
    fusion_w: &Matrix,
    fusion_bias: &Matrix,
    eps: f64,
) -> Result<DescriptorSet> {
    let mut tape = Tape::new();
    let t = tape.leaf(target.clone());
    let w = tape.leaf(fusion_w.clone());
    let b = tape.leaf(fusion_bias.clone());
    let tape_weighting = match weighting {
        Weighting::Decays { alpha, beta } => {
            if alpha <= 0.0 || beta <= 0.0 {
                return Err(Error::Contract(format!(
                    "decays must be positive, got alpha={alpha}, beta={beta}"
                )));
            }
            // Invert the softplus so the tape applies it back.
            let alpha_raw = tape.scalar_leaf(softplus_inverse(alpha));
            let beta_raw = tape.scalar_leaf(softplus_inverse(beta));
            TapeWeighting::Trainable { alpha_raw, beta_raw }
        }
        Weighting::Uniform => TapeWeighting::Uniform,
    };
    let ids = descriptors_on_tape(&mut tape, t, hierarchy, tape_weighting, w, b, eps)?;
    Ok(DescriptorSet {
        first: tape.value(ids.first).clone(),
        second: tape.value(ids.second).clone(),
        raw_first_sqnorms: tape.value(ids.raw_first).clone(),
        raw_second_sqnorms: tape.value(ids.raw_second).clone(),
        weights_first: tape.value(ids.weights_first).clone(),
        weights_second: tape.value(ids.weights_second).clone(),
        fused: tape.value(ids.fused).clone(),
    })
}

/// Inverse of softplus: ln(e^y - 1), stable for the y ranges seen here.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        (y.exp() - 1.0).ln()
    }
}

// ---------------------------------------------------------------------------
// Subgraph extension.
// ---------------------------------------------------------------------------

/// An ego-subgraph with descriptor nodes appended. Local nodes come first
/// (in hidden space), then `n_descriptors` descriptor rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtendedGraph {
    pub features: Matrix,
    pub adjacency: Matrix,
    pub n_local: usize,
    pub target: usize,
    pub n_descriptors: usize,
}

impl ExtendedGraph {
    pub fn local_indices(&self) -> Vec<usize> {
        (0..self.n_local).collect()
    }

    pub fn descriptor_indices(&self) -> Vec<usize> {
        (self.n_local..self.n_local + self.n_descriptors).collect()
    }
}

/// Extended adjacency. Node-level: descriptor nodes connect only to the
/// target; neighbor-descriptor and descriptor-descriptor blocks are zero.
/// Graph-level: every local node connects to every descriptor.
pub fn extend_adjacency(
    local_adjacency: &Matrix,
    target: usize,
    n_descriptors: usize,
    mode: Mode,
) -> Matrix {
    let n = local_adjacency.rows();
    let total = n + n_descriptors;
    let mut a = Matrix::zeros(total, total);
    for i in 0..n {
        for j in 0..n {
            a.set(i, j, local_adjacency.get(i, j));
        }
    }
    for k in 0..n_descriptors {
        let g = n + k;
        match mode {
            Mode::Node => {
                a.set(target, g, 1.0);
                a.set(g, target, 1.0);
            }
            Mode::Graph => {
                for i in 0..n {
                    a.set(i, g, 1.0);
                    a.set(g, i, 1.0);
                }
            }
        }
    }
    a
}

/// Builds the extended graph from hidden-space local features and fused
/// descriptors. Feature widths must agree (the encoder input projection
/// maps raw features into hidden space first).
pub fn extend_subgraph(
    local_features: &Matrix,
    local_adjacency: &Matrix,
    target: usize,
    fused: &Matrix,
    mode: Mode,
) -> Result<ExtendedGraph> {
    let n = local_features.rows();
    if local_adjacency.shape() != (n, n) {
        return Err(Error::Shape(format!(
            "adjacency {:?} for {n} local nodes",
            local_adjacency.shape()
        )));
    }
    if target >= n {
        return Err(Error::Contract(format!("target {target} out of {n} local nodes")));
    }
    if fused.rows() > 0 && fused.cols() != local_features.cols() {
        return Err(Error::Shape(format!(
            "descriptor width {} does not match hidden width {}",
            fused.cols(),
            local_features.cols()
        )));
    }
    let features = Matrix::vstack(&[local_features, fused]);
    let adjacency = extend_adjacency(local_adjacency, target, fused.rows(), mode);
    Ok(ExtendedGraph {
        features,
        adjacency,
        n_local: n,
        target,
        n_descriptors: fused.rows(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::dot;

    fn hierarchy(scales: Vec<usize>, rows: &[Vec<f64>]) -> ClusterHierarchy {
        let d = rows[0].len();
        let centroids = rows.iter().map(|r| Matrix::row_vector(r)).collect();
        ClusterHierarchy::from_parts(scales, centroids, d).unwrap()
    }

    fn random_hierarchy(scales: &[usize], d: usize, seed: u64) -> ClusterHierarchy {
        let mut rng = RandomStream::new(seed);
        let k: usize = scales.iter().sum();
        let centroids = (0..k).map(|_| rng.normal_matrix(1, d, 1.0)).collect();
        ClusterHierarchy::from_parts(scales.to_vec(), centroids, d).unwrap()
    }

    #[test]
    fn first_order_unit_difference() {
        let h = hierarchy(vec![1], &[vec![0.0, 0.0]]);
        let v = Matrix::row_vector(&[1.0, 0.0]);
        let (d1, r1) = first_order(&v, &h, EPS).unwrap();
        assert_eq!(d1.row(0), &[1.0, 0.0]);
        assert_eq!(r1.get(0, 0), 1.0);
    }

    #[test]
    fn first_order_degenerate_target_equals_centroid() {
        let h = hierarchy(vec![2, 1], &[vec![0.5, -1.0], vec![2.0, 0.0], vec![1.0, 1.0]]);
        let v = Matrix::row_vector(&[0.5, -1.0]);
        let (d1, r1) = first_order(&v, &h, EPS).unwrap();
        assert_eq!(d1.row(0), &[0.0, 0.0]);
        assert_eq!(r1.get(0, 0), 0.0);
        // Non-degenerate rows are unit.
        assert!((d1.row_norm(1) - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn first_order_matches_per_coordinate_recomputation() {
        let mut rng = RandomStream::new(21);
        let h = random_hierarchy(&[16, 12, 8, 4], 8, 3);
        let v = rng.normal_matrix(1, 8, 1.0);
        let (d1, r1) = first_order(&v, &h, EPS).unwrap();
        for k in 0..h.total_clusters() {
            assert!(d1.row_norm(k) <= 1.0 + 1e-9 && d1.row_norm(k) >= 1.0 - 1e-9);
            let c = h.centroid_flat(k).row(0);
            let diff: Vec<f64> = v.row(0).iter().zip(c).map(|(a, b)| a - b).collect();
            let norm = dot(&diff, &diff).sqrt();
            assert!((r1.get(k, 0) - norm * norm).abs() <= 1e-12);
            for (j, &x) in diff.iter().enumerate() {
                assert!((d1.get(k, j) - x / norm).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn second_order_trivial_cases() {
        // K = 1: X = [1], normalized [1].
        let single = Matrix::row_vector(&[1.0, 0.0]);
        let (d2, r2) = second_order(&single);
        assert_eq!(d2.get(0, 0), 1.0);
        assert_eq!(r2.get(0, 0), 1.0);

        // Two orthogonal unit rows: X for row 0 is [1, 0].
        let ortho = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let (d2, _) = second_order(&ortho);
        assert_eq!(d2.row(0), &[1.0, 0.0]);
        assert_eq!(d2.row(1), &[0.0, 1.0]);
    }

    #[test]
    fn second_order_matches_double_loop_oracle() {
        let mut rng = RandomStream::new(5);
        let first_raw = rng.normal_matrix(12, 6, 1.0);
        // Normalize rows to mirror a real first-order set.
        let mut tape = Tape::new();
        let f = tape.leaf(first_raw);
        let fu = tape.row_unit(f, EPS);
        let first = tape.value(fu).clone();

        let (d2, r2) = second_order(&first);
        for s in 0..12 {
            let mut x = vec![0.0; 12];
            for (m, slot) in x.iter_mut().enumerate() {
                *slot = dot(first.row(m), first.row(s));
            }
            let norm = dot(&x, &x).sqrt();
            assert!((r2.get(s, 0) - norm * norm).abs() <= 1e-12);
            for (m, &e) in x.iter().enumerate() {
                assert!((d2.get(s, m) - e / norm).abs() <= 1e-12, "entry ({s}, {m})");
            }
            // Self entry before normalization equals the squared row norm.
            assert!((x[s] - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn omni_normalize_direct_values() {
        // r = [0.1, 0.5], decay 10 -> [0.9820, 0.0180].
        let raw = Matrix::from_vec(2, 1, vec![0.1, 0.5]);
        let w = omni_normalize(&raw, 10.0).unwrap();
        assert!((w.get(0, 0) - 0.9820).abs() < 5e-5, "{}", w.get(0, 0));
        assert!((w.get(1, 0) - 0.0180).abs() < 5e-5, "{}", w.get(1, 0));
        assert!((w.get(0, 0) + w.get(1, 0) - 1.0).abs() <= 1e-12);

        // K = 1: weight 1 for any decay.
        let one = Matrix::from_vec(1, 1, vec![3.7]);
        assert_eq!(omni_normalize(&one, 123.0).unwrap().get(0, 0), 1.0);

        // Tiny decay: uniform.
        let raw = Matrix::from_vec(40, 1, (0..40).map(|i| i as f64 * 0.1).collect());
        let w = omni_normalize(&raw, 1e-9).unwrap();
        for i in 0..40 {
            assert!((w.get(i, 0) - 1.0 / 40.0).abs() <= 1e-6);
        }

        assert!(omni_normalize(&one, 0.0).is_err());
    }

    #[test]
    fn omni_weights_simplex_and_ordering() {
        let mut rng = RandomStream::new(17);
        for _ in 0..100 {
            let k = 2 + rng.below(39);
            let raw = Matrix::from_vec(k, 1, (0..k).map(|_| rng.uniform() * 4.0).collect());
            let decay = rng.uniform_range(1e-6, 50.0);
            let w = omni_normalize(&raw, decay).unwrap();
            let total: f64 = (0..k).map(|i| w.get(i, 0)).sum();
            assert!((total - 1.0).abs() <= 1e-9);
            assert!((0..k).all(|i| w.get(i, 0) >= 0.0));
            // argmax of weights == argmin of raw magnitudes.
            let argmax = (0..k).max_by(|&a, &b| w.get(a, 0).total_cmp(&w.get(b, 0))).unwrap();
            let argmin = (0..k).min_by(|&a, &b| raw.get(a, 0).total_cmp(&raw.get(b, 0))).unwrap();
            assert_eq!(argmax, argmin);
        }
    }

    #[test]
    fn fuse_matches_block_decomposition() {
        let mut rng = RandomStream::new(31);
        let (k, d) = (6, 4);
        let first = rng.normal_matrix(k, d, 1.0);
        let second = rng.normal_matrix(k, k, 1.0);
        let w1 = rng.uniform_matrix(k, 1, 0.0, 1.0);
        let w2 = rng.uniform_matrix(k, 1, 0.0, 1.0);
        let fusion_w = rng.normal_matrix(d + k, d, 1.0);
        let bias = rng.normal_matrix(1, d, 1.0);

        let fused = weight_and_fuse(&first, &second, &w1, &w2, &fusion_w, &bias).unwrap();

        // Oracle: W_left . (w1*D1) + W_right . (w2*D2) + bias, then leaky.
        for s in 0..k {
            for c in 0..d {
                let mut pre = bias.get(0, c);
                for j in 0..d {
                    pre += w1.get(s, 0) * first.get(s, j) * fusion_w.get(j, c);
                }
                for j in 0..k {
                    pre += w2.get(s, 0) * second.get(s, j) * fusion_w.get(d + j, c);
                }
                let expect = if pre > 0.0 { pre } else { FUSION_SLOPE * pre };
                assert!((fused.get(s, c) - expect).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn fuse_zero_map_and_zero_weights() {
        let first = Matrix::from_rows(&[vec![1.0, 2.0]]);
        let second = Matrix::from_rows(&[vec![1.0]]);
        let zeros = Matrix::zeros(1, 1);
        let ones = Matrix::from_vec(1, 1, vec![1.0]);
        let w = Matrix::zeros(3, 2);
        let b = Matrix::zeros(1, 2);
        // W = 0, bias = 0: fused all zero.
        let fused = weight_and_fuse(&first, &second, &ones, &ones, &w, &b).unwrap();
        assert_eq!(fused.data(), &[0.0, 0.0]);

        // Zero weight on one order removes its pre-activation contribution.
        let mut w = Matrix::zeros(3, 2);
        w.set(0, 0, 1.0);
        w.set(2, 1, 1.0); // second-order block
        let fused = weight_and_fuse(&first, &second, &ones, &zeros, &w, &b).unwrap();
        assert_eq!(fused.get(0, 0), 1.0); // first order passes
        assert_eq!(fused.get(0, 1), 0.0); // second order silenced

        // Shape mismatch is a shape error.
        let bad = Matrix::zeros(2, 2);
        assert!(matches!(
            weight_and_fuse(&first, &second, &ones, &ones, &bad, &b),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn extend_adjacency_node_level_layout() {
        // 3-node path with target 0 plus 2 descriptors: 5 x 5 with exactly
        // two new symmetric edges, both incident to the target.
        let mut local = Matrix::zeros(3, 3);
        for (u, v) in [(0, 1), (1, 2)] {
            local.set(u, v, 1.0);
            local.set(v, u, 1.0);
        }
        let a = extend_adjacency(&local, 0, 2, Mode::Node);
        assert_eq!(a.shape(), (5, 5));
        let mut new_edges = 0;
        for i in 0..5 {
            for j in (i + 1)..5 {
                assert_eq!(a.get(i, j), a.get(j, i));
                if a.get(i, j) == 1.0 && (i >= 3 || j >= 3) {
                    new_edges += 1;
                    assert!(i == 0 || j == 0, "descriptor edge not incident to target");
                }
            }
        }
        assert_eq!(new_edges, 2);
        // Local block preserved; descriptor-descriptor block zero.
        assert_eq!(a.get(0, 1), 1.0);
        assert_eq!(a.get(1, 2), 1.0);
        assert_eq!(a.get(3, 4), 0.0);
        // Neighbor-descriptor entries zero.
        assert_eq!(a.get(1, 3), 0.0);
        assert_eq!(a.get(2, 4), 0.0);
    }

    #[test]
    fn extend_adjacency_graph_level_layout() {
        let local = Matrix::zeros(2, 2);
        let a = extend_adjacency(&local, 0, 3, Mode::Graph);
        for i in 0..2 {
            for g in 2..5 {
                assert_eq!(a.get(i, g), 1.0);
                assert_eq!(a.get(g, i), 1.0);
            }
        }
        for g in 2..5 {
            for g2 in 2..5 {
                assert_eq!(a.get(g, g2), 0.0);
            }
        }
    }

    #[test]
    fn zero_descriptors_extension_is_identity() {
        let mut local = Matrix::zeros(2, 2);
        local.set(0, 1, 1.0);
        local.set(1, 0, 1.0);
        let feats = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let empty = Matrix::zeros(0, 2);
        let g = extend_subgraph(&feats, &local, 0, &empty, Mode::Node).unwrap();
        assert_eq!(g.adjacency, local);
        assert_eq!(g.features, feats);
        assert_eq!(g.n_descriptors, 0);
    }

    #[test]
    fn instance_adaptivity_over_random_targets() {
        // Distinct targets against a fixed hierarchy give distinct
        // first-order sets.
        let h = random_hierarchy(&[3, 2], 6, 9);
        let mut rng = RandomStream::new(33);
        for _ in 0..50 {
            let a = rng.normal_matrix(1, 6, 1.0);
            let b = rng.normal_matrix(1, 6, 1.0);
            let (da, _) = first_order(&a, &h, EPS).unwrap();
            let (db, _) = first_order(&b, &h, EPS).unwrap();
            assert!(da.max_abs_diff(&db) > 0.0);
        }
    }

    #[test]
    fn descriptor_pipeline_is_deterministic() {
        let h = random_hierarchy(&[4, 2], 5, 2);
        let v = RandomStream::new(8).normal_matrix(1, 5, 1.0);
        let mut rng = RandomStream::new(3);
        let w = rng.normal_matrix(5 + 6, 5, 0.3);
        let b = rng.normal_matrix(1, 5, 0.1);
        let weighting = Weighting::Decays { alpha: 1.0, beta: 2.0 };
        let x = build_descriptor_set(&v, &h, weighting, &w, &b, EPS).unwrap();
        let y = build_descriptor_set(&v, &h, weighting, &w, &b, EPS).unwrap();
        assert_eq!(x, y);
    }
}

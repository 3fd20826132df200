//! Hierarchical k-means over the embedding space, closest-cluster
//! assignment, and queue-triggered momentum updates of centroids.

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RandomStream};

const LLOYD_MAX_ITERS: usize = 100;
const LLOYD_TOL: f64 = 1e-6;

/// Non-parametric centroids across hierarchies. Scales are strictly
/// decreasing (finer granularity first); centroids are stored flat in
/// hierarchy-major order, scale index ascending within each hierarchy.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterHierarchy {
    scales: Vec<usize>,
    centroids: Vec<Matrix>,
    dim: usize,
}

impl ClusterHierarchy {
    pub fn from_parts(scales: Vec<usize>, centroids: Vec<Matrix>, dim: usize) -> Result<Self> {
        validate_scales(&scales)?;
        if centroids.len() != scales.iter().sum::<usize>() {
            return Err(Error::Config(format!(
                "{} centroids for scales {:?}",
                centroids.len(),
                scales
            )));
        }
        for c in &centroids {
            if c.shape() != (1, dim) {
                return Err(Error::Shape(format!(
                    "centroid shape {:?}, expected (1, {dim})",
                    c.shape()
                )));
            }
        }
        Ok(Self { scales, centroids, dim })
    }

    pub fn scales(&self) -> &[usize] {
        &self.scales
    }

    pub fn hierarchies(&self) -> usize {
        self.scales.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Total cluster count K across all hierarchies.
    pub fn total_clusters(&self) -> usize {
        self.centroids.len()
    }

    pub fn flat_index(&self, hierarchy: usize, scale: usize) -> usize {
        assert!(hierarchy < self.scales.len() && scale < self.scales[hierarchy]);
        self.scales[..hierarchy].iter().sum::<usize>() + scale
    }

    /// (hierarchy, scale) of a flat index.
    pub fn unflatten(&self, mut flat: usize) -> (usize, usize) {
        for (h, &s) in self.scales.iter().enumerate() {
            if flat < s {
                return (h, flat);
            }
            flat -= s;
        }
        panic!("flat index out of range");
    }

    pub fn centroid(&self, hierarchy: usize, scale: usize) -> &Matrix {
        &self.centroids[self.flat_index(hierarchy, scale)]
    }

    pub fn centroid_flat(&self, flat: usize) -> &Matrix {
        &self.centroids[flat]
    }

    pub fn set_centroid_flat(&mut self, flat: usize, value: Matrix) {
        assert_eq!(value.shape(), (1, self.dim));
        self.centroids[flat] = value;
    }

    /// All centroids stacked into a K x d matrix in flat order.
    pub fn stacked(&self) -> Matrix {
        let refs: Vec<&Matrix> = self.centroids.iter().collect();
        Matrix::vstack(&refs)
    }
}

fn validate_scales(scales: &[usize]) -> Result<()> {
    if scales.is_empty() {
        return Err(Error::Config("empty scale list".into()));
    }
    for w in scales.windows(2) {
        if w[1] >= w[0] {
            return Err(Error::Config(format!(
                "scales must be strictly decreasing, got {scales:?}"
            )));
        }
    }
    if scales.iter().any(|&s| s == 0) {
        return Err(Error::Config("scales must be positive".into()));
    }
    Ok(())
}

/// Independent k-means per hierarchy with k-means++ seeding.
pub fn init_hierarchy(
    embeddings: &Matrix,
    scales: &[usize],
    rng: &mut RandomStream,
) -> Result<ClusterHierarchy> {
    validate_scales(scales)?;
    let m = embeddings.rows();
    let max_scale = *scales.iter().max().expect("non-empty scales");
    if m < max_scale {
        return Err(Error::Config(format!(
            "{m} embeddings cannot seed {max_scale} clusters"
        )));
    }
    let mut centroids = Vec::new();
    for &k in scales {
        centroids.extend(kmeans(embeddings, k, rng));
    }
    ClusterHierarchy::from_parts(scales.to_vec(), centroids, embeddings.cols())
}

fn kmeans(points: &Matrix, k: usize, rng: &mut RandomStream) -> Vec<Matrix> {
    let (m, d) = points.shape();
    let mut centers = kmeans_plus_plus_seeds(points, k, rng);
    let mut assignment = vec![0usize; m];

    for _ in 0..LLOYD_MAX_ITERS {
        for (i, slot) in assignment.iter_mut().enumerate() {
            let p = points.row(i);
            let mut best = (f64::INFINITY, 0);
            for (c, center) in centers.iter().enumerate() {
                let dist = Matrix::squared_distance(p, center.row(0));
                if dist < best.0 {
                    best = (dist, c);
                }
            }
            *slot = best.1;
        }

        let mut sums = vec![Matrix::zeros(1, d); k];
        let mut counts = vec![0usize; k];
        for (i, &c) in assignment.iter().enumerate() {
            counts[c] += 1;
            for (s, &v) in sums[c].data_mut().iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }

        let mut movement: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed an empty cluster to the point farthest from its
                // own centroid.
                let (mut worst, mut pick) = (-1.0, 0);
                for (i, &a) in assignment.iter().enumerate() {
                    let dist = Matrix::squared_distance(points.row(i), centers[a].row(0));
                    if dist > worst {
                        worst = dist;
                        pick = i;
                    }
                }
                let fresh = Matrix::row_vector(points.row(pick));
                movement = movement
                    .max(Matrix::squared_distance(fresh.row(0), centers[c].row(0)).sqrt());
                centers[c] = fresh;
                continue;
            }
            let fresh = sums[c].scale(1.0 / counts[c] as f64);
            movement = movement
                .max(Matrix::squared_distance(fresh.row(0), centers[c].row(0)).sqrt());
            centers[c] = fresh;
        }
        if movement < LLOYD_TOL {
            break;
        }
    }
    centers
}

fn kmeans_plus_plus_seeds(points: &Matrix, k: usize, rng: &mut RandomStream) -> Vec<Matrix> {
    let m = points.rows();
    let first = rng.below(m);
    let mut centers = vec![Matrix::row_vector(points.row(first))];
    let mut dist2: Vec<f64> = (0..m)
        .map(|i| Matrix::squared_distance(points.row(i), centers[0].row(0)))
        .collect();
    while centers.len() < k {
        let total: f64 = dist2.iter().sum();
        let next = if total > 0.0 {
            let mut t = rng.uniform() * total;
            let mut pick = m - 1;
            for (i, &w) in dist2.iter().enumerate() {
                t -= w;
                if t <= 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // All remaining mass is zero (duplicate points): pick uniformly.
            rng.below(m)
        };
        let center = Matrix::row_vector(points.row(next));
        for (i, d) in dist2.iter_mut().enumerate() {
            *d = d.min(Matrix::squared_distance(points.row(i), center.row(0)));
        }
        centers.push(center);
    }
    centers
}

/// Closest-cluster assignment per hierarchy by cosine similarity, ties
/// broken by the lowest scale index. Returns one scale index per hierarchy.
pub fn assign(embedding: &Matrix, hierarchy: &ClusterHierarchy) -> Result<Vec<usize>> {
    if embedding.shape() != (1, hierarchy.dim()) {
        return Err(Error::Shape(format!(
            "embedding shape {:?}, expected (1, {})",
            embedding.shape(),
            hierarchy.dim()
        )));
    }
    let v = embedding.row(0);
    let v_norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if v_norm == 0.0 {
        return Err(Error::Assignment("zero-norm embedding has no cosine direction".into()));
    }
    let mut out = Vec::with_capacity(hierarchy.hierarchies());
    for h in 0..hierarchy.hierarchies() {
        let mut best = (f64::NEG_INFINITY, 0usize);
        for s in 0..hierarchy.scales()[h] {
            let c = hierarchy.centroid(h, s).row(0);
            let c_norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            let sim = if c_norm == 0.0 {
                f64::NEG_INFINITY
            } else {
                crate::numerics::dot(v, c) / (v_norm * c_norm)
            };
            if sim > best.0 {
                best = (sim, s);
            }
        }
        out.push(best.1);
    }
    Ok(out)
}

/// Eq-style momentum refresh: C <- m*C + ((1-m)/B) * sum(queue).
/// The queue must hold exactly `budget` entries.
pub fn momentum_update(
    centroid: &Matrix,
    queue: &[Matrix],
    m: f64,
    budget: usize,
) -> Result<Matrix> {
    if queue.len() != budget {
        return Err(Error::Contract(format!(
            "momentum update with {} queued embeddings, budget {budget}",
            queue.len()
        )));
    }
    let mut sum = Matrix::zeros(centroid.rows(), centroid.cols());
    for q in queue {
        sum.add_assign(q);
    }
    Ok(centroid.scale(m).add(&sum.scale((1.0 - m) / budget as f64)))
}

/// Per-cluster embedding queues with a shared budget.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterQueues {
    budget: usize,
    queues: Vec<Vec<Matrix>>,
}

impl ClusterQueues {
    pub fn new(total_clusters: usize, budget: usize) -> Result<Self> {
        if budget == 0 {
            return Err(Error::Config("queue budget must be positive".into()));
        }
        Ok(Self { budget, queues: vec![Vec::new(); total_clusters] })
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn len(&self, flat: usize) -> usize {
        self.queues[flat].len()
    }

    pub fn total_clusters(&self) -> usize {
        self.queues.len()
    }

    pub fn queue(&self, flat: usize) -> &[Matrix] {
        &self.queues[flat]
    }

    pub fn clear_all(&mut self) {
        for q in &mut self.queues {
            q.clear();
        }
    }

    pub fn restore(&mut self, flat: usize, entries: Vec<Matrix>) -> Result<()> {
        if entries.len() >= self.budget {
            return Err(Error::Format(format!(
                "queue {flat} holds {} entries, budget {}",
                entries.len(),
                self.budget
            )));
        }
        self.queues[flat] = entries;
        Ok(())
    }

    /// Appends the embedding to the assigned queue of every hierarchy.
    /// A queue that reaches the budget triggers a momentum update of its
    /// centroid and is emptied. Returns the flat indices updated.
    pub fn enqueue_and_maybe_update(
        &mut self,
        hierarchy: &mut ClusterHierarchy,
        embedding: &Matrix,
        m: f64,
    ) -> Result<Vec<usize>> {
        let assignment = assign(embedding, hierarchy)?;
        let mut updated = Vec::new();
        for (h, &s) in assignment.iter().enumerate() {
            let flat = hierarchy.flat_index(h, s);
            self.queues[flat].push(embedding.clone());
            if self.queues[flat].len() == self.budget {
                let fresh =
                    momentum_update(hierarchy.centroid_flat(flat), &self.queues[flat], m, self.budget)?;
                hierarchy.set_centroid_flat(flat, fresh);
                self.queues[flat].clear();
                updated.push(flat);
            }
        }
        Ok(updated)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hierarchy_from_rows(scales: Vec<usize>, rows: &[Vec<f64>]) -> ClusterHierarchy {
        let d = rows[0].len();
        let centroids = rows.iter().map(|r| Matrix::row_vector(r)).collect();
        ClusterHierarchy::from_parts(scales, centroids, d).unwrap()
    }

    #[test]
    fn flat_ordering_is_hierarchy_major() {
        let h = hierarchy_from_rows(
            vec![3, 2],
            &[
                vec![0.0, 0.0],
                vec![1.0, 0.0],
                vec![2.0, 0.0],
                vec![3.0, 0.0],
                vec![4.0, 0.0],
            ],
        );
        assert_eq!(h.flat_index(0, 2), 2);
        assert_eq!(h.flat_index(1, 0), 3);
        assert_eq!(h.unflatten(4), (1, 1));
        assert_eq!(h.total_clusters(), 5);
    }

    #[test]
    fn nondecreasing_scales_rejected() {
        let centroids = vec![Matrix::zeros(1, 2); 4];
        assert!(ClusterHierarchy::from_parts(vec![2, 2], centroids, 2).is_err());
    }

    #[test]
    fn identical_points_collapse_all_centroids() {
        let points = Matrix::from_rows(&vec![vec![1.5, -2.0]; 10]);
        let mut rng = RandomStream::new(4);
        let h = init_hierarchy(&points, &[3, 1], &mut rng).unwrap();
        for flat in 0..h.total_clusters() {
            assert_eq!(h.centroid_flat(flat).row(0), &[1.5, -2.0]);
        }
    }

    #[test]
    fn too_few_points_is_a_configuration_error() {
        let points = Matrix::zeros(3, 2);
        let mut rng = RandomStream::new(4);
        assert!(init_hierarchy(&points, &[4], &mut rng).is_err());
    }

    /// Exhaustive 2-means over every 2-partition of a tiny point set.
    fn brute_force_two_means(points: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let n = points.len();
        let d = points[0].len();
        let mut best = (f64::INFINITY, vec![0.0; d], vec![0.0; d]);
        for mask in 1..(1u32 << n) - 1 {
            let mut groups = [Vec::new(), Vec::new()];
            for (i, p) in points.iter().enumerate() {
                groups[usize::from(mask >> i & 1 == 1)].push(p.clone());
            }
            let mean = |g: &[Vec<f64>]| {
                let mut m = vec![0.0; d];
                for p in g {
                    for (s, v) in m.iter_mut().zip(p) {
                        *s += v / g.len() as f64;
                    }
                }
                m
            };
            let (m0, m1) = (mean(&groups[0]), mean(&groups[1]));
            let cost: f64 = groups[0]
                .iter()
                .map(|p| Matrix::squared_distance(p, &m0))
                .chain(groups[1].iter().map(|p| Matrix::squared_distance(p, &m1)))
                .sum();
            if cost < best.0 {
                best = (cost, m0, m1);
            }
        }
        (best.1, best.2)
    }

    #[test]
    fn two_blobs_match_the_brute_force_partition() {
        let mut rng = RandomStream::new(8);
        let mut points = Vec::new();
        for _ in 0..5 {
            points.push(vec![
                5.0 + 0.1 * rng.standard_normal(),
                5.0 + 0.1 * rng.standard_normal(),
            ]);
        }
        for _ in 0..5 {
            points.push(vec![
                -5.0 + 0.1 * rng.standard_normal(),
                -5.0 + 0.1 * rng.standard_normal(),
            ]);
        }
        let h = init_hierarchy(&Matrix::from_rows(&points), &[2], &mut rng).unwrap();
        let (m0, m1) = brute_force_two_means(&points);
        let got: Vec<&[f64]> = (0..2).map(|i| h.centroid_flat(i).row(0)).collect();
        let close = |a: &[f64], b: &[f64]| Matrix::squared_distance(a, b).sqrt() < 1e-6;
        assert!(
            (close(got[0], &m0) && close(got[1], &m1))
                || (close(got[0], &m1) && close(got[1], &m0)),
            "centroids {got:?} vs brute force {m0:?}, {m1:?}"
        );
    }

    #[test]
    fn init_is_deterministic_under_seed() {
        let points = RandomStream::new(1).normal_matrix(40, 6, 1.0);
        let a = init_hierarchy(&points, &[5, 3], &mut RandomStream::new(2)).unwrap();
        let b = init_hierarchy(&points, &[5, 3], &mut RandomStream::new(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn assign_exact_match_and_ties() {
        let h = hierarchy_from_rows(
            vec![4],
            &[
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
                vec![0.7, 0.7, 0.0],
            ],
        );
        // Embedding equal to centroid 2, others orthogonal or oblique.
        let v = Matrix::row_vector(&[0.0, 0.0, 2.0]);
        assert_eq!(assign(&v, &h).unwrap(), vec![2]);

        // All centroids identical: tie broken at index 0.
        let same = hierarchy_from_rows(vec![3], &vec![vec![1.0, 1.0]; 3]);
        let v = Matrix::row_vector(&[0.5, 0.2]);
        assert_eq!(assign(&v, &same).unwrap(), vec![0]);

        // Zero-norm embedding is an assignment error.
        let zero = Matrix::zeros(1, 2);
        assert!(matches!(assign(&zero, &same), Err(Error::Assignment(_))));
    }

    #[test]
    fn assign_matches_exhaustive_scan() {
        let mut rng = RandomStream::new(12);
        for _ in 0..50 {
            let rows: Vec<Vec<f64>> = (0..40)
                .map(|_| (0..8).map(|_| rng.standard_normal()).collect())
                .collect();
            let h = hierarchy_from_rows(vec![16, 12, 8, 4], &rows);
            let v = rng.normal_matrix(1, 8, 1.0);
            let got = assign(&v, &h).unwrap();
            // Brute-force argmax per hierarchy.
            for (hier, &scale_idx) in got.iter().enumerate() {
                let mut best = (f64::NEG_INFINITY, 0);
                for s in 0..h.scales()[hier] {
                    let sim =
                        crate::numerics::cosine(v.row(0), h.centroid(hier, s).row(0)).unwrap();
                    if sim > best.0 {
                        best = (sim, s);
                    }
                }
                assert_eq!(scale_idx, best.1);
            }
        }
    }

    #[test]
    fn momentum_update_direct_evaluation() {
        // C = (1,0), queue {(0,1),(0,3)}, budget 2, m = 0.5 -> (0.5, 1.0).
        let c = Matrix::row_vector(&[1.0, 0.0]);
        let queue = vec![Matrix::row_vector(&[0.0, 1.0]), Matrix::row_vector(&[0.0, 3.0])];
        let out = momentum_update(&c, &queue, 0.5, 2).unwrap();
        assert_eq!(out.row(0), &[0.5, 1.0]);

        // m = 1 leaves the centroid unchanged.
        let fixed = momentum_update(&c, &queue, 1.0, 2).unwrap();
        assert_eq!(fixed, c);

        // Wrong queue length is a contract error.
        assert!(momentum_update(&c, &queue[..1], 0.5, 2).is_err());
    }

    #[test]
    fn momentum_update_is_affine_in_the_queue_mean() {
        let mut rng = RandomStream::new(3);
        for _ in 0..20 {
            let c = rng.normal_matrix(1, 5, 1.0);
            let queue: Vec<Matrix> = (0..4).map(|_| rng.normal_matrix(1, 5, 1.0)).collect();
            let m = rng.uniform();
            let got = momentum_update(&c, &queue, m, 4).unwrap();
            let mut mean = Matrix::zeros(1, 5);
            for q in &queue {
                mean.add_assign(q);
            }
            let expect = c.scale(m).add(&mean.scale((1.0 - m) / 4.0));
            assert!(got.max_abs_diff(&expect) <= 1e-12);
        }
    }

    #[test]
    fn unit_budget_updates_on_every_enqueue() {
        let mut h = hierarchy_from_rows(vec![2], &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let mut q = ClusterQueues::new(2, 1).unwrap();
        let v = Matrix::row_vector(&[2.0, 0.1]);
        let updated = q.enqueue_and_maybe_update(&mut h, &v, 0.9).unwrap();
        assert_eq!(updated, vec![0]);
        assert_eq!(q.len(0), 0);
    }

    #[test]
    fn eight_enqueues_budget_four_update_twice() {
        let mut h = hierarchy_from_rows(vec![1], &[vec![1.0, 0.0]]);
        let mut q = ClusterQueues::new(1, 4).unwrap();
        let mut updates = 0;
        for i in 0..8 {
            let v = Matrix::row_vector(&[1.0 + i as f64 * 0.01, 0.0]);
            updates += q.enqueue_and_maybe_update(&mut h, &v, 0.999).unwrap().len();
            assert!(q.len(0) < 4);
        }
        assert_eq!(updates, 2);
        assert_eq!(q.len(0), 0);
    }
}

//! Checkpoint persistence: a JSON metadata header, a binary manifest of
//! (name, rows, cols) entries, then row-major little-endian f64 payloads.
//! Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clusters::{ClusterHierarchy, ClusterQueues};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, OptimizerState, ParameterStore};

use super::config::TrainConfig;

const MAGIC: &[u8; 8] = b"EGOCKPT1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub input_dim: usize,
    pub epoch: usize,
    pub loss_history: Vec<f64>,
    pub params: ParameterStore,
    pub optimizer: OptimizerState,
    pub hierarchy: Option<ClusterHierarchy>,
    pub queues: Option<ClusterQueues>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: TrainConfig,
    input_dim: usize,
    epoch: usize,
    loss_history: Vec<f64>,
    optimizer_step: u64,
    optimizer_beta1: f64,
    optimizer_beta2: f64,
    optimizer_epsilon: f64,
    cluster_scales: Option<Vec<usize>>,
    queue_budget: Option<usize>,
}

/// Serializes the checkpoint. The manifest carries parameter values
/// ("param.*"), Adam moments ("opt.m.*", "opt.v.*"), centroids
/// ("clusters.h{h}.s{s}", 1-based), and queue contents
/// ("queue.h{h}.s{s}" as one stacked matrix per cluster).
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let meta = Meta {
        config: ckpt.config.clone(),
        input_dim: ckpt.input_dim,
        epoch: ckpt.epoch,
        loss_history: ckpt.loss_history.clone(),
        optimizer_step: ckpt.optimizer.step,
        optimizer_beta1: ckpt.optimizer.beta1,
        optimizer_beta2: ckpt.optimizer.beta2,
        optimizer_epsilon: ckpt.optimizer.epsilon,
        cluster_scales: ckpt.hierarchy.as_ref().map(|h| h.scales().to_vec()),
        queue_budget: ckpt.queues.as_ref().map(|q| q.budget()),
    };
    let header = serde_json::to_vec(&meta)
        .map_err(|e| Error::Format(format!("metadata header: {e}")))?;

    let mut entries: Vec<(String, &Matrix)> = Vec::new();
    let mut owned: Vec<(String, Matrix)> = Vec::new();
    for (name, entry) in ckpt.params.iter() {
        entries.push((format!("param.{name}"), &entry.value));
    }
    for name in ckpt.optimizer.moment_names() {
        let (m, v) = ckpt.optimizer.moments(name).expect("listed moment");
        entries.push((format!("opt.m.{name}"), m));
        entries.push((format!("opt.v.{name}"), v));
    }
    if let Some(h) = &ckpt.hierarchy {
        for flat in 0..h.total_clusters() {
            let (hier, scale) = h.unflatten(flat);
            entries.push((
                format!("clusters.h{}.s{}", hier + 1, scale + 1),
                h.centroid_flat(flat),
            ));
        }
    }
    if let Some(q) = &ckpt.queues {
        let h = ckpt
            .hierarchy
            .as_ref()
            .ok_or_else(|| Error::Format("queues without a hierarchy".into()))?;
        for flat in 0..q.total_clusters() {
            let (hier, scale) = h.unflatten(flat);
            let refs: Vec<&Matrix> = q.queue(flat).iter().collect();
            let stacked = if refs.is_empty() {
                Matrix::zeros(0, h.dim())
            } else {
                Matrix::vstack(&refs)
            };
            owned.push((format!("queue.h{}.s{}", hier + 1, scale + 1), stacked));
        }
    }
    for (name, m) in &owned {
        entries.push((name.clone(), m));
    }

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    w.write_all(&(entries.len() as u64).to_le_bytes())?;
    for (name, m) in &entries {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(m.rows() as u64).to_le_bytes())?;
        w.write_all(&(m.cols() as u64).to_le_bytes())?;
    }
    for (_, m) in &entries {
        for v in m.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Cursor<R> {
    inner: R,
}

impl<R: Read> Cursor<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::Format(format!("truncated while reading {what}")))?;
        Ok(buf)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.bytes(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = Cursor { inner: BufReader::new(File::open(path)?) };

    let magic = r.bytes(8, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let header_len = r.u64("header length")? as usize;
    let header = r.bytes(header_len, "metadata header")?;
    let meta: Meta = serde_json::from_slice(&header)
        .map_err(|e| Error::Format(format!("metadata header: {e}")))?;

    let entry_count = r.u64("manifest count")? as usize;
    let mut manifest = Vec::with_capacity(entry_count);
    for i in 0..entry_count {
        let name_len = r.u32(&format!("manifest entry {i} name length"))? as usize;
        let name = String::from_utf8(r.bytes(name_len, "manifest entry name")?)
            .map_err(|_| Error::Format(format!("manifest entry {i}: invalid name")))?;
        let rows = r.u64(&format!("manifest entry '{name}' rows"))? as usize;
        let cols = r.u64(&format!("manifest entry '{name}' cols"))? as usize;
        manifest.push((name, rows, cols));
    }
    let mut payloads = Vec::with_capacity(entry_count);
    for (name, rows, cols) in &manifest {
        let raw = r.bytes(rows * cols * 8, &format!("payload of '{name}'"))?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        payloads.push(Matrix::from_vec(*rows, *cols, data));
    }

    let mut params = ParameterStore::new();
    let mut moments_first: Vec<(String, Matrix)> = Vec::new();
    let mut moments_second: Vec<(String, Matrix)> = Vec::new();
    let mut centroids: Vec<(String, Matrix)> = Vec::new();
    let mut queue_entries: Vec<(String, Matrix)> = Vec::new();
    for ((name, _, _), matrix) in manifest.iter().zip(payloads) {
        if let Some(p) = name.strip_prefix("param.") {
            params.insert(p, matrix)?;
        } else if let Some(p) = name.strip_prefix("opt.m.") {
            moments_first.push((p.to_string(), matrix));
        } else if let Some(p) = name.strip_prefix("opt.v.") {
            moments_second.push((p.to_string(), matrix));
        } else if name.starts_with("clusters.") {
            centroids.push((name.clone(), matrix));
        } else if name.starts_with("queue.") {
            queue_entries.push((name.clone(), matrix));
        } else {
            return Err(Error::Format(format!("unknown manifest entry '{name}'")));
        }
    }

    let mut optimizer = OptimizerState::new(&params, meta.config.learning_rate);
    optimizer.step = meta.optimizer_step;
    optimizer.beta1 = meta.optimizer_beta1;
    optimizer.beta2 = meta.optimizer_beta2;
    optimizer.epsilon = meta.optimizer_epsilon;
    for (name, m) in moments_first {
        let v = moments_second
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| Error::Format(format!("missing second moment for '{name}'")))?;
        if !params.contains(&name) {
            return Err(Error::Format(format!("moments for unknown parameter '{name}'")));
        }
        optimizer.set_moments(&name, m, v);
    }

    let hierarchy = match &meta.cluster_scales {
        None => None,
        Some(scales) => {
            let mut ordered = Vec::new();
            for (h, &s_count) in scales.iter().enumerate() {
                for s in 0..s_count {
                    let key = format!("clusters.h{}.s{}", h + 1, s + 1);
                    let found = centroids
                        .iter()
                        .find(|(n, _)| *n == key)
                        .map(|(_, m)| m.clone())
                        .ok_or_else(|| Error::Format(format!("missing centroid '{key}'")))?;
                    ordered.push(found);
                }
            }
            let dim = ordered
                .first()
                .map(|m| m.cols())
                .ok_or_else(|| Error::Format("hierarchy with no centroids".into()))?;
            Some(ClusterHierarchy::from_parts(scales.clone(), ordered, dim)?)
        }
    };

    let queues = match (meta.queue_budget, &hierarchy) {
        (None, _) => None,
        (Some(_), None) => {
            return Err(Error::Format("queue entries without a hierarchy".into()));
        }
        (Some(budget), Some(h)) => {
            let mut q = ClusterQueues::new(h.total_clusters(), budget)?;
            for flat in 0..h.total_clusters() {
                let (hier, scale) = h.unflatten(flat);
                let key = format!("queue.h{}.s{}", hier + 1, scale + 1);
                let stacked = queue_entries
                    .iter()
                    .find(|(n, _)| *n == key)
                    .map(|(_, m)| m.clone())
                    .ok_or_else(|| Error::Format(format!("missing queue entry '{key}'")))?;
                let rows: Vec<Matrix> = (0..stacked.rows())
                    .map(|i| Matrix::row_vector(stacked.row(i)))
                    .collect();
                q.restore(flat, rows)?;
            }
            Some(q)
        }
    };

    Ok(Checkpoint {
        config: meta.config,
        input_dim: meta.input_dim,
        epoch: meta.epoch,
        loss_history: meta.loss_history,
        params,
        optimizer,
        hierarchy,
        queues,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RandomStream;

    fn sample_checkpoint() -> Checkpoint {
        let mut rng = RandomStream::new(3);
        let mut params = ParameterStore::new();
        params.insert("encoder.input.w", rng.normal_matrix(3, 4, 1.0)).unwrap();
        params.insert("omni.alpha_raw", rng.normal_matrix(1, 1, 1.0)).unwrap();
        let mut optimizer = OptimizerState::new(&params, 1e-3);
        optimizer.step = 17;
        optimizer.set_moments(
            "encoder.input.w",
            rng.normal_matrix(3, 4, 0.1),
            rng.normal_matrix(3, 4, 0.1),
        );

        let centroids = (0..5).map(|_| rng.normal_matrix(1, 4, 1.0)).collect();
        let hierarchy = ClusterHierarchy::from_parts(vec![3, 2], centroids, 4).unwrap();
        let mut queues = ClusterQueues::new(5, 4).unwrap();
        queues
            .restore(1, vec![rng.normal_matrix(1, 4, 1.0), rng.normal_matrix(1, 4, 1.0)])
            .unwrap();

        let mut config = TrainConfig::default();
        config.scales = vec![3, 2];
        config.hidden_dim = 4;
        Checkpoint {
            config,
            input_dim: 3,
            epoch: 6,
            loss_history: vec![0.5, 0.25, -0.125],
            params,
            optimizer,
            hierarchy: Some(hierarchy),
            queues: Some(queues),
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let ckpt = sample_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.ckpt");
        save_checkpoint(&ckpt, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ckpt);

        // Saving the loaded state again gives identical bytes.
        let path2 = dir.path().join("state2.ckpt");
        save_checkpoint(&back, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn truncated_file_is_a_format_error_with_no_partial_state() {
        let ckpt = sample_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.ckpt");
        save_checkpoint(&ckpt, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let cut = path.with_extension("cut");
        std::fs::write(&cut, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(load_checkpoint(&cut), Err(Error::Format(_))));
    }

    #[test]
    fn corrupt_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOTACKPTxxxxxxx").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));
    }
}

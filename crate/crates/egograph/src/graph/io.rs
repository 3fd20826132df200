//! Dataset ingestion: JSONL (one graph per line) and single-graph
//! edge-list files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

use super::Graph;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetFormat {
    Jsonl,
    EdgeList,
}

impl DatasetFormat {
    /// `.jsonl` / `.json` files are JSONL; anything else is an edge list.
    pub fn from_extension(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => DatasetFormat::Jsonl,
            _ => DatasetFormat::EdgeList,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct GraphRecord {
    nodes: Vec<Vec<f64>>,
    edges: Vec<(usize, usize)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    node_labels: Option<Vec<usize>>,
}

/// Loads a dataset, validating graph invariants and that the node feature
/// dimension is consistent across the whole dataset.
pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Vec<Graph>> {
    let graphs = match format {
        DatasetFormat::Jsonl => load_jsonl(path)?,
        DatasetFormat::EdgeList => vec![load_edge_list(path)?],
    };
    if let Some(first) = graphs.first() {
        let d = first.feature_dim();
        for (i, g) in graphs.iter().enumerate() {
            if g.feature_dim() != d {
                return Err(Error::Schema(format!(
                    "graph {i} has feature dimension {} but the dataset uses {d}",
                    g.feature_dim()
                )));
            }
        }
    }
    Ok(graphs)
}

fn load_jsonl(path: &Path) -> Result<Vec<Graph>> {
    let reader = BufReader::new(File::open(path)?);
    let mut graphs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: GraphRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        let n = record.nodes.len();
        let d = record.nodes.first().map_or(0, |r| r.len());
        for (i, row) in record.nodes.iter().enumerate() {
            if row.len() != d {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: format!("node {i} has {} features, expected {d}", row.len()),
                });
            }
        }
        let features = Matrix::from_rows(&record.nodes);
        let graph = Graph::new(features, record.edges, record.label, record.node_labels)
            .map_err(|e| Error::Parse {
                line: lineno + 1,
                message: format!("{e} (record with {n} nodes)"),
            })?;
        graphs.push(graph);
    }
    Ok(graphs)
}

/// Edge-list format: header "N d_in", N whitespace-separated feature
/// lines, then one "u v" line per edge.
fn load_edge_list(path: &Path) -> Result<Graph> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();

    let (header_no, header) = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, message: "empty edge-list file".into() })?;
    let header = header?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 2 {
        return Err(Error::Parse {
            line: header_no + 1,
            message: format!("expected header 'N d_in', got '{header}'"),
        });
    }
    let parse_count = |s: &str, what: &str, line: usize| {
        s.parse::<usize>().map_err(|_| Error::Parse {
            line,
            message: format!("invalid {what} '{s}'"),
        })
    };
    let n = parse_count(parts[0], "node count", header_no + 1)?;
    let d = parse_count(parts[1], "feature dimension", header_no + 1)?;

    let mut features = Matrix::zeros(n, d);
    for i in 0..n {
        let (lineno, line) = lines.next().ok_or_else(|| Error::Parse {
            line: header_no + 2 + i,
            message: format!("expected {n} feature lines, file ended after {i}"),
        })?;
        let line = line?;
        let values: Vec<&str> = line.split_whitespace().collect();
        if values.len() != d {
            return Err(Error::Parse {
                line: lineno + 1,
                message: format!("expected {d} features, got {}", values.len()),
            });
        }
        for (j, v) in values.iter().enumerate() {
            features.set(
                i,
                j,
                v.parse::<f64>().map_err(|_| Error::Parse {
                    line: lineno + 1,
                    message: format!("invalid feature value '{v}'"),
                })?,
            );
        }
    }

    let mut edges = Vec::new();
    for (lineno, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 2 {
            return Err(Error::Parse {
                line: lineno + 1,
                message: format!("expected 'u v', got '{line}'"),
            });
        }
        let u = parse_count(parts[0], "endpoint", lineno + 1)?;
        let v = parse_count(parts[1], "endpoint", lineno + 1)?;
        edges.push((u, v));
    }

    Graph::new(features, edges, None, None)
        .map_err(|e| Error::Parse { line: header_no + 1, message: e.to_string() })
}

/// Writes graphs as JSONL, one record per line.
pub fn save_jsonl(graphs: &[Graph], path: &Path) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    for g in graphs {
        let record = GraphRecord {
            nodes: (0..g.node_count()).map(|i| g.node_features().row(i).to_vec()).collect(),
            edges: g.edges().to_vec(),
            label: g.label,
            node_labels: g.node_labels.clone(),
        };
        serde_json::to_writer(&mut writer, &record)
            .map_err(|e| Error::Format(format!("serializing graph record: {e}")))?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

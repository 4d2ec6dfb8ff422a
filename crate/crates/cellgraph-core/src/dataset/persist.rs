//! On-disk cell-graph format (versioned JSON).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{CellGraph, EdgeList, RiskLabel};

pub const GRAPH_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NodeDoc {
    id: u32,
    x: f64,
    y: f64,
    feat: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GraphDoc {
    format_version: u32,
    source_id: String,
    label: u64,
    f_dim: usize,
    nodes: Vec<NodeDoc>,
    edges: Vec<(u32, u32)>,
}

/// JSON document with nodes in id order and edges sorted `u < v`. Floats
/// use shortest-round-trip encoding, so load reproduces them exactly.
pub fn save_graph(g: &CellGraph, path: &Path) -> Result<()> {
    let doc = GraphDoc {
        format_version: GRAPH_FORMAT_VERSION,
        source_id: g.source_id.clone(),
        label: g.label.class_index() as u64,
        f_dim: g.f_dim,
        nodes: (0..g.n_nodes)
            .map(|i| NodeDoc {
                id: i as u32,
                x: g.positions[i].0,
                y: g.positions[i].1,
                feat: g.feature_row(i).to_vec(),
            })
            .collect(),
        edges: g.edges.pairs().to_vec(),
    };
    let bytes = serde_json::to_vec(&doc)?;
    crate::imgio::write_atomic(path, &bytes)
}

/// Parses and validates every graph invariant; violations name the field.
pub fn load_graph(path: &Path) -> Result<CellGraph> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let doc: GraphDoc =
        serde_json::from_slice(&bytes).map_err(|e| Error::data(path, e.to_string()))?;
    if doc.format_version != GRAPH_FORMAT_VERSION {
        return Err(Error::data(
            path,
            format!(
                "format_version {} unsupported (expected {GRAPH_FORMAT_VERSION})",
                doc.format_version
            ),
        ));
    }
    let label = RiskLabel::from_index(doc.label).map_err(|e| Error::data(path, e.to_string()))?;
    let n = doc.nodes.len();
    let mut features = Vec::with_capacity(n * doc.f_dim);
    let mut positions = Vec::with_capacity(n);
    for (i, node) in doc.nodes.iter().enumerate() {
        if node.id as usize != i {
            return Err(Error::data(
                path,
                format!(
                    "node ids must be dense and ordered; found {} at slot {i}",
                    node.id
                ),
            ));
        }
        if node.feat.len() != doc.f_dim {
            return Err(Error::data(
                path,
                format!(
                    "node {} has {} features, header says {}",
                    node.id,
                    node.feat.len(),
                    doc.f_dim
                ),
            ));
        }
        if !node.feat.iter().all(|v| v.is_finite()) || !(node.x.is_finite() && node.y.is_finite()) {
            return Err(Error::data(
                path,
                format!("node {} has non-finite values", node.id),
            ));
        }
        features.extend_from_slice(&node.feat);
        positions.push((node.x, node.y));
    }
    for &(u, v) in &doc.edges {
        if u >= v || v as usize >= n {
            return Err(Error::data(
                path,
                format!("edge [{u},{v}] violates u < v < {n}"),
            ));
        }
    }
    let edges = EdgeList::new(n, doc.edges.iter().copied())
        .map_err(|e| Error::data(path, e.to_string()))?;
    CellGraph::new(doc.source_id, label, doc.f_dim, features, positions, edges)
        .map_err(|e| Error::data(path, e.to_string()))
}

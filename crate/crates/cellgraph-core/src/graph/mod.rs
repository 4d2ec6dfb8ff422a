//! Spatial cell-graph construction from nucleus centroids.

mod kdtree;

pub use kdtree::{KdTree, Neighbor};

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Published default neighbor count for the KNN rule.
pub const DEFAULT_KNN_K: usize = 5;
/// Published default Euclidean cutoff in pixels.
pub const DEFAULT_KNN_RADIUS: f64 = 100.0;

/// One nucleus center in image pixel coordinates (x = column, y = row).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Centroid {
    pub id: u32,
    pub x: f64,
    pub y: f64,
}

/// Undirected edges as (u, v) pairs with `u < v`, sorted lexicographically;
/// no self-loops, no duplicates, all endpoints below `node_count`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EdgeList {
    node_count: usize,
    edges: Vec<(u32, u32)>,
}

impl EdgeList {
    pub fn new(node_count: usize, pairs: impl IntoIterator<Item = (u32, u32)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (a, b) in pairs {
            if a == b {
                return Err(Error::Config(format!("self-loop on node {a}")));
            }
            let (u, v) = (a.min(b), a.max(b));
            if v as usize >= node_count {
                return Err(Error::IndexOutOfRange {
                    op: "edge_list",
                    index: v as usize,
                    limit: node_count,
                });
            }
            set.insert((u, v));
        }
        Ok(EdgeList {
            node_count,
            edges: set.into_iter().collect(),
        })
    }

    pub fn empty(node_count: usize) -> Self {
        EdgeList {
            node_count,
            edges: Vec::new(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn pairs(&self) -> &[(u32, u32)] {
        &self.edges
    }

    /// Per-node sorted neighbor lists over the undirected adjacency.
    pub fn neighbor_lists(&self) -> Vec<Vec<u32>> {
        let mut lists = vec![Vec::new(); self.node_count];
        for &(u, v) in &self.edges {
            lists[u as usize].push(v);
            lists[v as usize].push(u);
        }
        for l in &mut lists {
            l.sort_unstable();
        }
        lists
    }

    /// Induced subgraph on `kept` (must be strictly increasing original
    /// ids); nodes are renumbered by their position in `kept`.
    pub fn induced(&self, kept: &[u32]) -> Result<EdgeList> {
        debug_assert!(kept.windows(2).all(|w| w[0] < w[1]));
        let mut remap = vec![u32::MAX; self.node_count];
        for (new, &old) in kept.iter().enumerate() {
            if old as usize >= self.node_count {
                return Err(Error::IndexOutOfRange {
                    op: "induced",
                    index: old as usize,
                    limit: self.node_count,
                });
            }
            remap[old as usize] = new as u32;
        }
        let pairs = self.edges.iter().filter_map(|&(u, v)| {
            let (nu, nv) = (remap[u as usize], remap[v as usize]);
            (nu != u32::MAX && nv != u32::MAX).then_some((nu, nv))
        });
        EdgeList::new(kept.len(), pairs)
    }
}

/// Graph-level class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskLabel {
    Low,
    High,
}

impl RiskLabel {
    pub fn class_index(self) -> usize {
        match self {
            RiskLabel::Low => 0,
            RiskLabel::High => 1,
        }
    }

    pub fn from_index(idx: u64) -> Result<Self> {
        match idx {
            0 => Ok(RiskLabel::Low),
            1 => Ok(RiskLabel::High),
            other => Err(Error::Config(format!("label must be 0 or 1, got {other}"))),
        }
    }
}

impl std::fmt::Display for RiskLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RiskLabel::Low => write!(f, "low_risk"),
            RiskLabel::High => write!(f, "high_risk"),
        }
    }
}

/// One sample for the classifier: node features, spatial positions, the
/// undirected edge list, and the graph-level label.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGraph {
    pub source_id: String,
    pub label: RiskLabel,
    pub n_nodes: usize,
    pub f_dim: usize,
    /// Row-major `n_nodes × f_dim`.
    pub features: Vec<f64>,
    /// Centroid (x, y) per node, aligned with feature rows.
    pub positions: Vec<(f64, f64)>,
    pub edges: EdgeList,
}

impl CellGraph {
    pub fn new(
        source_id: String,
        label: RiskLabel,
        f_dim: usize,
        features: Vec<f64>,
        positions: Vec<(f64, f64)>,
        edges: EdgeList,
    ) -> Result<Self> {
        let n_nodes = positions.len();
        if n_nodes == 0 {
            return Err(Error::EmptyInput("cell graph nodes"));
        }
        if features.len() != n_nodes * f_dim {
            return Err(Error::InvalidShape {
                op: "cell_graph",
                shape: vec![n_nodes, f_dim],
                reason: format!("feature matrix has {} values", features.len()),
            });
        }
        if edges.node_count() != n_nodes {
            return Err(Error::Config(format!(
                "edge list covers {} nodes, graph has {n_nodes}",
                edges.node_count()
            )));
        }
        Ok(CellGraph {
            source_id,
            label,
            n_nodes,
            f_dim,
            features,
            positions,
            edges,
        })
    }

    pub fn feature_row(&self, node: usize) -> &[f64] {
        &self.features[node * self.f_dim..(node + 1) * self.f_dim]
    }
}

/// Dense boolean adjacency products for the attention-score convolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyPowers {
    pub n: usize,
    /// Row-major A: symmetric 0/1, zero diagonal.
    pub one_hop: Vec<bool>,
    /// Row-major boolean A + A²: one- or two-hop reachability, zero diagonal.
    pub two_hop: Vec<bool>,
}

impl AdjacencyPowers {
    /// Sorted neighbor lists of the A + A² structure.
    pub fn two_hop_lists(&self) -> Vec<Vec<u32>> {
        let mut lists = vec![Vec::new(); self.n];
        for (i, list) in lists.iter_mut().enumerate() {
            for j in 0..self.n {
                if self.two_hop[i * self.n + j] {
                    list.push(j as u32);
                }
            }
        }
        lists
    }
}

/// Connects every nucleus to its `k` nearest neighbors within `radius`
/// pixels, then symmetrizes by union. Distance ties at the k-th slot break
/// toward the lower id; isolated nodes are retained.
pub fn knn_graph(points: &[Centroid], k: usize, radius: f64) -> Result<EdgeList> {
    if k == 0 || radius <= 0.0 {
        return Err(Error::Config(format!(
            "knn_graph needs k >= 1 and radius > 0 (got k={k}, radius={radius})"
        )));
    }
    let n = points.len();
    if n == 0 {
        return Ok(EdgeList::empty(0));
    }
    // Ids must be the dense range 0..n so edges index the feature matrix.
    let mut seen = vec![false; n];
    for p in points {
        if (p.id as usize) < n {
            seen[p.id as usize] = true;
        }
    }
    if !seen.iter().all(|&s| s) {
        return Err(Error::Config(
            "centroid ids must form the dense range 0..n".into(),
        ));
    }
    let tree = KdTree::build(points)?;
    let mut pairs = Vec::new();
    for p in points {
        for nb in tree.knn(p.x, p.y, k, radius, Some(p.id)) {
            pairs.push((p.id, nb.id));
        }
    }
    EdgeList::new(n, pairs)
}

/// A and boolean A + A² with the diagonal forced to zero.
pub fn adjacency_powers(edges: &EdgeList) -> AdjacencyPowers {
    let n = edges.node_count();
    let mut one = vec![false; n * n];
    for &(u, v) in edges.pairs() {
        one[u as usize * n + v as usize] = true;
        one[v as usize * n + u as usize] = true;
    }
    let lists = edges.neighbor_lists();
    let mut two = one.clone();
    for v in 0..n {
        for &u in &lists[v] {
            for &w in &lists[u as usize] {
                if w as usize != v {
                    two[v * n + w as usize] = true;
                }
            }
        }
    }
    AdjacencyPowers {
        n,
        one_hop: one,
        two_hop: two,
    }
}

/// Reads centroids from CSV with header `id,x,y`.
pub fn read_centroids_csv(path: &Path) -> Result<Vec<Centroid>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::data(path, e.to_string()))?;
    let headers = reader.headers()?.clone();
    let expect = ["id", "x", "y"];
    if headers.iter().take(3).collect::<Vec<_>>() != expect {
        return Err(Error::data(
            path,
            format!("expected header id,x,y, got {:?}", headers),
        ));
    }
    let mut out = Vec::new();
    for record in reader.deserialize() {
        let c: Centroid = record?;
        out.push(c);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;

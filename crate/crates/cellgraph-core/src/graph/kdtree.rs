//! 2-d KD-tree over nucleus centroids.
//!
//! Queries return exactly the brute-force answer: candidates are ordered by
//! (squared distance, id), so ties at the k-th neighbor resolve to the lower
//! nucleus id on every platform.

use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::graph::Centroid;

const LEAF_SIZE: usize = 16;

/// Neighbor candidate ordered by (distance², id).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub dist2: f64,
    pub id: u32,
}

impl Eq for Neighbor {}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

enum NodeKind {
    Leaf,
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

struct TreeNode {
    kind: NodeKind,
    /// Range into `order` covered by this subtree.
    start: usize,
    end: usize,
}

/// Balanced median-split partition; immutable after construction.
pub struct KdTree {
    points: Vec<Centroid>,
    order: Vec<u32>,
    nodes: Vec<TreeNode>,
    root: usize,
}

impl KdTree {
    pub fn build(points: &[Centroid]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("kdtree"));
        }
        let mut tree = KdTree {
            points: points.to_vec(),
            order: (0..points.len() as u32).collect(),
            nodes: Vec::new(),
            root: 0,
        };
        tree.root = tree.split(0, points.len(), 0);
        Ok(tree)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn coord(&self, idx: u32, axis: usize) -> f64 {
        let p = &self.points[idx as usize];
        if axis == 0 {
            p.x
        } else {
            p.y
        }
    }

    fn split(&mut self, start: usize, end: usize, depth: usize) -> usize {
        if end - start <= LEAF_SIZE {
            self.nodes.push(TreeNode {
                kind: NodeKind::Leaf,
                start,
                end,
            });
            return self.nodes.len() - 1;
        }
        let axis = depth % 2;
        let mid = (start + end) / 2;
        // Median split; ties on the coordinate fall back to id so the
        // partition is deterministic.
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            let ca = if axis == 0 {
                points[a as usize].x
            } else {
                points[a as usize].y
            };
            let cb = if axis == 0 {
                points[b as usize].x
            } else {
                points[b as usize].y
            };
            ca.total_cmp(&cb).then(a.cmp(&b))
        });
        let value = self.coord(self.order[mid], axis);
        let left = self.split(start, mid, depth + 1);
        let right = self.split(mid, end, depth + 1);
        self.nodes.push(TreeNode {
            kind: NodeKind::Split {
                axis,
                value,
                left,
                right,
            },
            start,
            end,
        });
        self.nodes.len() - 1
    }

    /// The `k` nearest points to `(x, y)` within `radius`, ordered by
    /// (distance, nucleus id). `exclude` drops one nucleus id (the query
    /// point itself).
    pub fn knn(
        &self,
        x: f64,
        y: f64,
        k: usize,
        radius: f64,
        exclude: Option<u32>,
    ) -> Vec<Neighbor> {
        if k == 0 {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Neighbor> = BinaryHeap::new();
        let r2 = radius * radius;
        self.knn_visit(self.root, x, y, k, r2, exclude, &mut heap);
        heap.into_sorted_vec()
    }

    #[allow(clippy::too_many_arguments)]
    fn knn_visit(
        &self,
        node: usize,
        x: f64,
        y: f64,
        k: usize,
        r2: f64,
        exclude: Option<u32>,
        heap: &mut BinaryHeap<Neighbor>,
    ) {
        let worst = |heap: &BinaryHeap<Neighbor>| -> Option<Neighbor> {
            if heap.len() == k {
                heap.peek().copied()
            } else {
                None
            }
        };
        match self.nodes[node].kind {
            NodeKind::Leaf => {
                for &idx in &self.order[self.nodes[node].start..self.nodes[node].end] {
                    let p = &self.points[idx as usize];
                    if exclude == Some(p.id) {
                        continue;
                    }
                    let d2 = (p.x - x) * (p.x - x) + (p.y - y) * (p.y - y);
                    if d2 > r2 {
                        continue;
                    }
                    let cand = Neighbor {
                        dist2: d2,
                        id: p.id,
                    };
                    match worst(heap) {
                        Some(w) if cand >= w => {}
                        Some(_) => {
                            heap.pop();
                            heap.push(cand);
                        }
                        None => heap.push(cand),
                    }
                }
            }
            NodeKind::Split {
                axis,
                value,
                left,
                right,
            } => {
                let q = if axis == 0 { x } else { y };
                let (near, far) = if q < value {
                    (left, right)
                } else {
                    (right, left)
                };
                self.knn_visit(near, x, y, k, r2, exclude, heap);
                let plane = q - value;
                let plane2 = plane * plane;
                if plane2 > r2 {
                    return;
                }
                // Equality stays explored: an equidistant point with a lower
                // id can still displace the current worst candidate.
                if let Some(w) = worst(heap) {
                    if plane2 > w.dist2 {
                        return;
                    }
                }
                self.knn_visit(far, x, y, k, r2, exclude, heap);
            }
        }
    }

    /// All points within `radius` of `(x, y)`, ordered by (distance, id).
    pub fn within_radius(&self, x: f64, y: f64, radius: f64) -> Vec<Neighbor> {
        let mut out = Vec::new();
        let r2 = radius * radius;
        self.radius_visit(self.root, x, y, r2, &mut out);
        out.sort();
        out
    }

    fn radius_visit(&self, node: usize, x: f64, y: f64, r2: f64, out: &mut Vec<Neighbor>) {
        match self.nodes[node].kind {
            NodeKind::Leaf => {
                for &idx in &self.order[self.nodes[node].start..self.nodes[node].end] {
                    let p = &self.points[idx as usize];
                    let d2 = (p.x - x) * (p.x - x) + (p.y - y) * (p.y - y);
                    if d2 <= r2 {
                        out.push(Neighbor {
                            dist2: d2,
                            id: p.id,
                        });
                    }
                }
            }
            NodeKind::Split {
                axis,
                value,
                left,
                right,
            } => {
                let q = if axis == 0 { x } else { y };
                let plane = q - value;
                if plane * plane <= r2 {
                    self.radius_visit(left, x, y, r2, out);
                    self.radius_visit(right, x, y, r2, out);
                } else if q < value {
                    self.radius_visit(left, x, y, r2, out);
                } else {
                    self.radius_visit(right, x, y, r2, out);
                }
            }
        }
    }

    /// Depth of the tree (0 for a single leaf).
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], at: usize) -> usize {
            match nodes[at].kind {
                NodeKind::Leaf => 0,
                NodeKind::Split { left, right, .. } => {
                    1 + walk(nodes, left).max(walk(nodes, right))
                }
            }
        }
        walk(&self.nodes, self.root)
    }
}

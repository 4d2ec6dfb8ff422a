//! Operation recording and reverse-mode gradient accumulation.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy)]
enum Broadcast {
    None,
    /// Left operand is a scalar stretched over the right's shape.
    ScalarLhs,
    /// Right operand is a scalar stretched over the left's shape.
    ScalarRhs,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: NodeId,
        b: NodeId,
    },
    Transpose {
        x: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
        bc: Broadcast,
    },
    Sub {
        a: NodeId,
        b: NodeId,
        bc: Broadcast,
    },
    Mul {
        a: NodeId,
        b: NodeId,
        bc: Broadcast,
    },
    Relu {
        x: NodeId,
    },
    Sigmoid {
        x: NodeId,
    },
    Tanh {
        x: NodeId,
    },
    Exp {
        x: NodeId,
    },
    Log {
        x: NodeId,
    },
    Reduce {
        kind: ReduceKind,
        x: NodeId,
        axis: Option<usize>,
        /// Flat input index of the winning element per output slot (max only).
        argmax: Vec<usize>,
    },
    Concat {
        parts: Vec<NodeId>,
        axis: usize,
    },
    Narrow {
        x: NodeId,
        axis: usize,
        start: usize,
        len: usize,
    },
    Reshape {
        x: NodeId,
    },
    GatherRows {
        x: NodeId,
        idx: Vec<usize>,
    },
    NeighborMax {
        x: NodeId,
        /// Winning input row per (output row, column); `u32::MAX` marks an
        /// empty neighborhood (output 0, no gradient).
        argmax: Vec<u32>,
    },
    ScaleRows {
        x: NodeId,
        z: NodeId,
    },
    AddRowVec {
        x: NodeId,
        v: NodeId,
    },
    MeanPoolRows {
        x: NodeId,
        group: usize,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        softmax: Vec<f64>,
    },
}

struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Single-owner record of a forward computation.
///
/// Values are computed eagerly as operations are recorded, so intermediate
/// results (attention scores, logits) can be inspected mid-construction.
/// [`Tape::backward`] may run once per tape.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
    check_finite: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
            // Debug evaluation mode: scan every op output for NaN/Inf.
            check_finite: cfg!(debug_assertions),
        }
    }

    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes.get(id.0).ok_or(Error::IndexOutOfRange {
            op: "tape",
            index: id.0,
            limit: self.nodes.len(),
        })
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn values(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].values
    }

    pub fn tensor(&self, id: NodeId) -> Tensor {
        let n = &self.nodes[id.0];
        Tensor::new(n.shape.clone(), n.values.clone()).expect("tape node is well-formed")
    }

    /// Gradient of the last `backward` root with respect to `id`, if any
    /// was accumulated.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn grad_tensor(&self, id: NodeId) -> Option<Tensor> {
        let g = self.grad(id)?;
        Some(Tensor::new(self.nodes[id.0].shape.clone(), g.to_vec()).expect("grad matches shape"))
    }

    fn push(
        &mut self,
        shape: Vec<usize>,
        values: Vec<f64>,
        op: Op,
        needs_grad: bool,
    ) -> Result<NodeId> {
        if self.check_finite && !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericDomain {
                op: op_name(&op),
                reason: "non-finite value produced".into(),
            });
        }
        self.nodes.push(Node {
            shape,
            values,
            op,
            needs_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Places a tensor on the tape. Gradients are accumulated for it iff
    /// `requires_grad` is set.
    pub fn leaf(&mut self, t: &Tensor) -> Result<NodeId> {
        self.push(
            t.shape().to_vec(),
            t.values().to_vec(),
            Op::Leaf,
            t.requires_grad(),
        )
    }

    pub fn leaf_values(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<NodeId> {
        self.leaf(&Tensor::new(shape, values)?)
    }

    // ── binary elementwise ────────────────────────────────────────────

    fn broadcast_of(
        &self,
        op: &'static str,
        a: NodeId,
        b: NodeId,
    ) -> Result<(Broadcast, Vec<usize>)> {
        let (na, nb) = (self.node(a)?, self.node(b)?);
        if na.shape == nb.shape {
            Ok((Broadcast::None, na.shape.clone()))
        } else if na.values.len() == 1 {
            Ok((Broadcast::ScalarLhs, nb.shape.clone()))
        } else if nb.values.len() == 1 {
            Ok((Broadcast::ScalarRhs, na.shape.clone()))
        } else {
            Err(Error::ShapeMismatch {
                op,
                lhs: na.shape.clone(),
                rhs: nb.shape.clone(),
            })
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        mk: impl Fn(NodeId, NodeId, Broadcast) -> Op,
    ) -> Result<NodeId> {
        let (bc, shape) = self.broadcast_of(name, a, b)?;
        let (va, vb) = (&self.nodes[a.0].values, &self.nodes[b.0].values);
        let values: Vec<f64> = match bc {
            Broadcast::None => va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect(),
            Broadcast::ScalarLhs => vb.iter().map(|&y| f(va[0], y)).collect(),
            Broadcast::ScalarRhs => va.iter().map(|&x| f(x, vb[0])).collect(),
        };
        let needs = self.needs(a) || self.needs(b);
        self.push(shape, values, mk(a, b, bc), needs)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("add", a, b, |x, y| x + y, |a, b, bc| Op::Add { a, b, bc })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("sub", a, b, |x, y| x - y, |a, b, bc| Op::Sub { a, b, bc })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("mul", a, b, |x, y| x * y, |a, b, bc| Op::Mul { a, b, bc })
    }

    // ── unary elementwise ─────────────────────────────────────────────

    fn unary(
        &mut self,
        x: NodeId,
        f: impl Fn(f64) -> f64,
        mk: impl Fn(NodeId) -> Op,
    ) -> Result<NodeId> {
        let n = self.node(x)?;
        let values: Vec<f64> = n.values.iter().map(|&v| f(v)).collect();
        let (shape, needs) = (n.shape.clone(), n.needs_grad);
        self.push(shape, values, mk(x), needs)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, |v| v.max(0.0), |x| Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, |v| 1.0 / (1.0 + (-v).exp()), |x| Op::Sigmoid { x })
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, f64::tanh, |x| Op::Tanh { x })
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.node(x)?;
        if n.values.iter().any(|&v| v > 709.0) {
            return Err(Error::NumericDomain {
                op: "exp",
                reason: "argument overflows f64".into(),
            });
        }
        self.unary(x, f64::exp, |x| Op::Exp { x })
    }

    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.node(x)?;
        if n.values.iter().any(|&v| v <= 0.0) {
            return Err(Error::NumericDomain {
                op: "log",
                reason: "argument must be positive".into(),
            });
        }
        self.unary(x, f64::ln, |x| Op::Log { x })
    }

    // ── structure ─────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (na, nb) = (self.node(a)?, self.node(b)?);
        if na.shape.len() != 2 || nb.shape.len() != 2 || na.shape[1] != nb.shape[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: na.shape.clone(),
                rhs: nb.shape.clone(),
            });
        }
        let (m, k, n) = (na.shape[0], na.shape[1], nb.shape[1]);
        let values = matmul_nn(&na.values, &nb.values, m, k, n);
        let needs = self.needs(a) || self.needs(b);
        self.push(vec![m, n], values, Op::MatMul { a, b }, needs)
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.node(x)?;
        if n.shape.len() != 2 {
            return Err(Error::InvalidShape {
                op: "transpose",
                shape: n.shape.clone(),
                reason: "rank-2 tensor required".into(),
            });
        }
        let (r, c) = (n.shape[0], n.shape[1]);
        let values = transpose_vals(&n.values, r, c);
        let needs = n.needs_grad;
        self.push(vec![c, r], values, Op::Transpose { x }, needs)
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let n = self.node(x)?;
        if shape.iter().product::<usize>() != n.values.len() {
            return Err(Error::InvalidShape {
                op: "reshape",
                shape,
                reason: format!("element count differs from {:?}", n.shape),
            });
        }
        let (values, needs) = (n.values.clone(), n.needs_grad);
        self.push(shape, values, Op::Reshape { x }, needs)
    }

    /// Reduction along `axis`; `None` reduces everything to a scalar.
    ///
    /// Max routes its gradient to the first maximal element of each reduced
    /// slice (lowest flat index on ties).
    pub fn reduce(&mut self, kind: ReduceKind, x: NodeId, axis: Option<usize>) -> Result<NodeId> {
        let n = self.node(x)?;
        let shape = n.shape.clone();
        let (out_shape, outer, len, inner) = match axis {
            None => (vec![], 1usize, n.values.len(), 1usize),
            Some(ax) => {
                if ax >= shape.len() {
                    return Err(Error::IndexOutOfRange {
                        op: "reduce",
                        index: ax,
                        limit: shape.len(),
                    });
                }
                let outer: usize = shape[..ax].iter().product();
                let inner: usize = shape[ax + 1..].iter().product();
                let mut out = shape.clone();
                out.remove(ax);
                (out, outer, shape[ax], inner)
            }
        };
        let vals = &n.values;
        let mut out = vec![0.0; outer * inner];
        let mut argmax = Vec::new();
        match kind {
            ReduceKind::Sum | ReduceKind::Mean => {
                for o in 0..outer {
                    for i in 0..inner {
                        let mut s = 0.0;
                        for l in 0..len {
                            s += vals[(o * len + l) * inner + i];
                        }
                        out[o * inner + i] = if kind == ReduceKind::Mean {
                            s / len as f64
                        } else {
                            s
                        };
                    }
                }
            }
            ReduceKind::Max => {
                argmax = vec![0usize; outer * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_at = 0usize;
                        for l in 0..len {
                            let at = (o * len + l) * inner + i;
                            if vals[at] > best {
                                best = vals[at];
                                best_at = at;
                            }
                        }
                        out[o * inner + i] = best;
                        argmax[o * inner + i] = best_at;
                    }
                }
            }
        }
        let needs = n.needs_grad;
        self.push(
            out_shape,
            out,
            Op::Reduce {
                kind,
                x,
                axis,
                argmax,
            },
            needs,
        )
    }

    pub fn sum(&mut self, x: NodeId, axis: Option<usize>) -> Result<NodeId> {
        self.reduce(ReduceKind::Sum, x, axis)
    }

    pub fn mean(&mut self, x: NodeId, axis: Option<usize>) -> Result<NodeId> {
        self.reduce(ReduceKind::Mean, x, axis)
    }

    pub fn max(&mut self, x: NodeId, axis: Option<usize>) -> Result<NodeId> {
        self.reduce(ReduceKind::Max, x, axis)
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::EmptyInput("concat"));
        }
        let first = self.node(parts[0])?.shape.clone();
        if axis >= first.len() {
            return Err(Error::IndexOutOfRange {
                op: "concat",
                index: axis,
                limit: first.len(),
            });
        }
        let mut axis_total = 0usize;
        for &p in parts {
            let s = &self.node(p)?.shape;
            if s.len() != first.len()
                || s.iter()
                    .enumerate()
                    .any(|(d, &v)| d != axis && v != first[d])
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.clone(),
                });
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut values = vec![0.0; outer * axis_total * inner];
        let mut offset = 0usize;
        for &p in parts {
            let n = &self.nodes[p.0];
            let plen = n.shape[axis];
            for o in 0..outer {
                let src = &n.values[o * plen * inner..(o + 1) * plen * inner];
                let dst_start = (o * axis_total + offset) * inner;
                values[dst_start..dst_start + plen * inner].copy_from_slice(src);
            }
            offset += plen;
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(
            out_shape,
            values,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            needs,
        )
    }

    /// Slice of `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let n = self.node(x)?;
        let shape = n.shape.clone();
        if axis >= shape.len() {
            return Err(Error::IndexOutOfRange {
                op: "narrow",
                index: axis,
                limit: shape.len(),
            });
        }
        if len == 0 || start + len > shape[axis] {
            return Err(Error::IndexOutOfRange {
                op: "narrow",
                index: start + len,
                limit: shape[axis],
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let mut values = vec![0.0; outer * len * inner];
        for o in 0..outer {
            let src = ((o * shape[axis]) + start) * inner;
            values[o * len * inner..(o + 1) * len * inner]
                .copy_from_slice(&n.values[src..src + len * inner]);
        }
        let needs = n.needs_grad;
        self.push(
            out_shape,
            values,
            Op::Narrow {
                x,
                axis,
                start,
                len,
            },
            needs,
        )
    }

    /// Row selection (duplicates allowed); gradient scatter-adds.
    pub fn gather_rows(&mut self, x: NodeId, idx: &[usize]) -> Result<NodeId> {
        let n = self.node(x)?;
        if n.shape.len() != 2 {
            return Err(Error::InvalidShape {
                op: "gather_rows",
                shape: n.shape.clone(),
                reason: "rank-2 tensor required".into(),
            });
        }
        if idx.is_empty() {
            return Err(Error::EmptyInput("gather_rows"));
        }
        let (rows, cols) = (n.shape[0], n.shape[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::IndexOutOfRange {
                op: "gather_rows",
                index: bad,
                limit: rows,
            });
        }
        let mut values = vec![0.0; idx.len() * cols];
        for (o, &i) in idx.iter().enumerate() {
            values[o * cols..(o + 1) * cols].copy_from_slice(&n.values[i * cols..(i + 1) * cols]);
        }
        let needs = n.needs_grad;
        self.push(
            vec![idx.len(), cols],
            values,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            needs,
        )
    }

    /// Per-slot elementwise max over a set of input rows.
    ///
    /// Output row `i` is the columnwise max over `x[neighbors[i]]`; an empty
    /// list yields a zero row and receives no gradient. Ties route to the
    /// earliest listed row.
    pub fn neighbor_max(&mut self, x: NodeId, neighbors: &[Vec<u32>]) -> Result<NodeId> {
        let n = self.node(x)?;
        if n.shape.len() != 2 {
            return Err(Error::InvalidShape {
                op: "neighbor_max",
                shape: n.shape.clone(),
                reason: "rank-2 tensor required".into(),
            });
        }
        let (rows, cols) = (n.shape[0], n.shape[1]);
        let m = neighbors.len();
        if m == 0 {
            return Err(Error::EmptyInput("neighbor_max"));
        }
        let mut values = vec![0.0; m * cols];
        let mut argmax = vec![u32::MAX; m * cols];
        for (o, list) in neighbors.iter().enumerate() {
            if list.is_empty() {
                continue;
            }
            for &u in list {
                let u = u as usize;
                if u >= rows {
                    return Err(Error::IndexOutOfRange {
                        op: "neighbor_max",
                        index: u,
                        limit: rows,
                    });
                }
            }
            for c in 0..cols {
                let mut best = f64::NEG_INFINITY;
                let mut best_row = u32::MAX;
                for &u in list {
                    let v = n.values[u as usize * cols + c];
                    if v > best {
                        best = v;
                        best_row = u;
                    }
                }
                values[o * cols + c] = best;
                argmax[o * cols + c] = best_row;
            }
        }
        let needs = n.needs_grad;
        self.push(vec![m, cols], values, Op::NeighborMax { x, argmax }, needs)
    }

    /// Scales row `i` of `x` by `z[i]`; `z` is `[n]` or `[n,1]`.
    pub fn scale_rows(&mut self, x: NodeId, z: NodeId) -> Result<NodeId> {
        let (nx, nz) = (self.node(x)?, self.node(z)?);
        let ok = nx.shape.len() == 2 && (nz.shape == [nx.shape[0]] || nz.shape == [nx.shape[0], 1]);
        if !ok {
            return Err(Error::ShapeMismatch {
                op: "scale_rows",
                lhs: nx.shape.clone(),
                rhs: nz.shape.clone(),
            });
        }
        let (rows, cols) = (nx.shape[0], nx.shape[1]);
        let mut values = vec![0.0; rows * cols];
        for r in 0..rows {
            let s = nz.values[r];
            for c in 0..cols {
                values[r * cols + c] = nx.values[r * cols + c] * s;
            }
        }
        let needs = nx.needs_grad || nz.needs_grad;
        self.push(vec![rows, cols], values, Op::ScaleRows { x, z }, needs)
    }

    /// Adds vector `v` (`[d]` or `[1,d]`) to every row of `x` (`[n,d]`).
    pub fn add_row_vector(&mut self, x: NodeId, v: NodeId) -> Result<NodeId> {
        let (nx, nv) = (self.node(x)?, self.node(v)?);
        let ok = nx.shape.len() == 2 && (nv.shape == [nx.shape[1]] || nv.shape == [1, nx.shape[1]]);
        if !ok {
            return Err(Error::ShapeMismatch {
                op: "add_row_vector",
                lhs: nx.shape.clone(),
                rhs: nv.shape.clone(),
            });
        }
        let (rows, cols) = (nx.shape[0], nx.shape[1]);
        let mut values = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                values[r * cols + c] = nx.values[r * cols + c] + nv.values[c];
            }
        }
        let needs = nx.needs_grad || nv.needs_grad;
        self.push(vec![rows, cols], values, Op::AddRowVec { x, v }, needs)
    }

    /// Means every `group` consecutive rows: `[g*group, d] -> [g, d]`.
    pub fn mean_pool_rows(&mut self, x: NodeId, group: usize) -> Result<NodeId> {
        let n = self.node(x)?;
        if n.shape.len() != 2 || group == 0 || n.shape[0] % group != 0 {
            return Err(Error::InvalidShape {
                op: "mean_pool_rows",
                shape: n.shape.clone(),
                reason: format!("rows must divide into groups of {}", group),
            });
        }
        let (rows, cols) = (n.shape[0], n.shape[1]);
        let out_rows = rows / group;
        let mut values = vec![0.0; out_rows * cols];
        for g in 0..out_rows {
            for r in 0..group {
                let src = (g * group + r) * cols;
                for c in 0..cols {
                    values[g * cols + c] += n.values[src + c];
                }
            }
            for c in 0..cols {
                values[g * cols + c] /= group as f64;
            }
        }
        let needs = n.needs_grad;
        self.push(
            vec![out_rows, cols],
            values,
            Op::MeanPoolRows { x, group },
            needs,
        )
    }

    /// Mean over rows of `-log softmax(logits)[target]`, stabilized by
    /// row-max subtraction. Returns a scalar.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let n = self.node(logits)?;
        if n.shape.len() != 2 || n.shape[0] != targets.len() {
            return Err(Error::InvalidShape {
                op: "softmax_cross_entropy",
                shape: n.shape.clone(),
                reason: format!("need [n,c] logits with {} target rows", targets.len()),
            });
        }
        let (rows, cols) = (n.shape[0], n.shape[1]);
        if let Some(&bad) = targets.iter().find(|&&t| t >= cols) {
            return Err(Error::IndexOutOfRange {
                op: "softmax_cross_entropy",
                index: bad,
                limit: cols,
            });
        }
        let mut softmax = vec![0.0; rows * cols];
        let mut loss = 0.0;
        for r in 0..rows {
            let row = &n.values[r * cols..(r + 1) * cols];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for c in 0..cols {
                let e = (row[c] - m).exp();
                softmax[r * cols + c] = e;
                z += e;
            }
            for c in 0..cols {
                softmax[r * cols + c] /= z;
            }
            loss -= (row[targets[r]] - m) - z.ln();
        }
        loss /= rows as f64;
        let needs = n.needs_grad;
        self.push(
            vec![],
            vec![loss],
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                softmax,
            },
            needs,
        )
    }

    // ── backward ──────────────────────────────────────────────────────

    /// Accumulates gradients of the scalar `root` into every reachable
    /// node that requires them. Errors on a non-scalar root or a second
    /// call without re-recording.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardConsumed);
        }
        let r = self.node(root)?;
        if r.values.len() != 1 {
            return Err(Error::NonScalarRoot {
                shape: r.shape.clone(),
            });
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            if grads[i].is_none() || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            // Inputs always precede their outputs, so split at i.
            let (head, tail) = grads.split_at_mut(i);
            let g = tail[0].as_ref().expect("checked above");
            self.propagate(i, g, head);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let acc = |grads: &mut [Option<Vec<f64>>], id: NodeId, f: &mut dyn FnMut(&mut [f64])| {
            if self.nodes[id.0].needs_grad {
                let slot =
                    grads[id.0].get_or_insert_with(|| vec![0.0; self.nodes[id.0].values.len()]);
                f(slot);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (na, nb) = (&self.nodes[a.0], &self.nodes[b.0]);
                let (m, k, n) = (na.shape[0], na.shape[1], nb.shape[1]);
                acc(grads, *a, &mut |da| {
                    matmul_nt_acc(g, &nb.values, m, n, k, da);
                });
                acc(grads, *b, &mut |db| {
                    matmul_tn_acc(&na.values, g, m, k, n, db);
                });
            }
            Op::Transpose { x } => {
                let (c, r) = (node.shape[0], node.shape[1]);
                acc(grads, *x, &mut |dx| {
                    for i in 0..c {
                        for j in 0..r {
                            dx[j * c + i] += g[i * r + j];
                        }
                    }
                });
            }
            Op::Add { a, b, bc } => {
                acc(grads, *a, &mut |da| {
                    add_grad(da, g, side_is_scalar(*bc, true))
                });
                acc(grads, *b, &mut |db| {
                    add_grad(db, g, side_is_scalar(*bc, false))
                });
            }
            Op::Sub { a, b, bc } => {
                acc(grads, *a, &mut |da| {
                    add_grad(da, g, side_is_scalar(*bc, true))
                });
                acc(grads, *b, &mut |db| {
                    if side_is_scalar(*bc, false) {
                        db[0] -= g.iter().sum::<f64>();
                    } else {
                        for (d, &gv) in db.iter_mut().zip(g) {
                            *d -= gv;
                        }
                    }
                });
            }
            Op::Mul { a, b, bc } => {
                let (va, vb) = (&self.nodes[a.0].values, &self.nodes[b.0].values);
                acc(grads, *a, &mut |da| match bc {
                    Broadcast::ScalarLhs => {
                        da[0] += g.iter().zip(vb).map(|(&gv, &y)| gv * y).sum::<f64>()
                    }
                    Broadcast::ScalarRhs => {
                        for (d, &gv) in da.iter_mut().zip(g) {
                            *d += gv * vb[0];
                        }
                    }
                    Broadcast::None => {
                        for ((d, &gv), &y) in da.iter_mut().zip(g).zip(vb) {
                            *d += gv * y;
                        }
                    }
                });
                acc(grads, *b, &mut |db| match bc {
                    Broadcast::ScalarRhs => {
                        db[0] += g.iter().zip(va).map(|(&gv, &x)| gv * x).sum::<f64>()
                    }
                    Broadcast::ScalarLhs => {
                        for (d, &gv) in db.iter_mut().zip(g) {
                            *d += gv * va[0];
                        }
                    }
                    Broadcast::None => {
                        for ((d, &gv), &x) in db.iter_mut().zip(g).zip(va) {
                            *d += gv * x;
                        }
                    }
                });
            }
            Op::Relu { x } => {
                let vx = &self.nodes[x.0].values;
                acc(grads, *x, &mut |dx| {
                    for ((d, &gv), &v) in dx.iter_mut().zip(g).zip(vx) {
                        if v > 0.0 {
                            *d += gv;
                        }
                    }
                });
            }
            Op::Sigmoid { x } => {
                let y = &node.values;
                acc(grads, *x, &mut |dx| {
                    for ((d, &gv), &yv) in dx.iter_mut().zip(g).zip(y) {
                        *d += gv * yv * (1.0 - yv);
                    }
                });
            }
            Op::Tanh { x } => {
                let y = &node.values;
                acc(grads, *x, &mut |dx| {
                    for ((d, &gv), &yv) in dx.iter_mut().zip(g).zip(y) {
                        *d += gv * (1.0 - yv * yv);
                    }
                });
            }
            Op::Exp { x } => {
                let y = &node.values;
                acc(grads, *x, &mut |dx| {
                    for ((d, &gv), &yv) in dx.iter_mut().zip(g).zip(y) {
                        *d += gv * yv;
                    }
                });
            }
            Op::Log { x } => {
                let vx = &self.nodes[x.0].values;
                acc(grads, *x, &mut |dx| {
                    for ((d, &gv), &v) in dx.iter_mut().zip(g).zip(vx) {
                        *d += gv / v;
                    }
                });
            }
            Op::Reduce {
                kind,
                x,
                axis,
                argmax,
            } => {
                let shape = &self.nodes[x.0].shape;
                let (outer, len, inner) = match axis {
                    None => (1usize, self.nodes[x.0].values.len(), 1usize),
                    Some(ax) => (
                        shape[..*ax].iter().product(),
                        shape[*ax],
                        shape[*ax + 1..].iter().product(),
                    ),
                };
                match kind {
                    ReduceKind::Sum => acc(grads, *x, &mut |dx| {
                        for o in 0..outer {
                            for l in 0..len {
                                for i in 0..inner {
                                    dx[(o * len + l) * inner + i] += g[o * inner + i];
                                }
                            }
                        }
                    }),
                    ReduceKind::Mean => acc(grads, *x, &mut |dx| {
                        let s = 1.0 / len as f64;
                        for o in 0..outer {
                            for l in 0..len {
                                for i in 0..inner {
                                    dx[(o * len + l) * inner + i] += g[o * inner + i] * s;
                                }
                            }
                        }
                    }),
                    ReduceKind::Max => acc(grads, *x, &mut |dx| {
                        for (slot, &src) in argmax.iter().enumerate() {
                            dx[src] += g[slot];
                        }
                    }),
                }
            }
            Op::Concat { parts, axis } => {
                let out_axis = node.shape[*axis];
                let outer: usize = node.shape[..*axis].iter().product();
                let inner: usize = node.shape[*axis + 1..].iter().product();
                let mut offset = 0usize;
                for &p in parts {
                    let plen = self.nodes[p.0].shape[*axis];
                    acc(grads, p, &mut |dp| {
                        for o in 0..outer {
                            let src = (o * out_axis + offset) * inner;
                            let dst = o * plen * inner;
                            for t in 0..plen * inner {
                                dp[dst + t] += g[src + t];
                            }
                        }
                    });
                    offset += plen;
                }
            }
            Op::Narrow {
                x,
                axis,
                start,
                len,
            } => {
                let shape = &self.nodes[x.0].shape;
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let full = shape[*axis];
                acc(grads, *x, &mut |dx| {
                    for o in 0..outer {
                        let dst = (o * full + start) * inner;
                        let src = o * len * inner;
                        for t in 0..len * inner {
                            dx[dst + t] += g[src + t];
                        }
                    }
                });
            }
            Op::Reshape { x } => {
                acc(grads, *x, &mut |dx| {
                    for (d, &gv) in dx.iter_mut().zip(g) {
                        *d += gv;
                    }
                });
            }
            Op::GatherRows { x, idx } => {
                let cols = node.shape[1];
                acc(grads, *x, &mut |dx| {
                    for (o, &i) in idx.iter().enumerate() {
                        for c in 0..cols {
                            dx[i * cols + c] += g[o * cols + c];
                        }
                    }
                });
            }
            Op::NeighborMax { x, argmax } => {
                let cols = node.shape[1];
                acc(grads, *x, &mut |dx| {
                    for (slot, &row) in argmax.iter().enumerate() {
                        if row != u32::MAX {
                            let c = slot % cols;
                            dx[row as usize * cols + c] += g[slot];
                        }
                    }
                });
            }
            Op::ScaleRows { x, z } => {
                let (vx, vz) = (&self.nodes[x.0].values, &self.nodes[z.0].values);
                let cols = node.shape[1];
                acc(grads, *x, &mut |dx| {
                    for r in 0..node.shape[0] {
                        for c in 0..cols {
                            dx[r * cols + c] += g[r * cols + c] * vz[r];
                        }
                    }
                });
                acc(grads, *z, &mut |dz| {
                    for r in 0..node.shape[0] {
                        let mut s = 0.0;
                        for c in 0..cols {
                            s += g[r * cols + c] * vx[r * cols + c];
                        }
                        dz[r] += s;
                    }
                });
            }
            Op::AddRowVec { x, v } => {
                let cols = node.shape[1];
                acc(grads, *x, &mut |dx| {
                    for (d, &gv) in dx.iter_mut().zip(g) {
                        *d += gv;
                    }
                });
                acc(grads, *v, &mut |dv| {
                    for r in 0..node.shape[0] {
                        for c in 0..cols {
                            dv[c] += g[r * cols + c];
                        }
                    }
                });
            }
            Op::MeanPoolRows { x, group } => {
                let cols = node.shape[1];
                let s = 1.0 / *group as f64;
                acc(grads, *x, &mut |dx| {
                    for gr in 0..node.shape[0] {
                        for r in 0..*group {
                            for c in 0..cols {
                                dx[(gr * group + r) * cols + c] += g[gr * cols + c] * s;
                            }
                        }
                    }
                });
            }
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                softmax,
            } => {
                let cols = self.nodes[logits.0].shape[1];
                let rows = targets.len();
                let scale = g[0] / rows as f64;
                acc(grads, *logits, &mut |dl| {
                    for r in 0..rows {
                        for c in 0..cols {
                            let y = if targets[r] == c { 1.0 } else { 0.0 };
                            dl[r * cols + c] += (softmax[r * cols + c] - y) * scale;
                        }
                    }
                });
            }
        }
    }
}

fn side_is_scalar(bc: Broadcast, lhs: bool) -> bool {
    matches!(
        (bc, lhs),
        (Broadcast::ScalarLhs, true) | (Broadcast::ScalarRhs, false)
    )
}

fn add_grad(dst: &mut [f64], g: &[f64], scalar: bool) {
    if scalar {
        dst[0] += g.iter().sum::<f64>();
    } else {
        for (d, &gv) in dst.iter_mut().zip(g) {
            *d += gv;
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul { .. } => "matmul",
        Op::Transpose { .. } => "transpose",
        Op::Add { .. } => "add",
        Op::Sub { .. } => "sub",
        Op::Mul { .. } => "mul",
        Op::Relu { .. } => "relu",
        Op::Sigmoid { .. } => "sigmoid",
        Op::Tanh { .. } => "tanh",
        Op::Exp { .. } => "exp",
        Op::Log { .. } => "log",
        Op::Reduce { .. } => "reduce",
        Op::Concat { .. } => "concat",
        Op::Narrow { .. } => "narrow",
        Op::Reshape { .. } => "reshape",
        Op::GatherRows { .. } => "gather_rows",
        Op::NeighborMax { .. } => "neighbor_max",
        Op::ScaleRows { .. } => "scale_rows",
        Op::AddRowVec { .. } => "add_row_vector",
        Op::MeanPoolRows { .. } => "mean_pool_rows",
        Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
    }
}

/// C = A·B with A `[m,k]`, B `[k,n]`.
pub(crate) fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// C += A·Bᵀ with A `[m,n]`, B `[k,n]`, C `[m,k]`.
fn matmul_nt_acc(a: &[f64], b: &[f64], m: usize, n: usize, k: usize, c: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            let mut s = 0.0;
            for (&av, &bv) in arow.iter().zip(brow) {
                s += av * bv;
            }
            c[i * k + j] += s;
        }
    }
}

/// C += Aᵀ·B with A `[m,k]`, B `[m,n]`, C `[k,n]`.
fn matmul_tn_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

fn transpose_vals(v: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = v[i * c + j];
        }
    }
    out
}

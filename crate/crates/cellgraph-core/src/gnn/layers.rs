//! GraphSAGE convolution, self-attention pooling, and readout.

use crate::error::Result;
use crate::graph::{adjacency_powers, EdgeList};
use crate::tensor::{NodeId, Tape};

/// Max-aggregation GraphSAGE step:
/// `a_v = max_{u∈N(v)} ReLU(W_agg·h_u)`, empty neighborhoods take zero;
/// `h'_v = W_upd·[h_v ‖ a_v]`.
///
/// `w_agg` is `[d_in, d_agg]`, `w_upd` is `[d_in + d_agg, d_out]`.
pub fn sage_conv(
    tape: &mut Tape,
    h: NodeId,
    neighbors: &[Vec<u32>],
    w_agg: NodeId,
    w_upd: NodeId,
) -> Result<NodeId> {
    let m = tape.matmul(h, w_agg)?;
    let m = tape.relu(m)?;
    let agg = tape.neighbor_max(m, neighbors)?;
    let cat = tape.concat(&[h, agg], 1)?;
    tape.matmul(cat, w_upd)
}

/// Result of one pooling level. `kept` holds original node ids in
/// ascending order; `edges` is the induced, reindexed subgraph.
pub struct PoolOutcome {
    pub x: NodeId,
    pub edges: EdgeList,
    pub kept: Vec<u32>,
    /// Attention score per original node, in node order.
    pub scores: Vec<f64>,
}

/// Self-attention pooling: scores come from a single-output [`sage_conv`]
/// over the A + A² neighbor structure, squashed by sigmoid (or tanh);
/// the top ⌈ratio·N⌉ nodes survive with their features gated by the score.
/// Score ties resolve toward the lower node id.
pub fn sag_pool(
    tape: &mut Tape,
    x: NodeId,
    edges: &EdgeList,
    ratio: f64,
    w_agg: NodeId,
    w_upd: NodeId,
    sigmoid: bool,
) -> Result<PoolOutcome> {
    let n = edges.node_count();
    let two_hop = adjacency_powers(edges).two_hop_lists();
    let z_lin = sage_conv(tape, x, &two_hop, w_agg, w_upd)?;
    let z = if sigmoid {
        tape.sigmoid(z_lin)?
    } else {
        tape.tanh(z_lin)?
    };
    let scores = tape.values(z).to_vec();

    let keep_n = ((ratio * n as f64).ceil() as usize).clamp(1, n);
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_by(|&a, &b| {
        scores[b as usize]
            .total_cmp(&scores[a as usize])
            .then(a.cmp(&b))
    });
    let mut kept: Vec<u32> = order[..keep_n].to_vec();
    kept.sort_unstable();

    let kept_usize: Vec<usize> = kept.iter().map(|&i| i as usize).collect();
    let x_kept = tape.gather_rows(x, &kept_usize)?;
    let z_kept = tape.gather_rows(z, &kept_usize)?;
    let gated = tape.scale_rows(x_kept, z_kept)?;
    let sub_edges = edges.induced(&kept)?;
    Ok(PoolOutcome {
        x: gated,
        edges: sub_edges,
        kept,
        scores,
    })
}

/// Permutation-invariant graph summary: columnwise mean ‖ columnwise max,
/// shaped `[1, 2d]`.
pub fn readout(tape: &mut Tape, x: NodeId) -> Result<NodeId> {
    let d = tape.shape(x)[1];
    let mean = tape.mean(x, Some(0))?;
    let max = tape.max(x, Some(0))?;
    let cat = tape.concat(&[mean, max], 0)?;
    tape.reshape(cat, vec![1, 2 * d])
}

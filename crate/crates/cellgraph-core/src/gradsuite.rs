//! The full gradient-verification suite: every tape operation, the CPC
//! stack on a tiny configuration, and the complete GNN forward pass, each
//! checked against central finite differences over many seeds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cpc;
use crate::error::Result;
use crate::gnn::{self, ForwardMode, GnnConfig};
use crate::graph::{knn_graph, CellGraph, Centroid, RiskLabel};
use crate::tensor::{gradcheck, NodeId, Tape, Tensor, DEFAULT_STEP};

pub const OP_TOLERANCE: f64 = 1e-5;
pub const CPC_TOLERANCE: f64 = 1e-4;
pub const GNN_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub tolerance: f64,
    pub max_rel_err: f64,
    pub coords_checked: usize,
    pub coords_skipped: usize,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub seeds: u64,
    pub checks: Vec<CheckOutcome>,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// One line per check: PASS/FAIL, name, worst relative error.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "{} {:<28} max_rel_err {:.3e} (tol {:.0e}, {} coords, {} skipped)\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.max_rel_err,
                c.tolerance,
                c.coords_checked,
                c.coords_skipped,
            ));
        }
        out
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
    )
    .expect("shape matches")
}

/// Keeps pre-activation values away from the ReLU kink at the probe step.
fn rand_tensor_off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let values = (0..n)
        .map(|_| {
            let mag = rng.gen_range(0.05..1.2);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), values).expect("shape matches")
}

type CheckFn = fn(u64) -> Result<crate::tensor::GradCheckReport>;

fn scalarize(tape: &mut Tape, id: NodeId) -> Result<NodeId> {
    let t = tape.tanh(id)?;
    tape.sum(t, None)
}

fn check_matmul(seed: u64) -> Result<crate::tensor::GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[4, 2], -1.0, 1.0);
    gradcheck(
        |tape, ids| {
            let c = tape.matmul(ids[0], ids[1])?;
            scalarize(tape, c)
        },
        &[a, b],
        DEFAULT_STEP,
    )
}

fn check_binary_ops(seed: u64) -> Result<crate::tensor::GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = rand_tensor(&mut rng, &[3, 3], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[3, 3], -1.0, 1.0);
    let s = rand_tensor(&mut rng, &[], 0.2, 1.5);
    gradcheck(
        |tape, ids| {
            let sum = tape.add(ids[0], ids[1])?;
            let diff = tape.sub(sum, ids[1])?;
            let prod = tape.mul(diff, ids[1])?;
            let scaled = tape.mul(prod, ids[2])?;
            let shifted = tape.add(scaled, ids[2])?;
            scalarize(tape, shifted)
        },
        &[a, b, s],
        DEFAULT_STEP,
    )
}

fn check_unary_ops(seed: u64) -> Result<crate::tensor::GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = rand_tensor_off_kink(&mut rng, &[4, 3]);
    let pos = rand_tensor(&mut rng, &[6], 0.3, 3.0);
    gradcheck(
        |tape, ids| {
            let r = tape.relu(ids[0])?;
            let sg = tape.sigmoid(r)?;
            let th = tape.tanh(sg)?;
            let e = tape.exp(th)?;
            let l = tape.log(ids[1])?;
            let a = tape.sum(e, None)?;
            let b = tape.sum(l, None)?;
            tape.add(a, b)
        },
        &[x, pos],
        DEFAULT_STEP,
    )
}

fn check_reductions(seed: u64) -> Result<crate::tensor::GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = rand_tensor(&mut rng, &[4, 5], -2.0, 2.0);
    gradcheck(
        |tape, ids| {
            let s0 = tape.sum(ids[0], Some(0))?;
            let m1 = tape.mean(ids[0], Some(1))?;
            let mx = tape.max(ids[0], Some(1))?;
            let a = tape.sum(s0, None)?;
            let b = tape.sum(m1, None)?;
            let c = tape.sum(mx, None)?;
            let ab = tape.add(a, b)?;
            let abc = tape.add(ab, c)?;
            let g = tape.max(ids[0], None)?;
            tape.add(abc, g)
        },
        &[x],
        DEFAULT_STEP,
    )
}

fn check_shape_ops(seed: u64) -> Result<crate::tensor::GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = rand_tensor(&mut rng, &[3, 2], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
    gradcheck(
        |tape, ids| {
            let cat = tape.concat(&[ids[0], ids[1]], 1)?;
            let narrowed = tape.narrow(cat, 1, 1, 4)?;
            let t = tape.transpose(narrowed)?;
            let r = tape.reshape(t, vec![2, 6])?;
            scalarize(tape, r)
        },
        &[a, b],
        DEFAULT_STEP,
    )
}

fn check_gather_and_pool(seed: u64) -> Result<crate::tensor::GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = rand_tensor(&mut rng, &[6, 3], -1.0, 1.0);
    let z = rand_tensor(&mut rng, &[4], 0.2, 1.0);
    let v = rand_tensor(&mut rng, &[3], -0.5, 0.5);
    gradcheck(
        |tape, ids| {
            // Duplicate index exercises scatter-add.
            let g = tape.gather_rows(ids[0], &[0, 2, 2, 5])?;
            let sc = tape.scale_rows(g, ids[1])?;
            let av = tape.add_row_vector(sc, ids[2])?;
            let mp = tape.mean_pool_rows(av, 2)?;
            scalarize(tape, mp)
        },
        &[x, z, v],
        DEFAULT_STEP,
    )
}

fn check_neighbor_max(seed: u64) -> Result<crate::tensor::GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = rand_tensor(&mut rng, &[5, 4], -1.0, 1.0);
    let mut neighbors: Vec<Vec<u32>> = Vec::new();
    neighbors.push(vec![]); // empty neighborhood stays on the suite
    for _ in 1..5 {
        let deg = rng.gen_range(1..4);
        let mut list: Vec<u32> = (0..deg).map(|_| rng.gen_range(0..5u32)).collect();
        list.sort_unstable();
        list.dedup();
        neighbors.push(list);
    }
    gradcheck(
        move |tape, ids| {
            let nm = tape.neighbor_max(ids[0], &neighbors)?;
            scalarize(tape, nm)
        },
        &[x],
        DEFAULT_STEP,
    )
}

fn check_cross_entropy(seed: u64) -> Result<crate::tensor::GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logits = rand_tensor(&mut rng, &[4, 3], -2.0, 2.0);
    let targets: Vec<usize> = (0..4).map(|_| rng.gen_range(0..3)).collect();
    gradcheck(
        move |tape, ids| tape.softmax_cross_entropy(ids[0], &targets),
        &[logits],
        DEFAULT_STEP,
    )
}

fn check_cpc_stack(seed: u64) -> Result<crate::tensor::GradCheckReport> {
    let config = cpc::CpcConfig {
        dz: 4,
        dc: 4,
        hidden: 6,
        k_max: 2,
        negatives: 3,
        cell: 8,
        cell_stride: 4,
        window: 16,
        seed,
        ..Default::default()
    };
    let model = cpc::CpcModel::init(config.clone())?;
    // Zero-init prediction weights give zero gradients into the encoder on
    // the candidate side; perturb them so every path carries signal.
    let mut params = model.params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FFEE);
    for k in 1..=config.k_max {
        let name = format!("pred.w{k}");
        let shape = params.get(&name)?.shape().to_vec();
        params.insert(name, rand_tensor(&mut rng, &shape, -0.4, 0.4));
    }
    let grids = cpc::probe_patches(2, 16, 8, 4, seed.wrapping_add(11))?;
    let batch = cpc::assemble_infonce(2, grids[0].rows, &config, &mut rng)?;

    let names: Vec<String> = params.names().map(String::from).collect();
    let tensors: Vec<Tensor> = names
        .iter()
        .map(|n| params.get(n).unwrap().clone())
        .collect();
    let grid_refs: Vec<&cpc::PatchGrid> = grids.iter().collect();
    gradcheck(
        move |tape, ids| {
            let mut id_map = std::collections::BTreeMap::new();
            for (name, &id) in names.iter().zip(ids) {
                id_map.insert(name.clone(), id);
            }
            let (rows, cols, cd) = (
                grid_refs[0].rows,
                grid_refs[0].cols,
                grid_refs[0].cell_dim(),
            );
            let mut cells = Vec::new();
            for g in &grid_refs {
                cells.extend_from_slice(&g.cells);
            }
            let cells = tape.leaf(&Tensor::new(
                vec![grid_refs.len() * rows * cols, cd],
                cells,
            )?)?;
            let latents = cpc::encode_cells(tape, &id_map, cells)?;
            let pooled = tape.mean_pool_rows(latents, cols)?;
            let contexts = cpc::context_rows(tape, &id_map, pooled, grid_refs.len(), rows, 4)?;
            cpc::info_nce_loss(tape, &id_map, pooled, contexts, &batch, 2)
        },
        &tensors,
        DEFAULT_STEP,
    )
}

fn check_gnn_forward(seed: u64) -> Result<crate::tensor::GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(5..8);
    let points: Vec<Centroid> = (0..n as u32)
        .map(|id| Centroid {
            id,
            x: rng.gen_range(0.0..80.0),
            y: rng.gen_range(0.0..80.0),
        })
        .collect();
    let edges = knn_graph(&points, 2, 60.0)?;
    let f_dim = 5;
    let graph = CellGraph::new(
        "gradcheck".into(),
        if seed.is_multiple_of(2) {
            RiskLabel::Low
        } else {
            RiskLabel::High
        },
        f_dim,
        (0..n * f_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        points.iter().map(|p| (p.x, p.y)).collect(),
        edges,
    )?;
    let config = GnnConfig {
        blocks: 2,
        hidden: 6,
        head_hidden: 4,
        seed,
        ..Default::default()
    };
    let params = gnn::init_params(f_dim, &config)?;
    let names: Vec<String> = params.names().map(String::from).collect();
    let tensors: Vec<Tensor> = names
        .iter()
        .map(|n| params.get(n).unwrap().clone())
        .collect();
    let target = graph.label.class_index();
    gradcheck(
        move |tape, ids| {
            let mut id_map = std::collections::BTreeMap::new();
            for (name, &id) in names.iter().zip(ids) {
                id_map.insert(name.clone(), id);
            }
            let fwd = gnn::forward(tape, &id_map, &graph, &config, &mut ForwardMode::Eval)?;
            tape.softmax_cross_entropy(fwd.logits, &[target])
        },
        &tensors,
        DEFAULT_STEP,
    )
}

/// Runs every check over `seeds` random seeds and reports the worst case.
pub fn run_full_gradcheck(seeds: u64) -> Result<SuiteReport> {
    let checks: Vec<(&str, CheckFn, f64)> = vec![
        ("op.matmul", check_matmul, OP_TOLERANCE),
        ("op.add_sub_mul", check_binary_ops, OP_TOLERANCE),
        (
            "op.relu_sigmoid_tanh_exp_log",
            check_unary_ops,
            OP_TOLERANCE,
        ),
        ("op.reduce_sum_mean_max", check_reductions, OP_TOLERANCE),
        ("op.concat_narrow_transpose", check_shape_ops, OP_TOLERANCE),
        ("op.gather_scale_pool", check_gather_and_pool, OP_TOLERANCE),
        ("op.neighbor_max", check_neighbor_max, OP_TOLERANCE),
        (
            "op.softmax_cross_entropy",
            check_cross_entropy,
            OP_TOLERANCE,
        ),
        ("cpc.stack", check_cpc_stack, CPC_TOLERANCE),
        ("gnn.forward", check_gnn_forward, GNN_TOLERANCE),
    ];
    let mut outcomes = Vec::new();
    for (name, check, tolerance) in checks {
        let mut worst = 0.0f64;
        let mut checked = 0usize;
        let mut skipped = 0usize;
        for seed in 0..seeds {
            let report = check(seed)?;
            worst = worst.max(report.max_rel_err);
            checked += report.checked;
            skipped += report.skipped;
        }
        outcomes.push(CheckOutcome {
            name: name.to_string(),
            tolerance,
            max_rel_err: worst,
            coords_checked: checked,
            coords_skipped: skipped,
            passed: checked > 0 && worst < tolerance,
        });
    }
    Ok(SuiteReport {
        seeds,
        checks: outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suite_passes_on_two_seeds() {
        let report = run_full_gradcheck(2).unwrap();
        assert!(report.all_passed(), "\n{}", report.render());
        assert_eq!(report.checks.len(), 10);
    }
}

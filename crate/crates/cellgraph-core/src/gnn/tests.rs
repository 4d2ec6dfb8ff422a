use super::*;
use crate::graph::{knn_graph, Centroid, EdgeList, RiskLabel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn graph_of(f_dim: usize, features: Vec<f64>, pairs: Vec<(u32, u32)>) -> CellGraph {
    let n = features.len() / f_dim;
    CellGraph::new(
        "test".into(),
        RiskLabel::Low,
        f_dim,
        features,
        (0..n).map(|i| (i as f64, 0.0)).collect(),
        EdgeList::new(n, pairs).unwrap(),
    )
    .unwrap()
}

pub(crate) fn random_graph(rng: &mut ChaCha8Rng, n: usize, f_dim: usize) -> CellGraph {
    let points: Vec<Centroid> = (0..n as u32)
        .map(|id| Centroid {
            id,
            x: rng.gen_range(0.0..120.0),
            y: rng.gen_range(0.0..120.0),
        })
        .collect();
    let edges = knn_graph(&points, 3, 60.0).unwrap();
    let features = (0..n * f_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    CellGraph::new(
        "rand".into(),
        RiskLabel::High,
        f_dim,
        features,
        points.iter().map(|p| (p.x, p.y)).collect(),
        edges,
    )
    .unwrap()
}

/// Relabels node `i` as `perm[i]`.
pub(crate) fn permute_graph(g: &CellGraph, perm: &[usize]) -> CellGraph {
    let n = g.n_nodes;
    let mut features = vec![0.0; g.features.len()];
    let mut positions = vec![(0.0, 0.0); n];
    for (old, &new) in perm.iter().enumerate() {
        features[new * g.f_dim..(new + 1) * g.f_dim].copy_from_slice(g.feature_row(old));
        positions[new] = g.positions[old];
    }
    let pairs: Vec<(u32, u32)> = g
        .edges
        .pairs()
        .iter()
        .map(|&(u, v)| (perm[u as usize] as u32, perm[v as usize] as u32))
        .collect();
    CellGraph::new(
        g.source_id.clone(),
        g.label,
        g.f_dim,
        features,
        positions,
        EdgeList::new(n, pairs).unwrap(),
    )
    .unwrap()
}

fn stage(params: &ParamSet, tape: &mut Tape) -> BTreeMap<String, NodeId> {
    params.stage(tape).unwrap()
}

#[test]
fn sage_conv_hand_example() {
    // 2 nodes, d = 1, W_agg = [1], W_upd = [1, 1]ᵀ, features (2, −3):
    // node0 → 2 + max(ReLU(−3)) = 2, node1 → −3 + max(ReLU(2)) = −1.
    let mut tape = Tape::new();
    let h = tape.leaf_values(vec![2, 1], vec![2.0, -3.0]).unwrap();
    let w_agg = tape.leaf_values(vec![1, 1], vec![1.0]).unwrap();
    let w_upd = tape.leaf_values(vec![2, 1], vec![1.0, 1.0]).unwrap();
    let out = sage_conv(&mut tape, h, &[vec![1], vec![0]], w_agg, w_upd).unwrap();
    assert_eq!(tape.values(out), &[2.0, -1.0]);
}

#[test]
fn isolated_node_aggregates_zero() {
    let mut tape = Tape::new();
    let h = tape.leaf_values(vec![1, 2], vec![3.0, -4.0]).unwrap();
    let w_agg = tape
        .leaf_values(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0])
        .unwrap();
    // W_upd picks out [h ‖ a] verbatim (4×4 identity → d_out 4).
    let eye4: Vec<f64> = (0..16)
        .map(|i| if i % 5 == 0 { 1.0 } else { 0.0 })
        .collect();
    let w_upd = tape.leaf_values(vec![4, 4], eye4).unwrap();
    let out = sage_conv(&mut tape, h, &[vec![]], w_agg, w_upd).unwrap();
    assert_eq!(tape.values(out), &[3.0, -4.0, 0.0, 0.0]);
}

#[test]
fn sage_conv_is_permutation_equivariant() {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let g = random_graph(&mut rng, 12, 4);
    let config = GnnConfig {
        blocks: 1,
        hidden: 5,
        ..Default::default()
    };
    let params = init_params(4, &config).unwrap();

    let run = |g: &CellGraph| -> Vec<f64> {
        let mut tape = Tape::new();
        let ids = stage(&params, &mut tape);
        let x = tape
            .leaf_values(vec![g.n_nodes, g.f_dim], g.features.clone())
            .unwrap();
        let out = sage_conv(
            &mut tape,
            x,
            &g.edges.neighbor_lists(),
            ids["sage0.w_agg"],
            ids["sage0.w_upd"],
        )
        .unwrap();
        tape.values(out).to_vec()
    };

    let base = run(&g);
    let mut perm: Vec<usize> = (0..g.n_nodes).collect();
    perm.shuffle(&mut rng);
    let permuted = run(&permute_graph(&g, &perm));
    for old in 0..g.n_nodes {
        let new = perm[old];
        assert_eq!(
            &base[old * 5..(old + 1) * 5],
            &permuted[new * 5..(new + 1) * 5]
        );
    }
}

#[test]
fn sag_pool_ratio_one_keeps_and_gates_everything() {
    let g = graph_of(2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0], vec![(0, 1), (1, 2)]);
    let config = GnnConfig {
        hidden: 2,
        ..Default::default()
    };
    let params = init_params(2, &config).unwrap();
    let mut tape = Tape::new();
    let ids = stage(&params, &mut tape);
    let x = tape.leaf_values(vec![3, 2], g.features.clone()).unwrap();
    let out = sag_pool(
        &mut tape,
        x,
        &g.edges,
        1.0,
        ids["pool0.w_agg"],
        ids["pool0.w_upd"],
        true,
    )
    .unwrap();
    assert_eq!(out.kept, vec![0, 1, 2]);
    assert_eq!(out.edges, g.edges);
    let gated = tape.values(out.x);
    for v in 0..3 {
        for d in 0..2 {
            let want = g.features[v * 2 + d] * out.scores[v];
            assert!((gated[v * 2 + d] - want).abs() < 1e-15);
        }
    }
}

#[test]
fn sag_pool_four_node_path_fixture() {
    // Path 0–1–2–3, d = 1, features (1, 2, 3, 4). Score conv uses the
    // two-hop structure; with W_agg = [1], W_upd = [0, 1]ᵀ the raw score is
    // max over two-hop neighbors of ReLU(h): (3, 4, 4, 3). Top-2 after the
    // sigmoid is the tie (1, 2), resolved toward lower ids.
    let mut tape = Tape::new();
    let x = tape
        .leaf_values(vec![4, 1], vec![1.0, 2.0, 3.0, 4.0])
        .unwrap();
    let w_agg = tape.leaf_values(vec![1, 1], vec![1.0]).unwrap();
    let w_upd = tape.leaf_values(vec![2, 1], vec![0.0, 1.0]).unwrap();
    let edges = EdgeList::new(4, vec![(0, 1), (1, 2), (2, 3)]).unwrap();
    let out = sag_pool(&mut tape, x, &edges, 0.5, w_agg, w_upd, true).unwrap();

    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let want_scores = [sig(3.0), sig(4.0), sig(4.0), sig(3.0)];
    for (a, b) in out.scores.iter().zip(&want_scores) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(out.kept, vec![1, 2]);
    assert_eq!(out.edges.pairs(), &[(0, 1)]);
    let gated = tape.values(out.x);
    assert!((gated[0] - 2.0 * sig(4.0)).abs() < 1e-12);
    assert!((gated[1] - 3.0 * sig(4.0)).abs() < 1e-12);
}

#[test]
fn sag_pool_single_node_survives_any_ratio() {
    let mut tape = Tape::new();
    let x = tape.leaf_values(vec![1, 2], vec![5.0, 6.0]).unwrap();
    let w_agg = tape.leaf_values(vec![2, 1], vec![0.1, 0.2]).unwrap();
    let w_upd = tape.leaf_values(vec![3, 1], vec![0.3, 0.1, 0.2]).unwrap();
    let edges = EdgeList::empty(1);
    let out = sag_pool(&mut tape, x, &edges, 0.05, w_agg, w_upd, true).unwrap();
    assert_eq!(out.kept, vec![0]);
}

#[test]
fn readout_fixtures() {
    let mut tape = Tape::new();
    let single = tape.leaf_values(vec![1, 3], vec![1.0, -2.0, 5.0]).unwrap();
    let r1 = readout(&mut tape, single).unwrap();
    assert_eq!(tape.shape(r1), &[1, 6]);
    assert_eq!(tape.values(r1), &[1.0, -2.0, 5.0, 1.0, -2.0, 5.0]);

    let two = tape.leaf_values(vec![2, 1], vec![0.0, 2.0]).unwrap();
    let r2 = readout(&mut tape, two).unwrap();
    assert_eq!(tape.values(r2), &[1.0, 2.0]);
}

#[test]
fn readout_is_permutation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let vals: Vec<f64> = (0..5 * 3).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let mut tape = Tape::new();
    let x = tape.leaf_values(vec![5, 3], vals.clone()).unwrap();
    let rx = readout(&mut tape, x).unwrap();
    let base = tape.values(rx).to_vec();

    let mut shuffled = vals.clone();
    shuffled.rotate_left(6); // row rotation by 2
    let y = tape.leaf_values(vec![5, 3], shuffled).unwrap();
    let ry = readout(&mut tape, y).unwrap();
    let rot = tape.values(ry).to_vec();
    for (a, b) in base.iter().zip(&rot) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn zero_head_weights_give_zero_logits_and_class_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = random_graph(&mut rng, 9, 5);
    let config = GnnConfig {
        hidden: 6,
        head_hidden: 4,
        ..Default::default()
    };
    let mut params = init_params(5, &config).unwrap();
    for name in ["head.w2", "head.b2"] {
        let shape = params.get(name).unwrap().shape().to_vec();
        *params.get_mut(name).unwrap() = Tensor::zeros(&shape).with_grad();
    }
    let mut tape = Tape::new();
    let ids = stage(&params, &mut tape);
    let fwd = forward(&mut tape, &ids, &g, &config, &mut ForwardMode::Eval).unwrap();
    assert_eq!(tape.values(fwd.logits), &[0.0, 0.0]);
    assert_eq!(predict(tape.values(fwd.logits)), 0);
}

#[test]
fn forward_is_deterministic_in_eval_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let g = random_graph(&mut rng, 15, 6);
    let config = GnnConfig {
        hidden: 8,
        head_hidden: 8,
        ..Default::default()
    };
    let params = init_params(6, &config).unwrap();
    let run = || {
        let mut tape = Tape::new();
        let ids = stage(&params, &mut tape);
        let fwd = forward(&mut tape, &ids, &g, &config, &mut ForwardMode::Eval).unwrap();
        tape.values(fwd.logits).to_vec()
    };
    let (a, b) = (run(), run());
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

fn all_scores_distinct(fwd: &GnnForward) -> bool {
    fwd.pool_scores.iter().all(|level| {
        let mut sorted = level.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.windows(2).all(|w| w[0] != w[1])
    })
}

#[test]
fn logits_are_invariant_under_node_relabeling() {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let config = GnnConfig {
        hidden: 8,
        head_hidden: 8,
        ..Default::default()
    };
    let params = init_params(6, &config).unwrap();
    let mut tested = 0;
    while tested < 10 {
        let n = rng.gen_range(6..20);
        let g = random_graph(&mut rng, n, 6);
        let mut tape = Tape::new();
        let ids = stage(&params, &mut tape);
        let fwd = forward(&mut tape, &ids, &g, &config, &mut ForwardMode::Eval).unwrap();
        if !all_scores_distinct(&fwd) {
            continue;
        }
        let base = tape.values(fwd.logits).to_vec();

        let mut perm: Vec<usize> = (0..g.n_nodes).collect();
        perm.shuffle(&mut rng);
        let pg = permute_graph(&g, &perm);
        let mut tape2 = Tape::new();
        let ids2 = stage(&params, &mut tape2);
        let fwd2 = forward(&mut tape2, &ids2, &pg, &config, &mut ForwardMode::Eval).unwrap();
        let got = tape2.values(fwd2.logits).to_vec();
        for (a, b) in base.iter().zip(&got) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        tested += 1;
    }
}

#[test]
fn dropout_masks_only_in_training_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = random_graph(&mut rng, 8, 4);
    let config = GnnConfig {
        hidden: 4,
        head_hidden: 32,
        dropout: 0.5,
        ..Default::default()
    };
    let params = init_params(4, &config).unwrap();
    let eval = {
        let mut tape = Tape::new();
        let ids = stage(&params, &mut tape);
        let fwd = forward(&mut tape, &ids, &g, &config, &mut ForwardMode::Eval).unwrap();
        tape.values(fwd.logits).to_vec()
    };
    let mut drop_rng = ChaCha8Rng::seed_from_u64(1);
    let train = {
        let mut tape = Tape::new();
        let ids = stage(&params, &mut tape);
        let fwd = forward(
            &mut tape,
            &ids,
            &g,
            &config,
            &mut ForwardMode::Train {
                dropout_rng: &mut drop_rng,
            },
        )
        .unwrap();
        tape.values(fwd.logits).to_vec()
    };
    assert_ne!(eval, train, "a 0.5 dropout mask should perturb the logits");
}

#[test]
fn predict_and_prob() {
    assert_eq!(predict(&[0.0, 0.0]), 0);
    assert_eq!(predict(&[1.0, 3.0]), 1);
    assert!((prob_high(&[0.0, 0.0]) - 0.5).abs() < 1e-15);
    assert!(prob_high(&[-20.0, 20.0]) > 0.999);
}

#[test]
fn config_validation() {
    let bad_ratio = |r| GnnConfig {
        ratio: r,
        ..Default::default()
    };
    assert!(bad_ratio(0.0).validate().is_err());
    assert!(bad_ratio(1.5).validate().is_err());
    let bad_dropout = GnnConfig {
        dropout: 1.0,
        ..Default::default()
    };
    assert!(bad_dropout.validate().is_err());
    assert!(GnnConfig::default().validate().is_ok());
}

#[test]
fn param_shapes_line_up_with_config() {
    let config = GnnConfig {
        blocks: 2,
        hidden: 6,
        head_hidden: 5,
        ..Default::default()
    };
    let params = init_params(10, &config).unwrap();
    assert_eq!(params.get("sage0.w_agg").unwrap().shape(), &[10, 6]);
    assert_eq!(params.get("sage0.w_upd").unwrap().shape(), &[16, 6]);
    assert_eq!(params.get("sage1.w_agg").unwrap().shape(), &[6, 6]);
    assert_eq!(params.get("pool1.w_upd").unwrap().shape(), &[7, 1]);
    assert_eq!(params.get("head.w1").unwrap().shape(), &[12, 5]);
    assert_eq!(params.get("head.w2").unwrap().shape(), &[5, 2]);
    assert!(validate_params(10, &config, &params).is_ok());
    assert!(validate_params(11, &config, &params).is_err());
}

//! File-level integration: the pipeline stages against real artifacts,
//! plus the shuffled-label training control.

use cellgraph_core::config::RunConfig;
use cellgraph_core::graph::CellGraph;
use cellgraph_core::metrics::{auc, sample_std};
use cellgraph_core::pipeline::{self, Progress};
use cellgraph_core::train::{evaluate_graphs, train_gnn};

const QUIET: Progress = Progress(false);

/// Small synthetic dataset without CPC features, built once per test.
fn small_run(per_class: usize, seed: u64) -> (tempfile::TempDir, RunConfig) {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig {
        data_root: Some(dir.path().join("data")),
        out_dir: dir.path().join("out"),
        seed,
        ..Default::default()
    };
    cfg.synth.per_class = per_class;
    cfg.synth.side = 256;
    cfg.features.use_cpc = false;
    cfg.train.epochs = 10;
    cfg.train.patience = 4;
    cfg.normalize();
    pipeline::run_synth(&cfg, QUIET).unwrap();
    pipeline::run_build_graphs(&cfg, QUIET, false).unwrap();
    (dir, cfg)
}

#[test]
fn trained_auc_beats_label_shuffled_control_by_three_sigma() {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let (_dir, cfg) = small_run(14, 3);
    let graphs = pipeline::load_graphs(&cfg).unwrap();
    let f_dim = cfg.f_dim();

    // Deterministic split: evens train, odds validate.
    let train: Vec<&CellGraph> = graphs.iter().step_by(2).collect();
    let val: Vec<&CellGraph> = graphs.iter().skip(1).step_by(2).collect();

    let real = train_gnn(&train, &val, f_dim, &cfg.gnn, &cfg.train, 11).unwrap();
    let real_auc = evaluate_graphs(&real.params, &cfg.gnn, &val)
        .unwrap()
        .auc
        .unwrap();

    // Shuffled-label controls: same graphs, labels permuted.
    let mut control_aucs = Vec::new();
    for trial in 0..5u64 {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1000 + trial);
        let mut shuffled: Vec<CellGraph> = train.iter().map(|g| (*g).clone()).collect();
        let mut labels: Vec<_> = shuffled.iter().map(|g| g.label).collect();
        labels.shuffle(&mut rng);
        for (g, l) in shuffled.iter_mut().zip(labels) {
            g.label = l;
        }
        let refs: Vec<&CellGraph> = shuffled.iter().collect();
        let out = train_gnn(&refs, &val, f_dim, &cfg.gnn, &cfg.train, 1000 + trial).unwrap();
        control_aucs.push(
            evaluate_graphs(&out.params, &cfg.gnn, &val)
                .unwrap()
                .auc
                .unwrap(),
        );
    }
    let sigma = sample_std(&control_aucs);
    assert!(
        real_auc > 0.5 + 3.0 * sigma,
        "real AUC {real_auc} must exceed 0.5 + 3σ of shuffled controls (σ = {sigma}, controls {control_aucs:?})"
    );
}

#[test]
fn fold_training_artifacts_reproduce_through_files() {
    let (_dir, cfg) = small_run(12, 9);
    let metrics = pipeline::run_train_fold(&cfg, 0, QUIET).unwrap();

    // Evaluating the persisted checkpoint on the same fold reproduces the
    // fold metrics exactly.
    let ckpt = pipeline::gnn_checkpoint_path(&cfg, 0);
    let eval = pipeline::run_eval(&cfg, &ckpt, Some(0)).unwrap();
    assert_eq!(eval.n_graphs, metrics.n_test);
    assert_eq!(eval.accuracy.to_bits(), metrics.accuracy.to_bits());
    assert_eq!(eval.auc.map(f64::to_bits), metrics.auc.map(f64::to_bits));

    // Checkpoint bytes are bit-stable across a retrain with the same seed.
    let bytes_a = std::fs::read(&ckpt).unwrap();
    pipeline::run_train_fold(&cfg, 0, QUIET).unwrap();
    let bytes_b = std::fs::read(&ckpt).unwrap();
    assert_eq!(bytes_a, bytes_b);
}

#[test]
fn exported_roc_integrates_to_the_evaluated_auc() {
    let (dir, cfg) = small_run(12, 21);
    pipeline::run_train_fold(&cfg, 1, QUIET).unwrap();
    let ckpt = pipeline::gnn_checkpoint_path(&cfg, 1);
    let out = dir.path().join("roc.tsv");
    pipeline::run_roc(&cfg, &ckpt, &out, Some(1)).unwrap();
    let eval = pipeline::run_eval(&cfg, &ckpt, Some(1)).unwrap();

    let text = std::fs::read_to_string(&out).unwrap();
    let mut points: Vec<(f64, f64)> = Vec::new();
    for line in text.lines().skip(1) {
        let mut cols = line.split('\t');
        let fpr: f64 = cols.next().unwrap().parse().unwrap();
        let tpr: f64 = cols.next().unwrap().parse().unwrap();
        points.push((fpr, tpr));
    }
    assert_eq!(points.first(), Some(&(0.0, 0.0)));
    assert_eq!(points.last(), Some(&(1.0, 1.0)));
    let area: f64 = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum();
    assert!(
        (area - eval.auc.unwrap()).abs() < 1e-12,
        "trapezoid {area} vs rank AUC {:?}",
        eval.auc
    );
    // Monotone in false-positive rate.
    assert!(points.windows(2).all(|w| w[1].0 >= w[0].0));
}

#[test]
fn graph_features_skip_cpc_when_disabled() {
    let (_dir, cfg) = small_run(10, 33);
    let graphs = pipeline::load_graphs(&cfg).unwrap();
    assert!(graphs.iter().all(|g| g.f_dim == 12));
    // Node scores/labels survived the build.
    assert!(graphs
        .iter()
        .any(|g| g.label == cellgraph_core::graph::RiskLabel::High));
    assert!(graphs
        .iter()
        .any(|g| g.label == cellgraph_core::graph::RiskLabel::Low));
}

#[test]
fn run_eval_auc_agrees_with_direct_metric() {
    let (_dir, cfg) = small_run(12, 5);
    pipeline::run_train_fold(&cfg, 0, QUIET).unwrap();
    let ckpt = pipeline::gnn_checkpoint_path(&cfg, 0);
    let summary = pipeline::run_eval(&cfg, &ckpt, None).unwrap();
    assert_eq!(summary.n_graphs, 24);
    // Sanity: the summary AUC is a legal AUC value.
    let a = summary.auc.unwrap();
    assert!((0.0..=1.0).contains(&a));
    let _ = auc(&[0.1, 0.9], &[0, 1]).unwrap();
}

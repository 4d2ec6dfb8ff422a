//! End-to-end orchestration behind the CLI subcommands: synthetic data
//! generation, CPC pretraining, graph building, cross-validated training,
//! and evaluation.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::cpc::{self, CpcModel, PatchGrid, PatchSource};
use crate::dataset::{
    crop_augment, fold_partition, load_graph, make_folds, save_graph, synth_sample, Manifest,
    ManifestEntry,
};
use crate::error::{Error, Result};
use crate::features::{
    assemble_node_features, extract_instances, glcm, glcm_features, morphology, to_grayscale,
    FeatureNormalizer, DEFAULT_GLCM_OFFSETS,
};
use crate::graph::{knn_graph, CellGraph, Centroid, RiskLabel};
use crate::imgio;
use crate::metrics::{roc_points, write_roc_tsv, FoldMetrics, RunMetrics};
use crate::train::{
    evaluate_graphs, load_checkpoint, load_cpc_checkpoint, save_checkpoint, save_cpc_checkpoint,
    train_gnn, write_train_log,
};

/// Stage progress on stderr; disabled in tests.
#[derive(Clone, Copy)]
pub struct Progress(pub bool);

impl Progress {
    fn say(&self, msg: impl AsRef<str>) {
        if self.0 {
            eprintln!("{}", msg.as_ref());
        }
    }
}

pub const METRICS_FORMAT_VERSION: u32 = 1;

/// `metrics.json` document: config echo plus per-fold and summary metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsDoc {
    pub format_version: u32,
    pub config: RunConfig,
    pub metrics: RunMetrics,
}

/// Config echo stored inside every GNN checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GnnCheckpointMeta {
    pub f_dim: usize,
    pub run: RunConfig,
}

pub fn manifest_path(data_root: &Path) -> PathBuf {
    data_root.join("manifest.csv")
}

pub fn cpc_checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.checkpoints_dir().join("cpc.json")
}

pub fn gnn_checkpoint_path(cfg: &RunConfig, fold: usize) -> PathBuf {
    cfg.checkpoints_dir().join(format!("gnn_fold{fold}.json"))
}

pub fn metrics_path(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("metrics.json")
}

// ── synth ─────────────────────────────────────────────────────────────

pub struct SynthReport {
    pub manifest: PathBuf,
    pub samples: usize,
}

/// Generates the synthetic dataset into the data root
/// (`images/*.png`, `masks/*.png`, `manifest.csv`).
pub fn run_synth(cfg: &RunConfig, progress: Progress) -> Result<SynthReport> {
    let root = match &cfg.data_root {
        Some(p) => p.clone(),
        None => cfg.resolve_data_root()?,
    };
    std::fs::create_dir_all(root.join("images")).map_err(|e| Error::io(&root, e))?;
    std::fs::create_dir_all(root.join("masks")).map_err(|e| Error::io(&root, e))?;

    let n = cfg.synth.per_class;
    let jobs: Vec<(RiskLabel, u64, String)> = (0..n)
        .map(|i| (RiskLabel::Low, i as u64, format!("low_{i:04}")))
        .chain((0..n).map(|i| (RiskLabel::High, (n + i) as u64, format!("high_{i:04}"))))
        .collect();
    progress.say(format!(
        "synth: generating {} images into {}",
        jobs.len(),
        root.display()
    ));
    let entries: Vec<ManifestEntry> = jobs
        .par_iter()
        .map(|(label, stream, id)| -> Result<ManifestEntry> {
            let sample = synth_sample(*label, cfg.synth.side, cfg.seed, *stream)?;
            let image = PathBuf::from(format!("images/{id}.png"));
            let mask = PathBuf::from(format!("masks/{id}.png"));
            imgio::save_rgb(&root.join(&image), &sample.image)?;
            imgio::save_gray16(&root.join(&mask), &sample.mask)?;
            Ok(ManifestEntry {
                source_id: id.clone(),
                image,
                instance_mask: mask,
                grade_mask: None,
                label: Some(*label),
                fold: None,
            })
        })
        .collect::<Result<_>>()?;

    let manifest = Manifest {
        root: root.clone(),
        entries,
    };
    let path = manifest_path(&root);
    manifest.save(&path)?;
    Ok(SynthReport {
        manifest: path,
        samples: 2 * n,
    })
}

// ── CPC pretraining ───────────────────────────────────────────────────

fn extract_training_patches(cfg: &RunConfig, manifest: &Manifest) -> Result<Vec<PatchGrid>> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut anchors: Vec<(usize, u32, u32)> = Vec::new();
    let mut dims: Vec<(u32, u32)> = Vec::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        let (w, h) = image::image_dimensions(manifest.image_path(e))
            .map_err(|err| Error::data(manifest.image_path(e), err.to_string()))?;
        dims.push((w, h));
        for (x0, y0) in cpc::patch_anchors(w, h, cfg.patches.patch, cfg.patches.patch_stride) {
            anchors.push((i, x0, y0));
        }
    }
    if anchors.is_empty() {
        return Err(Error::Config(format!(
            "no {}-pixel patches fit the dataset images",
            cfg.patches.patch
        )));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9A7C));
    anchors.shuffle(&mut rng);
    anchors.truncate(cfg.patches.max_patches.max(1));
    // Group by image so each file decodes once.
    anchors.sort_unstable();

    let mut grids = Vec::with_capacity(anchors.len());
    let mut current: Option<(usize, image::RgbImage)> = None;
    for (img_idx, x0, y0) in anchors {
        if current.as_ref().map(|(i, _)| *i) != Some(img_idx) {
            let rgb = imgio::load_rgb(&manifest.image_path(&manifest.entries[img_idx]))?;
            current = Some((img_idx, rgb));
        }
        let rgb = &current.as_ref().unwrap().1;
        let grid = if cfg.cpc.rgb {
            cpc::make_grid(
                &PatchSource::Rgb(rgb),
                x0,
                y0,
                cfg.patches.patch,
                cfg.cpc.cell,
                cfg.cpc.cell_stride,
            )?
        } else {
            let gray = to_grayscale(rgb);
            cpc::make_grid(
                &PatchSource::Gray(&gray),
                x0,
                y0,
                cfg.patches.patch,
                cfg.cpc.cell,
                cfg.cpc.cell_stride,
            )?
        };
        grids.push(grid);
    }
    Ok(grids)
}

/// Trains the CPC feature learner on patches extracted from the dataset
/// images and writes the checkpoint plus a per-epoch loss log.
pub fn run_train_cpc(cfg: &RunConfig, progress: Progress) -> Result<PathBuf> {
    let root = cfg.resolve_data_root()?;
    let manifest = Manifest::load(&manifest_path(&root))?;
    let patches = extract_training_patches(cfg, &manifest)?;
    progress.say(format!(
        "train-cpc: {} patches, {} epochs",
        patches.len(),
        cfg.cpc.epochs
    ));
    let (model, log) = cpc::train_cpc(&patches, cfg.cpc.clone())?;
    if let Some(last) = log.last() {
        progress.say(format!(
            "train-cpc: final train loss {:.4}, holdout {:?}",
            last.train_loss, last.holdout_loss
        ));
    }
    let path = cpc_checkpoint_path(cfg);
    save_cpc_checkpoint(&path, &model)?;
    let mut csv = String::from("epoch,train_loss,holdout_loss\n");
    for e in &log {
        csv.push_str(&format!(
            "{},{},{}\n",
            e.epoch,
            e.train_loss,
            e.holdout_loss.map(|v| v.to_string()).unwrap_or_default()
        ));
    }
    imgio::write_atomic(&cfg.logs_dir().join("cpc_train.csv"), csv.as_bytes())?;
    Ok(path)
}

// ── graph building ────────────────────────────────────────────────────

pub struct BuildReport {
    pub graphs: usize,
    pub dir: PathBuf,
}

fn build_graphs_for_entry(
    cfg: &RunConfig,
    manifest: &Manifest,
    entry: &ManifestEntry,
    cpc_model: Option<&CpcModel>,
    dump_dir: Option<&Path>,
) -> Result<Vec<(String, CellGraph)>> {
    let rgb = imgio::load_rgb(&manifest.image_path(entry))?;
    let mask = imgio::load_mask(&manifest.instance_mask_path(entry))?;
    if mask.dimensions() != rgb.dimensions() {
        return Err(Error::Config(format!(
            "sample {}: instance mask is {:?} but image is {:?}",
            entry.source_id,
            mask.dimensions(),
            rgb.dimensions()
        )));
    }
    let grade = manifest
        .grade_mask_path(entry)
        .map(|p| imgio::load_grade_mask(&p))
        .transpose()?;
    if let Some(g) = &grade {
        if g.dimensions() != rgb.dimensions() {
            return Err(Error::Config(format!(
                "sample {}: grade mask is {:?} but image is {:?}",
                entry.source_id,
                g.dimensions(),
                rgb.dimensions()
            )));
        }
    }
    let crops = crop_augment(
        &rgb,
        &mask,
        grade.as_ref(),
        cfg.crop.size,
        cfg.crop.tissue_threshold,
    );
    let f_dim = cfg.f_dim();
    let mut out = Vec::new();
    for crop in crops {
        let mut records = extract_instances(&crop.mask);
        if records.is_empty() {
            continue;
        }
        let gray = to_grayscale(&crop.image);
        for rec in &mut records {
            rec.morph = morphology(rec);
            let m = glcm(&gray, rec, cfg.features.glcm_levels, &DEFAULT_GLCM_OFFSETS)?;
            rec.texture = glcm_features(&m);
        }
        if let Some(dir) = dump_dir {
            let name = format!("{}_c{}.csv", entry.source_id, crop.index);
            crate::features::write_features_csv(&dir.join(name), &records)?;
        }
        let centroids: Vec<(f64, f64)> = records.iter().map(|r| r.centroid).collect();
        let cpc_feats: Vec<Vec<f64>> = match cpc_model {
            Some(model) => {
                let source = if model.config.rgb {
                    PatchSource::Rgb(&crop.image)
                } else {
                    PatchSource::Gray(&gray)
                };
                cpc::nucleus_cpc_features_batch(&source, &centroids, model)?
            }
            None => vec![Vec::new(); records.len()],
        };
        let mut features = Vec::with_capacity(records.len() * f_dim);
        for (rec, cpc_row) in records.iter().zip(&cpc_feats) {
            features.extend(assemble_node_features(
                &rec.morph,
                &rec.texture,
                cpc_row,
                f_dim,
            )?);
        }
        let label = crop.call.map(|c| c.label).or(entry.label).ok_or_else(|| {
            Error::Config(format!(
                "sample {} has neither a grade mask nor a manifest label",
                entry.source_id
            ))
        })?;
        let points: Vec<Centroid> = centroids
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| Centroid { id: i as u32, x, y })
            .collect();
        let edges = knn_graph(&points, cfg.knn.k, cfg.knn.radius)?;
        let graph = CellGraph::new(
            entry.source_id.clone(),
            label,
            f_dim,
            features,
            centroids,
            edges,
        )?;
        out.push((format!("{}_c{}.json", entry.source_id, crop.index), graph));
    }
    Ok(out)
}

/// Masks → features → KNN graphs, one JSON file per kept crop. With
/// `dump_features`, the handcrafted features also land in `features/*.csv`
/// for inspection.
pub fn run_build_graphs(
    cfg: &RunConfig,
    progress: Progress,
    dump_features: bool,
) -> Result<BuildReport> {
    let root = cfg.resolve_data_root()?;
    let manifest = Manifest::load(&manifest_path(&root))?;
    let cpc_model = if cfg.features.use_cpc {
        let path = cpc_checkpoint_path(cfg);
        if !path.exists() {
            return Err(Error::Config(format!(
                "CPC features enabled but {} is missing; run train-cpc first",
                path.display()
            )));
        }
        Some(load_cpc_checkpoint(&path)?)
    } else {
        None
    };
    let dir = cfg.graphs_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let dump_dir = if dump_features {
        let d = cfg.out_dir.join("features");
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        Some(d)
    } else {
        None
    };
    progress.say(format!(
        "build-graphs: {} samples -> {}",
        manifest.entries.len(),
        dir.display()
    ));
    let built: Vec<Vec<(String, CellGraph)>> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            build_graphs_for_entry(
                cfg,
                &manifest,
                entry,
                cpc_model.as_ref(),
                dump_dir.as_deref(),
            )
        })
        .collect::<Result<_>>()?;
    let mut count = 0usize;
    for batch in &built {
        for (name, graph) in batch {
            save_graph(graph, &dir.join(name))?;
            count += 1;
        }
    }
    Ok(BuildReport { graphs: count, dir })
}

/// Loads every graph in the graphs directory, sorted by file name.
pub fn load_graphs(cfg: &RunConfig) -> Result<Vec<CellGraph>> {
    let dir = cfg.graphs_dir();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Config(format!(
            "no graphs found in {}; run build-graphs first",
            dir.display()
        )));
    }
    paths.iter().map(|p| load_graph(p)).collect()
}

// ── training & evaluation ─────────────────────────────────────────────

fn normalized_copies(graphs: &[&CellGraph], norm: &FeatureNormalizer) -> Vec<CellGraph> {
    graphs
        .iter()
        .map(|g| {
            let mut c = (*g).clone();
            for row in c.features.chunks_mut(c.f_dim) {
                norm.apply(row);
            }
            c
        })
        .collect()
}

fn run_fold(
    cfg: &RunConfig,
    graphs: &[CellGraph],
    samples: &[(String, RiskLabel)],
    assignment: &crate::dataset::FoldAssignment,
    fold: usize,
    progress: Progress,
) -> Result<FoldMetrics> {
    use crate::dataset::Part;
    let parts = fold_partition(samples, assignment, fold, cfg.train.val_fraction, cfg.seed)?;
    let select = |part: Part| -> Vec<&CellGraph> {
        parts
            .iter()
            .zip(graphs)
            .filter(|(p, _)| **p == part)
            .map(|(_, g)| g)
            .collect()
    };
    let train_refs = select(Part::Train);
    let val_refs = select(Part::Val);
    let test_refs = select(Part::Test);
    if train_refs.is_empty() || test_refs.is_empty() {
        return Err(Error::Config(format!(
            "fold {fold} has an empty train or test partition"
        )));
    }

    let f_dim = cfg.f_dim();
    let train_rows: Vec<&[f64]> = train_refs
        .iter()
        .flat_map(|g| g.features.chunks(f_dim))
        .collect();
    let normalizer = FeatureNormalizer::fit(train_rows.iter().copied(), f_dim)?;
    let train_n = normalized_copies(&train_refs, &normalizer);
    let val_n = normalized_copies(&val_refs, &normalizer);
    let test_n = normalized_copies(&test_refs, &normalizer);

    let outcome = train_gnn(
        &train_n.iter().collect::<Vec<_>>(),
        &val_n.iter().collect::<Vec<_>>(),
        f_dim,
        &cfg.gnn,
        &cfg.train,
        cfg.seed.wrapping_add(fold as u64),
    )?;
    let eval = evaluate_graphs(
        &outcome.params,
        &cfg.gnn,
        &test_n.iter().collect::<Vec<_>>(),
    )?;
    progress.say(format!(
        "fold {fold}: train {} val {} test {} | best epoch {:?} | test acc {:.4} auc {:?}",
        train_refs.len(),
        val_refs.len(),
        test_refs.len(),
        outcome.best_epoch,
        eval.accuracy,
        eval.auc
    ));

    let meta = GnnCheckpointMeta {
        f_dim,
        run: cfg.clone(),
    };
    save_checkpoint(
        &gnn_checkpoint_path(cfg, fold),
        "gnn",
        &meta,
        Some(&normalizer),
        &outcome.params,
    )?;
    write_train_log(
        &cfg.logs_dir().join(format!("gnn_fold{fold}.csv")),
        &outcome.log,
    )?;
    if let Ok(points) = roc_points(&eval.scores, &eval.labels) {
        write_roc_tsv(&cfg.out_dir.join(format!("roc_fold{fold}.tsv")), &points)?;
    }

    Ok(FoldMetrics {
        fold,
        n_train: train_refs.len(),
        n_val: val_refs.len(),
        n_test: test_refs.len(),
        accuracy: eval.accuracy,
        auc: eval.auc,
        best_epoch: outcome.best_epoch,
    })
}

fn fold_samples(graphs: &[CellGraph]) -> Vec<(String, RiskLabel)> {
    graphs
        .iter()
        .map(|g| (g.source_id.clone(), g.label))
        .collect()
}

/// Trains and evaluates one fold, writing its checkpoint, log, and ROC.
pub fn run_train_fold(cfg: &RunConfig, fold: usize, progress: Progress) -> Result<FoldMetrics> {
    let graphs = load_graphs(cfg)?;
    let samples = fold_samples(&graphs);
    let assignment = make_folds(&samples, cfg.train.folds, cfg.seed, cfg.split.group_aware)?;
    run_fold(cfg, &graphs, &samples, &assignment, fold, progress)
}

/// Full k-fold cross validation; writes `metrics.json` and returns it.
pub fn run_cv(cfg: &RunConfig, progress: Progress) -> Result<(RunMetrics, PathBuf)> {
    let graphs = load_graphs(cfg)?;
    let samples = fold_samples(&graphs);
    let assignment = make_folds(&samples, cfg.train.folds, cfg.seed, cfg.split.group_aware)?;

    let mut folds = Vec::with_capacity(cfg.train.folds);
    for fold in 0..cfg.train.folds {
        folds.push(run_fold(
            cfg,
            &graphs,
            &samples,
            &assignment,
            fold,
            progress,
        )?);
    }
    let metrics = RunMetrics::aggregate(folds)?;
    let doc = MetricsDoc {
        format_version: METRICS_FORMAT_VERSION,
        config: cfg.clone(),
        metrics: metrics.clone(),
    };
    let path = metrics_path(cfg);
    imgio::write_atomic(&path, &serde_json::to_vec_pretty(&doc)?)?;

    // Record fold assignments in the manifest when groups are source ids.
    if cfg.split.group_aware {
        if let Ok(root) = cfg.resolve_data_root() {
            if let Ok(mut manifest) = Manifest::load(&manifest_path(&root)) {
                for e in &mut manifest.entries {
                    e.fold = assignment.fold_of_group.get(&e.source_id).copied();
                }
                manifest.save(&manifest_path(&root))?;
            }
        }
    }
    Ok((metrics, path))
}

// ── standalone evaluation ─────────────────────────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub n_graphs: usize,
    pub accuracy: f64,
    pub auc: Option<f64>,
}

fn load_gnn_checkpoint(
    path: &Path,
) -> Result<(
    GnnCheckpointMeta,
    FeatureNormalizer,
    crate::tensor::ParamSet,
)> {
    let ckpt = load_checkpoint(path, "gnn")?;
    let meta: GnnCheckpointMeta = serde_json::from_value(ckpt.config.clone())
        .map_err(|e| Error::data(path, format!("gnn checkpoint meta: {e}")))?;
    let normalizer = ckpt
        .normalizer
        .ok_or_else(|| Error::data(path, "gnn checkpoint is missing its feature normalizer"))?;
    crate::gnn::validate_params(meta.f_dim, &meta.run.gnn, &ckpt.params)?;
    Ok((meta, normalizer, ckpt.params))
}

fn select_eval_graphs(
    cfg: &RunConfig,
    graphs: Vec<CellGraph>,
    fold: Option<usize>,
) -> Result<Vec<CellGraph>> {
    match fold {
        None => Ok(graphs),
        Some(f) => {
            use crate::dataset::Part;
            let samples = fold_samples(&graphs);
            let assignment =
                make_folds(&samples, cfg.train.folds, cfg.seed, cfg.split.group_aware)?;
            let parts = fold_partition(&samples, &assignment, f, cfg.train.val_fraction, cfg.seed)?;
            Ok(graphs
                .into_iter()
                .zip(parts)
                .filter(|(_, p)| *p == Part::Test)
                .map(|(g, _)| g)
                .collect())
        }
    }
}

/// Evaluates a checkpoint on the built graphs (optionally one fold's test
/// split), using the checkpoint's own architecture and normalizer.
pub fn run_eval(cfg: &RunConfig, checkpoint: &Path, fold: Option<usize>) -> Result<EvalSummary> {
    let (meta, normalizer, params) = load_gnn_checkpoint(checkpoint)?;
    let graphs = select_eval_graphs(cfg, load_graphs(cfg)?, fold)?;
    if graphs.is_empty() {
        return Err(Error::EmptyInput("evaluation graphs"));
    }
    let refs: Vec<&CellGraph> = graphs.iter().collect();
    let normed = normalized_copies(&refs, &normalizer);
    let eval = evaluate_graphs(&params, &meta.run.gnn, &normed.iter().collect::<Vec<_>>())?;
    Ok(EvalSummary {
        n_graphs: graphs.len(),
        accuracy: eval.accuracy,
        auc: eval.auc,
    })
}

/// Scores graphs with a checkpoint and writes the ROC TSV.
pub fn run_roc(cfg: &RunConfig, checkpoint: &Path, out: &Path, fold: Option<usize>) -> Result<()> {
    let (meta, normalizer, params) = load_gnn_checkpoint(checkpoint)?;
    let graphs = select_eval_graphs(cfg, load_graphs(cfg)?, fold)?;
    if graphs.is_empty() {
        return Err(Error::EmptyInput("roc graphs"));
    }
    let refs: Vec<&CellGraph> = graphs.iter().collect();
    let normed = normalized_copies(&refs, &normalizer);
    let eval = evaluate_graphs(&params, &meta.run.gnn, &normed.iter().collect::<Vec<_>>())?;
    let points = roc_points(&eval.scores, &eval.labels)?;
    write_roc_tsv(out, &points)
}

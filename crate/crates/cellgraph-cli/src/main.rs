//! `cellgraph`: spatial cell-graph classification pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use cellgraph_core::config::{OptimizerChoice, RunConfig};
use cellgraph_core::gnn::ScoreActivation;
use cellgraph_core::pipeline::{self, Progress};

#[derive(Parser)]
#[command(
    name = "cellgraph",
    version,
    about = "Cell-graph construction and risk classification for nucleus-annotated tissue images"
)]
struct Cli {
    /// JSON config file; every key can also be overridden by a flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

/// One flag per config key; unset flags leave the config untouched.
#[derive(Args)]
struct Overrides {
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dataset directory (falls back to CELLGRAPH_DATA_ROOT).
    #[arg(long, global = true)]
    data_root: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    #[arg(long = "knn-k", global = true)]
    knn_k: Option<usize>,
    #[arg(long = "knn-radius", global = true)]
    knn_radius: Option<f64>,

    #[arg(long = "glcm-levels", global = true)]
    glcm_levels: Option<usize>,
    /// Include CPC features in node rows (true/false).
    #[arg(long = "use-cpc", global = true)]
    use_cpc: Option<bool>,

    #[arg(long = "patch", global = true)]
    patch: Option<usize>,
    #[arg(long = "patch-stride", global = true)]
    patch_stride: Option<usize>,
    #[arg(long = "max-patches", global = true)]
    max_patches: Option<usize>,

    #[arg(long = "cpc-dz", global = true)]
    cpc_dz: Option<usize>,
    #[arg(long = "cpc-dc", global = true)]
    cpc_dc: Option<usize>,
    #[arg(long = "cpc-hidden", global = true)]
    cpc_hidden: Option<usize>,
    #[arg(long = "cpc-k-max", global = true)]
    cpc_k_max: Option<usize>,
    #[arg(long = "cpc-negatives", global = true)]
    cpc_negatives: Option<usize>,
    #[arg(long = "cpc-cell", global = true)]
    cpc_cell: Option<usize>,
    #[arg(long = "cpc-cell-stride", global = true)]
    cpc_cell_stride: Option<usize>,
    #[arg(long = "cpc-window", global = true)]
    cpc_window: Option<usize>,
    #[arg(long = "cpc-rgb", global = true)]
    cpc_rgb: Option<bool>,
    #[arg(long = "cpc-epochs", global = true)]
    cpc_epochs: Option<usize>,
    #[arg(long = "cpc-batch", global = true)]
    cpc_batch: Option<usize>,
    #[arg(long = "cpc-lr", global = true)]
    cpc_lr: Option<f64>,
    #[arg(long = "cpc-holdout-fraction", global = true)]
    cpc_holdout_fraction: Option<f64>,

    #[arg(long = "gnn-blocks", global = true)]
    gnn_blocks: Option<usize>,
    #[arg(long = "gnn-hidden", global = true)]
    gnn_hidden: Option<usize>,
    #[arg(long = "gnn-ratio", global = true)]
    gnn_ratio: Option<f64>,
    #[arg(long = "gnn-dropout", global = true)]
    gnn_dropout: Option<f64>,
    #[arg(long = "gnn-head-hidden", global = true)]
    gnn_head_hidden: Option<usize>,
    /// Attention score squash: sigmoid or tanh.
    #[arg(long = "gnn-score-activation", global = true)]
    gnn_score_activation: Option<String>,

    #[arg(long = "train-epochs", global = true)]
    train_epochs: Option<usize>,
    #[arg(long = "train-batch", global = true)]
    train_batch: Option<usize>,
    #[arg(long = "train-lr", global = true)]
    train_lr: Option<f64>,
    #[arg(long = "patience", global = true)]
    patience: Option<usize>,
    #[arg(long = "folds", global = true)]
    folds: Option<usize>,
    #[arg(long = "val-fraction", global = true)]
    val_fraction: Option<f64>,
    /// adam or sgd.
    #[arg(long = "optimizer", global = true)]
    optimizer: Option<String>,

    #[arg(long = "synth-per-class", global = true)]
    synth_per_class: Option<usize>,
    #[arg(long = "synth-side", global = true)]
    synth_side: Option<u32>,

    #[arg(long = "crop-size", global = true)]
    crop_size: Option<usize>,
    #[arg(long = "tissue-threshold", global = true)]
    tissue_threshold: Option<f64>,

    #[arg(long = "group-aware", global = true)]
    group_aware: Option<bool>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) -> anyhow::Result<()> {
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value.clone() {
                    $field = v;
                }
            };
        }
        set!(cfg.seed, self.seed);
        if let Some(p) = &self.data_root {
            cfg.data_root = Some(p.clone());
        }
        set!(cfg.out_dir, self.out_dir);
        set!(cfg.knn.k, self.knn_k);
        set!(cfg.knn.radius, self.knn_radius);
        set!(cfg.features.glcm_levels, self.glcm_levels);
        set!(cfg.features.use_cpc, self.use_cpc);
        set!(cfg.patches.patch, self.patch);
        set!(cfg.patches.patch_stride, self.patch_stride);
        set!(cfg.patches.max_patches, self.max_patches);
        set!(cfg.cpc.dz, self.cpc_dz);
        set!(cfg.cpc.dc, self.cpc_dc);
        set!(cfg.cpc.hidden, self.cpc_hidden);
        set!(cfg.cpc.k_max, self.cpc_k_max);
        set!(cfg.cpc.negatives, self.cpc_negatives);
        set!(cfg.cpc.cell, self.cpc_cell);
        set!(cfg.cpc.cell_stride, self.cpc_cell_stride);
        set!(cfg.cpc.window, self.cpc_window);
        set!(cfg.cpc.rgb, self.cpc_rgb);
        set!(cfg.cpc.epochs, self.cpc_epochs);
        set!(cfg.cpc.batch, self.cpc_batch);
        set!(cfg.cpc.lr, self.cpc_lr);
        set!(cfg.cpc.holdout_fraction, self.cpc_holdout_fraction);
        set!(cfg.gnn.blocks, self.gnn_blocks);
        set!(cfg.gnn.hidden, self.gnn_hidden);
        set!(cfg.gnn.ratio, self.gnn_ratio);
        set!(cfg.gnn.dropout, self.gnn_dropout);
        set!(cfg.gnn.head_hidden, self.gnn_head_hidden);
        if let Some(s) = &self.gnn_score_activation {
            cfg.gnn.score_activation = match s.as_str() {
                "sigmoid" => ScoreActivation::Sigmoid,
                "tanh" => ScoreActivation::Tanh,
                other => anyhow::bail!("unknown score activation `{other}` (sigmoid|tanh)"),
            };
        }
        set!(cfg.train.epochs, self.train_epochs);
        set!(cfg.train.batch, self.train_batch);
        set!(cfg.train.lr, self.train_lr);
        set!(cfg.train.patience, self.patience);
        set!(cfg.train.folds, self.folds);
        set!(cfg.train.val_fraction, self.val_fraction);
        if let Some(s) = &self.optimizer {
            cfg.train.optimizer = match s.as_str() {
                "adam" => OptimizerChoice::Adam,
                "sgd" => OptimizerChoice::Sgd,
                other => anyhow::bail!("unknown optimizer `{other}` (adam|sgd)"),
            };
        }
        set!(cfg.synth.per_class, self.synth_per_class);
        set!(cfg.synth.side, self.synth_side);
        set!(cfg.crop.size, self.crop_size);
        set!(cfg.crop.tissue_threshold, self.tissue_threshold);
        set!(cfg.split.group_aware, self.group_aware);
        Ok(())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset into the data root.
    Synth,
    /// Build per-crop cell graphs (masks -> features -> KNN edges).
    BuildGraphs {
        /// Also dump handcrafted features to out_dir/features/*.csv.
        #[arg(long)]
        dump_features: bool,
    },
    /// Pretrain the CPC feature learner on extracted patches.
    TrainCpc,
    /// Train the classifier on one fold.
    Train {
        #[arg(long)]
        fold: usize,
    },
    /// Evaluate a checkpoint on built graphs (optionally one fold's test split).
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Export an ROC curve TSV for a checkpoint.
    Roc {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output TSV path (default: out_dir/roc.tsv).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Run the full gradient-verification suite; exit 0 iff all pass.
    Gradcheck {
        /// Random seeds per check.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
    /// End-to-end k-fold cross validation over the built graphs.
    RunCv,
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => RunConfig::default(),
    };
    cli.overrides.apply(&mut cfg)?;
    cfg.normalize();
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let cfg = load_config(&cli)?;
    let progress = Progress(true);
    match cli.command {
        Command::Synth => {
            let report = pipeline::run_synth(&cfg, progress)?;
            println!(
                "wrote {} samples, manifest {}",
                report.samples,
                report.manifest.display()
            );
        }
        Command::BuildGraphs { dump_features } => {
            let report = pipeline::run_build_graphs(&cfg, progress, dump_features)?;
            println!("built {} graphs in {}", report.graphs, report.dir.display());
        }
        Command::TrainCpc => {
            let path = pipeline::run_train_cpc(&cfg, progress)?;
            println!("cpc checkpoint {}", path.display());
        }
        Command::Train { fold } => {
            let metrics = pipeline::run_train_fold(&cfg, fold, progress)?;
            println!("{}", serde_json::to_string_pretty(&metrics)?);
        }
        Command::Eval { checkpoint, fold } => {
            let summary = pipeline::run_eval(&cfg, &checkpoint, fold)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Roc {
            checkpoint,
            out,
            fold,
        } => {
            let out = out.unwrap_or_else(|| cfg.out_dir.join("roc.tsv"));
            pipeline::run_roc(&cfg, &checkpoint, &out, fold)?;
            println!("roc points {}", out.display());
        }
        Command::Gradcheck { seeds } => {
            let report = cellgraph_core::gradsuite::run_full_gradcheck(seeds)?;
            print!("{}", report.render());
            if !report.all_passed() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::RunCv => {
            let (metrics, path) = pipeline::run_cv(&cfg, progress)?;
            print!("{}", metrics.table());
            println!("metrics {}", path.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

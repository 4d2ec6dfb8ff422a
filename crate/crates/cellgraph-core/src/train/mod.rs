//! GNN training with early stopping, plus evaluation.

mod checkpoint;

pub use checkpoint::{
    load_checkpoint, load_cpc_checkpoint, save_checkpoint, save_cpc_checkpoint, Checkpoint,
    CHECKPOINT_FORMAT_VERSION,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{OptimizerChoice, TrainSettings};
use crate::error::{Error, Result};
use crate::gnn::{forward, predict, prob_high, ForwardMode, GnnConfig};
use crate::graph::CellGraph;
use crate::metrics::{accuracy, auc};
use crate::tensor::{Optimizer, ParamSet, Tape};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
    pub val_auc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamSet,
    /// Epoch whose validation AUC won; `None` when training never ran.
    pub best_epoch: Option<usize>,
    pub best_val_auc: Option<f64>,
    pub log: Vec<EpochLog>,
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    /// P(high risk) per graph, in input order.
    pub scores: Vec<f64>,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
    pub accuracy: f64,
    pub auc: Option<f64>,
}

/// Forward every graph, collecting probabilities and argmax predictions.
pub fn evaluate_graphs(
    params: &ParamSet,
    config: &GnnConfig,
    graphs: &[&CellGraph],
) -> Result<EvalOutcome> {
    if graphs.is_empty() {
        return Err(Error::EmptyInput("evaluation graphs"));
    }
    let mut scores = Vec::with_capacity(graphs.len());
    let mut predictions = Vec::with_capacity(graphs.len());
    let mut labels = Vec::with_capacity(graphs.len());
    for g in graphs {
        let mut tape = Tape::new();
        let ids = params.stage(&mut tape)?;
        let fwd = forward(&mut tape, &ids, g, config, &mut ForwardMode::Eval)?;
        let logits = tape.values(fwd.logits);
        scores.push(prob_high(logits));
        predictions.push(predict(logits));
        labels.push(g.label.class_index());
    }
    Ok(EvalOutcome {
        accuracy: accuracy(&predictions, &labels)?,
        auc: auc(&scores, &labels)?,
        scores,
        predictions,
        labels,
    })
}

/// Mini-batch training (per-batch losses averaged by the cross-entropy),
/// early-stopped on validation AUC with the configured patience. The
/// returned parameters are the best-validation snapshot, never a later,
/// worse one. Deterministic given `seed`.
pub fn train_gnn(
    train_graphs: &[&CellGraph],
    val_graphs: &[&CellGraph],
    f_dim: usize,
    gnn: &GnnConfig,
    settings: &TrainSettings,
    seed: u64,
) -> Result<TrainOutcome> {
    if train_graphs.is_empty() {
        return Err(Error::EmptyInput("training graphs"));
    }
    for g in train_graphs.iter().chain(val_graphs) {
        if g.f_dim != f_dim {
            return Err(Error::Config(format!(
                "graph {} has f_dim {}, run expects {f_dim}",
                g.source_id, g.f_dim
            )));
        }
    }
    let mut params = crate::gnn::init_params(f_dim, gnn)?;
    let mut opt = match settings.optimizer {
        OptimizerChoice::Adam => Optimizer::adam(settings.lr),
        OptimizerChoice::Sgd => Optimizer::sgd(settings.lr),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0xA11CED));

    let mut best_params = params.clone();
    let mut best_epoch = None;
    // (AUC, accuracy): AUC drives early stopping, accuracy only breaks
    // exact AUC ties — a saturated AUC says nothing about calibration.
    let mut best_metric = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut best_auc = None;
    let mut stall = 0usize;
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..train_graphs.len()).collect();

    for epoch in 0..settings.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut loss_n = 0usize;
        for chunk in order.chunks(settings.batch) {
            let mut tape = Tape::new();
            let ids = params.stage(&mut tape)?;
            let mut logit_rows = Vec::with_capacity(chunk.len());
            let mut targets = Vec::with_capacity(chunk.len());
            for &gi in chunk {
                let g = train_graphs[gi];
                let fwd = forward(
                    &mut tape,
                    &ids,
                    g,
                    gnn,
                    &mut ForwardMode::Train {
                        dropout_rng: &mut rng,
                    },
                )?;
                logit_rows.push(fwd.logits);
                targets.push(g.label.class_index());
            }
            let logits = tape.concat(&logit_rows, 0)?;
            let loss = tape.softmax_cross_entropy(logits, &targets)?;
            loss_sum += tape.values(loss)[0] * chunk.len() as f64;
            loss_n += chunk.len();
            tape.backward(loss)?;
            let grads = params.gradients(&tape, &ids)?;
            opt.step(&mut params, &grads)?;
        }

        let (val_acc, val_auc) = if val_graphs.is_empty() {
            (None, None)
        } else {
            let eval = evaluate_graphs(&params, gnn, val_graphs)?;
            (Some(eval.accuracy), eval.auc)
        };
        log.push(EpochLog {
            epoch,
            train_loss: loss_sum / loss_n as f64,
            val_accuracy: val_acc,
            val_auc,
        });

        // AUC drives early stopping; accuracy substitutes when the
        // validation split is single-class.
        let metric = val_auc
            .or(val_acc)
            .map(|primary| (primary, val_acc.unwrap_or(f64::NEG_INFINITY)));
        match metric {
            Some(m) if m > best_metric => {
                best_metric = m;
                best_params = params.clone();
                best_epoch = Some(epoch);
                best_auc = val_auc;
                stall = 0;
            }
            Some(_) => {
                stall += 1;
                if stall >= settings.patience {
                    break;
                }
            }
            None => {
                // No validation signal: keep the latest parameters.
                best_params = params.clone();
                best_epoch = Some(epoch);
            }
        }
    }
    Ok(TrainOutcome {
        params: best_params,
        best_epoch,
        best_val_auc: best_auc,
        log,
    })
}

/// CSV dump of the per-epoch log: `epoch,train_loss,val_accuracy,val_auc`.
pub fn write_train_log(path: &std::path::Path, log: &[EpochLog]) -> Result<()> {
    let mut out = String::from("epoch,train_loss,val_accuracy,val_auc\n");
    for e in log {
        out.push_str(&format!(
            "{},{},{},{}\n",
            e.epoch,
            e.train_loss,
            e.val_accuracy.map(|v| v.to_string()).unwrap_or_default(),
            e.val_auc.map(|v| v.to_string()).unwrap_or_default(),
        ));
    }
    crate::imgio::write_atomic(path, out.as_bytes())
}

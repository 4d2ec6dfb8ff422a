//! Graph classifier: stacked [sage_conv → ReLU → sag_pool] blocks with a
//! summed mean‖max readout after each block and a two-layer head producing
//! binary risk logits.

mod layers;
#[cfg(test)]
mod tests;

pub use layers::{readout, sag_pool, sage_conv, PoolOutcome};

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::CellGraph;
use crate::tensor::{NodeId, ParamSet, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutKind {
    MeanMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreActivation {
    Sigmoid,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GnnConfig {
    pub blocks: usize,
    pub hidden: usize,
    /// Fraction of nodes each pooling level keeps, in (0, 1].
    pub ratio: f64,
    pub dropout: f64,
    pub head_hidden: usize,
    pub readout: ReadoutKind,
    pub score_activation: ScoreActivation,
    pub seed: u64,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig {
            blocks: 3,
            hidden: 64,
            ratio: 0.5,
            dropout: 0.0,
            head_hidden: 64,
            readout: ReadoutKind::MeanMax,
            score_activation: ScoreActivation::Sigmoid,
            seed: 7,
        }
    }
}

impl GnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.hidden == 0 || self.head_hidden == 0 {
            return Err(Error::Config("gnn sizes must be positive".into()));
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::Config(format!(
                "pooling ratio must be in (0, 1], got {}",
                self.ratio
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    fn block_input(&self, block: usize, f_dim: usize) -> usize {
        if block == 0 {
            f_dim
        } else {
            self.hidden
        }
    }
}

fn normal_tensor(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("finite std");
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("shape matches")
}

/// Seeded parameter initialization for input width `f_dim`.
pub fn init_params(f_dim: usize, config: &GnnConfig) -> Result<ParamSet> {
    config.validate()?;
    if f_dim == 0 {
        return Err(Error::Config("feature dimension must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut p = ParamSet::new();
    let h = config.hidden;
    for b in 0..config.blocks {
        let d_in = config.block_input(b, f_dim);
        p.insert(
            format!("sage{b}.w_agg"),
            normal_tensor(&mut rng, &[d_in, h], (2.0 / d_in as f64).sqrt()),
        );
        p.insert(
            format!("sage{b}.w_upd"),
            normal_tensor(&mut rng, &[d_in + h, h], (2.0 / (d_in + h) as f64).sqrt()),
        );
        p.insert(
            format!("pool{b}.w_agg"),
            normal_tensor(&mut rng, &[h, 1], (1.0 / h as f64).sqrt()),
        );
        p.insert(
            format!("pool{b}.w_upd"),
            normal_tensor(&mut rng, &[h + 1, 1], (1.0 / (h + 1) as f64).sqrt()),
        );
    }
    let r = 2 * h;
    p.insert(
        "head.w1",
        normal_tensor(&mut rng, &[r, config.head_hidden], (2.0 / r as f64).sqrt()),
    );
    p.insert("head.b1", Tensor::zeros(&[config.head_hidden]));
    p.insert(
        "head.w2",
        normal_tensor(
            &mut rng,
            &[config.head_hidden, 2],
            (1.0 / config.head_hidden as f64).sqrt(),
        ),
    );
    p.insert("head.b2", Tensor::zeros(&[2]));
    Ok(p)
}

/// Checks that `params` matches the shapes `init_params` would produce.
pub fn validate_params(f_dim: usize, config: &GnnConfig, params: &ParamSet) -> Result<()> {
    let expect = init_params(f_dim, config)?;
    for (name, t) in expect.iter() {
        let got = params.get(name)?;
        if got.shape() != t.shape() {
            return Err(Error::ShapeMismatch {
                op: "gnn_params",
                lhs: t.shape().to_vec(),
                rhs: got.shape().to_vec(),
            });
        }
    }
    if params.len() != expect.len() {
        return Err(Error::Config(format!(
            "parameter set has {} tensors, expected {}",
            params.len(),
            expect.len()
        )));
    }
    Ok(())
}

/// Inverted-dropout mask applied to the head's hidden layer during
/// training; pass `None` for evaluation.
pub enum ForwardMode<'a> {
    Eval,
    Train { dropout_rng: &'a mut ChaCha8Rng },
}

/// Forward trace: the logits node plus per-level attention scores and
/// survivor sets (original node ids), for inspection and tests.
pub struct GnnForward {
    pub logits: NodeId,
    pub pool_scores: Vec<Vec<f64>>,
    pub pool_kept: Vec<Vec<u32>>,
}

/// Runs the full classifier for one graph, producing `[1, 2]` logits.
pub fn forward(
    tape: &mut Tape,
    ids: &BTreeMap<String, NodeId>,
    graph: &CellGraph,
    config: &GnnConfig,
    mode: &mut ForwardMode,
) -> Result<GnnForward> {
    config.validate()?;
    let mut x = tape.leaf_values(vec![graph.n_nodes, graph.f_dim], graph.features.clone())?;
    let mut edges = graph.edges.clone();
    let sigmoid = config.score_activation == ScoreActivation::Sigmoid;

    let mut readouts = Vec::with_capacity(config.blocks);
    let mut pool_scores = Vec::with_capacity(config.blocks);
    let mut pool_kept = Vec::with_capacity(config.blocks);
    for b in 0..config.blocks {
        let neighbors = edges.neighbor_lists();
        let conv = sage_conv(
            tape,
            x,
            &neighbors,
            ids[&format!("sage{b}.w_agg")],
            ids[&format!("sage{b}.w_upd")],
        )?;
        let act = tape.relu(conv)?;
        let pooled = sag_pool(
            tape,
            act,
            &edges,
            config.ratio,
            ids[&format!("pool{b}.w_agg")],
            ids[&format!("pool{b}.w_upd")],
            sigmoid,
        )?;
        x = pooled.x;
        edges = pooled.edges;
        pool_scores.push(pooled.scores);
        pool_kept.push(pooled.kept);
        readouts.push(readout(tape, x)?);
    }
    let mut summary = readouts[0];
    for r in &readouts[1..] {
        summary = tape.add(summary, *r)?;
    }

    let h = tape.matmul(summary, ids["head.w1"])?;
    let h = tape.add_row_vector(h, ids["head.b1"])?;
    let mut h = tape.relu(h)?;
    if let ForwardMode::Train { dropout_rng } = mode {
        if config.dropout > 0.0 {
            use rand::Rng;
            let keep = 1.0 - config.dropout;
            let mask: Vec<f64> = (0..config.head_hidden)
                .map(|_| {
                    if dropout_rng.gen_bool(keep) {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
                .collect();
            let mask = tape.leaf_values(vec![1, config.head_hidden], mask)?;
            h = tape.mul(h, mask)?;
        }
    }
    let out = tape.matmul(h, ids["head.w2"])?;
    let logits = tape.add_row_vector(out, ids["head.b2"])?;
    Ok(GnnForward {
        logits,
        pool_scores,
        pool_kept,
    })
}

/// Argmax with the deterministic tie rule (ties choose class 0).
pub fn predict(logits: &[f64]) -> usize {
    usize::from(logits[1] > logits[0])
}

/// P(high risk) from the logits.
pub fn prob_high(logits: &[f64]) -> f64 {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    e1 / (e0 + e1)
}

//! CPC networks: the cell encoder, the recurrent context cell, and the
//! per-step prediction weights.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{NodeId, ParamSet, Tape, Tensor};

/// Hyperparameters for the CPC feature learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpcConfig {
    /// Latent width D_z (one nucleus feature vector has this many dims).
    pub dz: usize,
    /// Context width D_c.
    pub dc: usize,
    /// Encoder hidden width.
    pub hidden: usize,
    /// Predict rows t+1 ..= t+k_max.
    pub k_max: usize,
    /// Negatives sampled per prediction task.
    pub negatives: usize,
    /// Cell side within a patch or nucleus window.
    pub cell: usize,
    pub cell_stride: usize,
    /// Window side around each nucleus centroid.
    pub window: usize,
    /// Encode RGB cells instead of grayscale.
    pub rgb: bool,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for CpcConfig {
    fn default() -> Self {
        // Desk scale: 64-pixel patches and windows on a 7×7 cell grid.
        CpcConfig {
            dz: 32,
            dc: 32,
            hidden: 64,
            k_max: 3,
            negatives: 15,
            cell: 16,
            cell_stride: 8,
            window: 64,
            rgb: false,
            epochs: 15,
            batch: 8,
            lr: 1e-3,
            holdout_fraction: 0.1,
            seed: 7,
        }
    }
}

impl CpcConfig {
    /// Published operating point: 256-pixel training patches on a 7×7 grid
    /// of 64-pixel cells, 64-pixel nucleus windows, 1024 latent features.
    pub fn published_scale() -> Self {
        CpcConfig {
            dz: 1024,
            dc: 1024,
            hidden: 1024,
            cell: 64,
            cell_stride: 32,
            window: 64,
            ..Default::default()
        }
    }

    pub fn cell_dim(&self) -> usize {
        self.cell * self.cell * if self.rgb { 3 } else { 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dz == 0 || self.dc == 0 || self.hidden == 0 {
            return Err(Error::Config("cpc widths must be positive".into()));
        }
        if self.k_max == 0 {
            return Err(Error::Config("cpc k_max must be >= 1".into()));
        }
        if self.negatives == 0 {
            return Err(Error::Config("cpc needs at least one negative".into()));
        }
        Ok(())
    }
}

/// Encoder + context + prediction parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CpcModel {
    pub config: CpcConfig,
    pub params: ParamSet,
}

fn normal_tensor(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("std is finite");
    let n: usize = shape.iter().product();
    let values = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::new(shape.to_vec(), values).expect("shape matches")
}

impl CpcModel {
    /// Seeded initialization. Prediction weights start at zero so the
    /// untrained objective sits exactly at the uniform baseline ln(N).
    pub fn init(config: CpcConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let cd = config.cell_dim();
        let (dz, dc, hidden) = (config.dz, config.dc, config.hidden);
        let mut p = ParamSet::new();
        p.insert(
            "enc.w1",
            normal_tensor(&mut rng, &[cd, hidden], (2.0 / cd as f64).sqrt()),
        );
        p.insert("enc.b1", Tensor::zeros(&[hidden]));
        p.insert(
            "enc.w2",
            normal_tensor(&mut rng, &[hidden, dz], (1.0 / hidden as f64).sqrt()),
        );
        p.insert("enc.b2", Tensor::zeros(&[dz]));
        for gate in ["r", "u", "h"] {
            p.insert(
                format!("ctx.w{gate}"),
                normal_tensor(&mut rng, &[dz, dc], (1.0 / dz as f64).sqrt()),
            );
            p.insert(
                format!("ctx.u{gate}"),
                normal_tensor(&mut rng, &[dc, dc], (1.0 / dc as f64).sqrt()),
            );
            p.insert(format!("ctx.b{gate}"), Tensor::zeros(&[dc]));
        }
        for k in 1..=config.k_max {
            p.insert(format!("pred.w{k}"), Tensor::zeros(&[dc, dz]));
        }
        Ok(CpcModel { config, params: p })
    }

    pub fn from_parts(config: CpcConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let expect = CpcModel::init(config.clone())?;
        for (name, t) in expect.params.iter() {
            let got = params.get(name)?;
            if got.shape() != t.shape() {
                return Err(Error::ShapeMismatch {
                    op: "cpc_checkpoint",
                    lhs: t.shape().to_vec(),
                    rhs: got.shape().to_vec(),
                });
            }
        }
        Ok(CpcModel { config, params })
    }
}

/// `z = enc(cells)`: linear → ReLU → linear applied to every row.
pub fn encode_cells(
    tape: &mut Tape,
    ids: &BTreeMap<String, NodeId>,
    cells: NodeId,
) -> Result<NodeId> {
    let h = tape.matmul(cells, ids["enc.w1"])?;
    let h = tape.add_row_vector(h, ids["enc.b1"])?;
    let h = tape.relu(h)?;
    let z = tape.matmul(h, ids["enc.w2"])?;
    tape.add_row_vector(z, ids["enc.b2"])
}

/// One gated recurrent step over a batch of row latents.
///
/// `state` is `[B, D_c]`, `input` is `[B, D_z]`; returns the next state.
pub fn context_step(
    tape: &mut Tape,
    ids: &BTreeMap<String, NodeId>,
    state: NodeId,
    input: NodeId,
) -> Result<NodeId> {
    let gate = |tape: &mut Tape, w: &str, u: &str, b: &str, s: NodeId| -> Result<NodeId> {
        let xi = tape.matmul(input, ids[w])?;
        let si = tape.matmul(s, ids[u])?;
        let sum = tape.add(xi, si)?;
        tape.add_row_vector(sum, ids[b])
    };
    let r_lin = gate(tape, "ctx.wr", "ctx.ur", "ctx.br", state)?;
    let r = tape.sigmoid(r_lin)?;
    let u_lin = gate(tape, "ctx.wu", "ctx.uu", "ctx.bu", state)?;
    let u = tape.sigmoid(u_lin)?;
    let gated_state = tape.mul(r, state)?;
    let cand_lin = gate(tape, "ctx.wh", "ctx.uh", "ctx.bh", gated_state)?;
    let cand = tape.tanh(cand_lin)?;
    // state' = state + u ⊙ (cand − state)
    let delta = tape.sub(cand, state)?;
    let scaled = tape.mul(u, delta)?;
    tape.add(state, scaled)
}

/// Runs the context cell top-to-bottom over `rows` pooled row latents for
/// `n_patches` patches at once.
///
/// `pooled` is `[(n_patches·rows), D_z]` in patch-major order; the result is
/// `[(rows·n_patches), D_c]` in row-major order (row t of patch p lives at
/// `t·n_patches + p`). `c_t` depends only on rows ≤ t.
pub fn context_rows(
    tape: &mut Tape,
    ids: &BTreeMap<String, NodeId>,
    pooled: NodeId,
    n_patches: usize,
    rows: usize,
    dc: usize,
) -> Result<NodeId> {
    let zero_state = Tensor::zeros(&[n_patches, dc]);
    let mut state = tape.leaf(&zero_state)?;
    let mut blocks = Vec::with_capacity(rows);
    for t in 0..rows {
        let idx: Vec<usize> = (0..n_patches).map(|p| p * rows + t).collect();
        let input = tape.gather_rows(pooled, &idx)?;
        state = context_step(tape, ids, state, input)?;
        blocks.push(state);
    }
    tape.concat(&blocks, 0)
}

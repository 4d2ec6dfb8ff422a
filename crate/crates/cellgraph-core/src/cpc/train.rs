//! CPC pretraining loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cpc::grid::PatchGrid;
use crate::cpc::loss::{assemble_infonce, info_nce_loss, InfoNceBatch};
use crate::cpc::model::{context_rows, encode_cells, CpcConfig, CpcModel};
use crate::error::{Error, Result};
use crate::tensor::{Optimizer, Tape, Tensor};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CpcEpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub holdout_loss: Option<f64>,
}

/// Forward pass to the InfoNCE loss for one batch of grids with a fixed
/// task assembly. Shared by training, evaluation, and the gradient checks.
pub fn cpc_batch_loss(
    tape: &mut Tape,
    model_params: &crate::tensor::ParamSet,
    config: &CpcConfig,
    grids: &[&PatchGrid],
    batch: &InfoNceBatch,
) -> Result<(
    crate::tensor::NodeId,
    std::collections::BTreeMap<String, crate::tensor::NodeId>,
)> {
    let ids = model_params.stage(tape)?;
    let (rows, cols, cd) = (grids[0].rows, grids[0].cols, grids[0].cell_dim());
    let mut cells = Vec::with_capacity(grids.len() * rows * cols * cd);
    for g in grids {
        if g.rows != rows || g.cols != cols || g.cell_dim() != cd {
            return Err(Error::Config("mixed grid geometries in one batch".into()));
        }
        cells.extend_from_slice(&g.cells);
    }
    let cells = tape.leaf(&Tensor::new(vec![grids.len() * rows * cols, cd], cells)?)?;
    let latents = encode_cells(tape, &ids, cells)?;
    let pooled = tape.mean_pool_rows(latents, cols)?;
    let contexts = context_rows(tape, &ids, pooled, grids.len(), rows, config.dc)?;
    let loss = info_nce_loss(tape, &ids, pooled, contexts, batch, config.k_max)?;
    Ok((loss, ids))
}

fn eval_loss(model: &CpcModel, grids: &[&PatchGrid], batch: &InfoNceBatch) -> Result<(f64, usize)> {
    let mut tape = Tape::new();
    let (loss, _) = cpc_batch_loss(&mut tape, &model.params, &model.config, grids, batch)?;
    Ok((tape.values(loss)[0], batch.tasks.len()))
}

/// Mean InfoNCE loss over `grids` with a deterministic task assembly drawn
/// from `seed`.
pub fn held_out_loss(model: &CpcModel, grids: &[&PatchGrid], seed: u64) -> Result<f64> {
    if grids.is_empty() {
        return Err(Error::EmptyInput("cpc holdout"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bs = model.config.batch.max(1);
    let mut total = 0.0;
    let mut tasks = 0usize;
    for chunk in grids.chunks(bs) {
        let batch = assemble_infonce(chunk.len(), chunk[0].rows, &model.config, &mut rng)?;
        let (loss, n) = eval_loss(model, chunk, &batch)?;
        total += loss * n as f64;
        tasks += n;
    }
    Ok(total / tasks as f64)
}

/// Trains a fresh model on `patches`. Deterministic given the config seed;
/// zero epochs returns the initialized model untouched.
pub fn train_cpc(patches: &[PatchGrid], config: CpcConfig) -> Result<(CpcModel, Vec<CpcEpochLog>)> {
    if patches.is_empty() {
        return Err(Error::EmptyInput("cpc patches"));
    }
    let mut model = CpcModel::init(config.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9E37_79B9));

    // Held-out split for the learning-signal check.
    let n_holdout = if config.holdout_fraction > 0.0 && patches.len() >= 2 {
        (((patches.len() as f64) * config.holdout_fraction).floor() as usize)
            .clamp(1, patches.len() - 1)
    } else {
        0
    };
    let mut order: Vec<usize> = (0..patches.len()).collect();
    order.shuffle(&mut rng);
    let holdout: Vec<&PatchGrid> = order[..n_holdout].iter().map(|&i| &patches[i]).collect();
    let train: Vec<usize> = order[n_holdout..].to_vec();
    let holdout_seed = config.seed.wrapping_add(0x5EED);

    let mut opt = Optimizer::adam(config.lr);
    let mut log = Vec::with_capacity(config.epochs);
    let mut train_order = train;
    for epoch in 0..config.epochs {
        train_order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut tasks = 0usize;
        for chunk in train_order.chunks(config.batch.max(1)) {
            let grids: Vec<&PatchGrid> = chunk.iter().map(|&i| &patches[i]).collect();
            let batch = assemble_infonce(grids.len(), grids[0].rows, &config, &mut rng)?;
            let mut tape = Tape::new();
            let (loss, ids) = cpc_batch_loss(&mut tape, &model.params, &config, &grids, &batch)?;
            total += tape.values(loss)[0] * batch.tasks.len() as f64;
            tasks += batch.tasks.len();
            tape.backward(loss)?;
            let grads = model.params.gradients(&tape, &ids)?;
            opt.step(&mut model.params, &grads)?;
        }
        let holdout_loss = if holdout.is_empty() {
            None
        } else {
            Some(held_out_loss(&model, &holdout, holdout_seed)?)
        };
        log.push(CpcEpochLog {
            epoch,
            train_loss: total / tasks.max(1) as f64,
            holdout_loss,
        });
    }
    Ok((model, log))
}

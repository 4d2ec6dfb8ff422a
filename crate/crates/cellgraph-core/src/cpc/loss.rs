//! InfoNCE contrastive objective over row-latent predictions.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::cpc::model::CpcConfig;
use crate::error::{Error, Result};
use crate::tensor::{NodeId, Tape};

/// One prediction task: context at (patch, row) must identify the pooled
/// latent of row `row + k` among `candidates` (indices into the pooled
/// latent matrix). Exactly one candidate — at `positive_pos` — is the
/// positive.
#[derive(Debug, Clone, PartialEq)]
pub struct NceTask {
    pub patch: usize,
    pub row: usize,
    pub k: usize,
    pub candidates: Vec<usize>,
    pub positive_pos: usize,
}

impl NceTask {
    pub fn positive_row(&self, rows: usize) -> usize {
        self.patch * rows + self.row + self.k
    }
}

/// All tasks for one mini-batch of patch grids.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoNceBatch {
    pub n_patches: usize,
    pub rows: usize,
    pub tasks: Vec<NceTask>,
}

/// Samples every (t, k) task for a batch; negatives are drawn uniformly
/// from the other (patch, row) positions, without replacement when the
/// pool allows it.
pub fn assemble_infonce(
    n_patches: usize,
    rows: usize,
    config: &CpcConfig,
    rng: &mut ChaCha8Rng,
) -> Result<InfoNceBatch> {
    if n_patches == 0 || rows < 2 {
        return Err(Error::Config(
            "InfoNCE needs at least one patch with two grid rows".into(),
        ));
    }
    let pool = n_patches * rows;
    let mut tasks = Vec::new();
    for patch in 0..n_patches {
        for row in 0..rows - 1 {
            for k in 1..=config.k_max.min(rows - 1 - row) {
                let positive = patch * rows + row + k;
                let n_neg = config.negatives;
                let mut cand = Vec::with_capacity(n_neg + 1);
                if pool - 1 > n_neg {
                    while cand.len() < n_neg {
                        let pick = rng.gen_range(0..pool);
                        if pick != positive && !cand.contains(&pick) {
                            cand.push(pick);
                        }
                    }
                } else {
                    // Pool too small for distinct negatives; sample with
                    // replacement.
                    while cand.len() < n_neg {
                        let pick = rng.gen_range(0..pool);
                        if pick != positive {
                            cand.push(pick);
                        }
                    }
                }
                let positive_pos = rng.gen_range(0..n_neg + 1);
                cand.insert(positive_pos, positive);
                tasks.push(NceTask {
                    patch,
                    row,
                    k,
                    candidates: cand,
                    positive_pos,
                });
            }
        }
    }
    Ok(InfoNceBatch {
        n_patches,
        rows,
        tasks,
    })
}

/// Mean cross-entropy of bilinear scores ẑᵀz over each task's candidates,
/// with ẑ_{t+k} = W_k·c_t.
///
/// `pooled` is the `[(patches·rows), D_z]` latent matrix and `contexts` the
/// `[(rows·patches), D_c]` context matrix from [`super::context_rows`].
pub fn info_nce_loss(
    tape: &mut Tape,
    ids: &BTreeMap<String, NodeId>,
    pooled: NodeId,
    contexts: NodeId,
    batch: &InfoNceBatch,
    k_max: usize,
) -> Result<NodeId> {
    if batch.tasks.is_empty() {
        return Err(Error::EmptyInput("info_nce tasks"));
    }
    let n_cand = batch.tasks[0].candidates.len();
    for task in &batch.tasks {
        if task.candidates.len() != n_cand {
            return Err(Error::Config("ragged candidate sets".into()));
        }
        let want = task.positive_row(batch.rows);
        let has_positive = task
            .candidates
            .get(task.positive_pos)
            .is_some_and(|&c| c == want);
        if !has_positive {
            return Err(Error::Config(format!(
                "candidate set for (patch {}, row {}, k {}) lacks its positive",
                task.patch, task.row, task.k
            )));
        }
        let dup = task
            .candidates
            .iter()
            .enumerate()
            .any(|(i, &c)| i != task.positive_pos && c == want);
        if dup {
            return Err(Error::Config(
                "positive appears more than once in a candidate set".into(),
            ));
        }
    }

    let mut score_blocks = Vec::new();
    let mut targets = Vec::new();
    for k in 1..=k_max {
        let group: Vec<&NceTask> = batch.tasks.iter().filter(|t| t.k == k).collect();
        if group.is_empty() {
            continue;
        }
        let ctx_idx: Vec<usize> = group
            .iter()
            .map(|t| t.row * batch.n_patches + t.patch)
            .collect();
        let ctx = tape.gather_rows(contexts, &ctx_idx)?;
        let predicted = tape.matmul(ctx, ids[&format!("pred.w{k}")])?;

        let mut expand = Vec::with_capacity(group.len() * n_cand);
        let mut cand_idx = Vec::with_capacity(group.len() * n_cand);
        for (i, task) in group.iter().enumerate() {
            for &c in &task.candidates {
                expand.push(i);
                cand_idx.push(c);
            }
            targets.push(task.positive_pos);
        }
        let pred_rows = tape.gather_rows(predicted, &expand)?;
        let cand_rows = tape.gather_rows(pooled, &cand_idx)?;
        let prod = tape.mul(pred_rows, cand_rows)?;
        let dots = tape.sum(prod, Some(1))?;
        let scores = tape.reshape(dots, vec![group.len(), n_cand])?;
        score_blocks.push(scores);
    }
    let all_scores = tape.concat(&score_blocks, 0)?;
    tape.softmax_cross_entropy(all_scores, &targets)
}

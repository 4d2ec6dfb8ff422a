//! Versioned JSON checkpoints shared by the CPC and GNN models.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cpc::{CpcConfig, CpcModel};
use crate::error::{Error, Result};
use crate::features::FeatureNormalizer;
use crate::tensor::{ParamSet, Tensor};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamDoc {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    format_version: u32,
    kind: String,
    config: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    normalizer: Option<FeatureNormalizer>,
    params: Vec<ParamDoc>,
}

pub struct Checkpoint {
    pub kind: String,
    pub config: serde_json::Value,
    pub normalizer: Option<FeatureNormalizer>,
    pub params: ParamSet,
}

/// Writes `{format_version, kind, config echo, params sorted by name}`.
pub fn save_checkpoint(
    path: &Path,
    kind: &str,
    config: &impl Serialize,
    normalizer: Option<&FeatureNormalizer>,
    params: &ParamSet,
) -> Result<()> {
    let doc = CheckpointDoc {
        format_version: CHECKPOINT_FORMAT_VERSION,
        kind: kind.to_string(),
        config: serde_json::to_value(config)?,
        normalizer: normalizer.cloned(),
        params: params
            .iter()
            .map(|(name, t)| ParamDoc {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                values: t.values().to_vec(),
            })
            .collect(),
    };
    crate::imgio::write_atomic(path, &serde_json::to_vec(&doc)?)
}

pub fn load_checkpoint(path: &Path, expect_kind: &str) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let doc: CheckpointDoc =
        serde_json::from_slice(&bytes).map_err(|e| Error::data(path, e.to_string()))?;
    if doc.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::data(
            path,
            format!(
                "checkpoint format_version {} unsupported (expected {CHECKPOINT_FORMAT_VERSION})",
                doc.format_version
            ),
        ));
    }
    if doc.kind != expect_kind {
        return Err(Error::data(
            path,
            format!("checkpoint kind `{}`, expected `{expect_kind}`", doc.kind),
        ));
    }
    let mut params = ParamSet::new();
    for p in doc.params {
        let tensor = Tensor::new(p.shape, p.values)
            .map_err(|e| Error::data(path, format!("parameter `{}`: {e}", p.name)))?;
        params.insert(p.name, tensor);
    }
    Ok(Checkpoint {
        kind: doc.kind,
        config: doc.config,
        normalizer: doc.normalizer,
        params,
    })
}

/// CPC checkpoint round-trip helpers.
pub fn save_cpc_checkpoint(path: &Path, model: &CpcModel) -> Result<()> {
    save_checkpoint(path, "cpc", &model.config, None, &model.params)
}

pub fn load_cpc_checkpoint(path: &Path) -> Result<CpcModel> {
    let ckpt = load_checkpoint(path, "cpc")?;
    let config: CpcConfig = serde_json::from_value(ckpt.config)
        .map_err(|e| Error::data(path, format!("cpc config: {e}")))?;
    CpcModel::from_parts(config, ckpt.params)
}

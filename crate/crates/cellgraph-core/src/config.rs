//! Run configuration: one JSON document covering every stage, validated
//! up-front and echoed into every output artifact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cpc::CpcConfig;
use crate::error::{Error, Result};
use crate::gnn::GnnConfig;

pub const DATA_ROOT_ENV: &str = "CELLGRAPH_DATA_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerChoice {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KnnSettings {
    pub k: usize,
    pub radius: f64,
}

impl Default for KnnSettings {
    fn default() -> Self {
        KnnSettings {
            k: crate::graph::DEFAULT_KNN_K,
            radius: crate::graph::DEFAULT_KNN_RADIUS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureSettings {
    pub glcm_levels: usize,
    pub use_cpc: bool,
}

impl Default for FeatureSettings {
    fn default() -> Self {
        FeatureSettings {
            glcm_levels: crate::features::DEFAULT_GLCM_LEVELS,
            use_cpc: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Early-stopping patience in epochs, judged on validation AUC.
    pub patience: usize,
    pub folds: usize,
    pub val_fraction: f64,
    pub optimizer: OptimizerChoice,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            epochs: 60,
            batch: 16,
            lr: 1e-3,
            patience: 10,
            folds: 5,
            val_fraction: 0.1,
            optimizer: OptimizerChoice::Adam,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSettings {
    pub per_class: usize,
    pub side: u32,
}

impl Default for SynthSettings {
    fn default() -> Self {
        SynthSettings {
            per_class: 200,
            side: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CropSettings {
    pub size: usize,
    pub tissue_threshold: f64,
}

impl Default for CropSettings {
    fn default() -> Self {
        CropSettings {
            size: crate::dataset::DEFAULT_CROP_SIZE,
            tissue_threshold: crate::dataset::DEFAULT_TISSUE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSettings {
    /// Keep crops of one source image in the same partition.
    pub group_aware: bool,
}

impl Default for SplitSettings {
    fn default() -> Self {
        SplitSettings { group_aware: true }
    }
}

/// CPC patch extraction knobs (the grid geometry itself lives in
/// [`CpcConfig`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatchSettings {
    /// Training patch side.
    pub patch: usize,
    /// Stride between extracted patches.
    pub patch_stride: usize,
    /// Cap on extracted patches (sampled, seeded) to bound training time.
    pub max_patches: usize,
}

impl Default for PatchSettings {
    fn default() -> Self {
        PatchSettings {
            patch: 64,
            patch_stride: 32,
            max_patches: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data_root: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub knn: KnnSettings,
    pub features: FeatureSettings,
    pub patches: PatchSettings,
    pub cpc: CpcConfig,
    pub gnn: GnnConfig,
    pub train: TrainSettings,
    pub synth: SynthSettings,
    pub crop: CropSettings,
    pub split: SplitSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            data_root: None,
            out_dir: PathBuf::from("out"),
            knn: KnnSettings::default(),
            features: FeatureSettings::default(),
            patches: PatchSettings::default(),
            cpc: CpcConfig::default(),
            gnn: GnnConfig::default(),
            train: TrainSettings::default(),
            synth: SynthSettings::default(),
            crop: CropSettings::default(),
            split: SplitSettings::default(),
        }
    }
}

impl RunConfig {
    /// Parses a config file; unknown keys are rejected.
    pub fn from_file(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig =
            serde_json::from_slice(&bytes).map_err(|e| Error::data(path, e.to_string()))?;
        cfg.normalize();
        cfg.validate()?;
        Ok(cfg)
    }

    /// The single top-level seed drives every seeded component.
    pub fn normalize(&mut self) {
        self.cpc.seed = self.seed;
        self.gnn.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.cpc.validate()?;
        self.gnn.validate()?;
        if self.knn.k == 0 || self.knn.radius <= 0.0 {
            return Err(Error::Config("knn needs k >= 1 and radius > 0".into()));
        }
        if !(2..=256).contains(&self.features.glcm_levels) {
            return Err(Error::Config("glcm_levels must be in [2, 256]".into()));
        }
        if self.train.folds < 2 {
            return Err(Error::Config("need at least 2 folds".into()));
        }
        if self.train.batch == 0 {
            return Err(Error::Config("train batch must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.train.val_fraction) {
            return Err(Error::Config("val_fraction must be in [0, 1)".into()));
        }
        if self.patches.patch == 0 || self.patches.patch_stride == 0 {
            return Err(Error::Config("patch geometry must be positive".into()));
        }
        Ok(())
    }

    /// Node feature width for this run.
    pub fn f_dim(&self) -> usize {
        crate::features::HANDCRAFTED_FEATURES
            + if self.features.use_cpc {
                self.cpc.dz
            } else {
                0
            }
    }

    /// Configured data root, falling back to `CELLGRAPH_DATA_ROOT`; the
    /// directory must exist.
    pub fn resolve_data_root(&self) -> Result<PathBuf> {
        let root = match &self.data_root {
            Some(p) => p.clone(),
            None => match std::env::var_os(DATA_ROOT_ENV) {
                Some(v) => PathBuf::from(v),
                None => {
                    return Err(Error::Config(format!(
                        "no data root: set `data_root` in the config or {DATA_ROOT_ENV}"
                    )))
                }
            },
        };
        if !root.is_dir() {
            return Err(Error::MissingDataRoot(root));
        }
        Ok(root)
    }

    pub fn graphs_dir(&self) -> PathBuf {
        self.out_dir.join("graphs")
    }

    pub fn checkpoints_dir(&self) -> PathBuf {
        self.out_dir.join("checkpoints")
    }

    pub fn logs_dir(&self) -> PathBuf {
        self.out_dir.join("logs")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_published_operating_point() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.knn.k, 5);
        assert_eq!(cfg.knn.radius, 100.0);
        assert_eq!(cfg.crop.size, 1550);
        assert_eq!(cfg.train.folds, 5);
        assert_eq!(cfg.f_dim(), 12 + 32);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, br#"{"seed": 3, "bogus_key": 1}"#).unwrap();
        assert!(RunConfig::from_file(&path).is_err());
        std::fs::write(&path, br#"{"seed": 3, "knn": {"k": 4}}"#).unwrap();
        let cfg = RunConfig::from_file(&path).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.knn.k, 4);
        assert_eq!(cfg.knn.radius, 100.0);
        // The run seed propagates into the per-module seeds.
        assert_eq!(cfg.cpc.seed, 3);
        assert_eq!(cfg.gnn.seed, 3);
    }

    #[test]
    fn env_fallback_for_data_root() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig {
            data_root: Some(dir.path().to_path_buf()),
            ..Default::default()
        };
        assert_eq!(cfg.resolve_data_root().unwrap(), dir.path());
        cfg.data_root = Some(dir.path().join("missing"));
        match cfg.resolve_data_root() {
            Err(Error::MissingDataRoot(p)) => {
                assert!(p.to_string_lossy().contains("missing"))
            }
            other => panic!("expected MissingDataRoot, got {other:?}"),
        }
    }
}

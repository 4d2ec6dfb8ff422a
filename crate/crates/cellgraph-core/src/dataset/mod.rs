//! Data preparation: grade-mask labeling, crop augmentation, class-balanced
//! folds, the synthetic tissue generator, and graph persistence.

mod crops;
mod folds;
mod labels;
mod manifest;
mod persist;
mod synth;

#[cfg(test)]
mod tests;

pub use crops::{crop_augment, Crop, DEFAULT_CROP_SIZE, DEFAULT_TISSUE_THRESHOLD};
pub use folds::{fold_partition, make_folds, FoldAssignment, Part};
pub use labels::{label_from_areas, label_from_mask, GradeCall, HIGH_RISK_SCORE_THRESHOLD};
pub use manifest::{Manifest, ManifestEntry, MANIFEST_HEADER};
pub use persist::{load_graph, save_graph, GRAPH_FORMAT_VERSION};
pub use synth::{synth_generate, synth_sample, SynthSample, MIN_SIDE};

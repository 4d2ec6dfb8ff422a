//! Per-nucleus feature extraction: morphometry from instance masks, GLCM
//! texture from the grayscale image, and assembly into node feature rows.

mod glcm;
mod instances;
mod morphology;

pub use glcm::{glcm, glcm_features, GlcmMatrix, DEFAULT_GLCM_LEVELS, DEFAULT_GLCM_OFFSETS};
pub use instances::extract_instances;
pub use morphology::{morphology, MORPH_NAMES};

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MORPH_FEATURES: usize = 8;
pub const TEXTURE_FEATURES: usize = 4;
/// Handcrafted prefix of every node feature row.
pub const HANDCRAFTED_FEATURES: usize = MORPH_FEATURES + TEXTURE_FEATURES;

/// One segmented nucleus. `pixels` are (row, col), sorted; the centroid is
/// the pixel-coordinate mean in (x, y) = (col, row) order.
#[derive(Debug, Clone, PartialEq)]
pub struct NucleusRecord {
    pub id: u32,
    pub centroid: (f64, f64),
    pub pixels: Vec<(u32, u32)>,
    /// (min_row, min_col, max_row, max_col), inclusive.
    pub bbox: (u32, u32, u32, u32),
    pub morph: [f64; MORPH_FEATURES],
    pub texture: [f64; TEXTURE_FEATURES],
}

impl NucleusRecord {
    /// Builds a geometry-only record from a non-empty (row, col) pixel set.
    pub fn from_pixels(id: u32, mut pixels: Vec<(u32, u32)>) -> Self {
        assert!(!pixels.is_empty(), "nucleus pixel set must be non-empty");
        pixels.sort_unstable();
        let n = pixels.len() as f64;
        let (mut sr, mut sc) = (0.0, 0.0);
        let (mut r0, mut c0, mut r1, mut c1) = (u32::MAX, u32::MAX, 0, 0);
        for &(r, c) in &pixels {
            sr += r as f64;
            sc += c as f64;
            r0 = r0.min(r);
            c0 = c0.min(c);
            r1 = r1.max(r);
            c1 = c1.max(c);
        }
        NucleusRecord {
            id,
            centroid: (sc / n, sr / n),
            pixels,
            bbox: (r0, c0, r1, c1),
            morph: [0.0; MORPH_FEATURES],
            texture: [0.0; TEXTURE_FEATURES],
        }
    }

    pub fn area(&self) -> usize {
        self.pixels.len()
    }
}

/// BT.601 luma conversion, rounded and clamped to `[0, 255]`.
pub fn to_grayscale(rgb: &RgbImage) -> GrayImage {
    let mut out = GrayImage::new(rgb.width(), rgb.height());
    for (src, dst) in rgb.pixels().zip(out.pixels_mut()) {
        let y = 0.299 * src[0] as f64 + 0.587 * src[1] as f64 + 0.114 * src[2] as f64;
        dst[0] = y.round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Concatenates morph ‖ texture ‖ cpc into one node feature row.
pub fn assemble_node_features(
    morph: &[f64; MORPH_FEATURES],
    texture: &[f64; TEXTURE_FEATURES],
    cpc: &[f64],
    expected_dim: usize,
) -> Result<Vec<f64>> {
    let dim = HANDCRAFTED_FEATURES + cpc.len();
    if dim != expected_dim {
        return Err(Error::Config(format!(
            "feature row has {dim} dims but the run is configured for {expected_dim}"
        )));
    }
    let mut row = Vec::with_capacity(dim);
    row.extend_from_slice(morph);
    row.extend_from_slice(texture);
    row.extend_from_slice(cpc);
    Ok(row)
}

/// Per-dimension z-score statistics, fit on the training split only and
/// persisted for reuse on validation/test graphs. Constant dimensions map
/// to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

const STD_FLOOR: f64 = 1e-12;

impl FeatureNormalizer {
    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, dim: usize) -> Result<Self> {
        let mut mean = vec![0.0; dim];
        let mut count = 0usize;
        for row in rows.clone() {
            if row.len() != dim {
                return Err(Error::Config(format!(
                    "normalizer fed a row of {} dims, expected {dim}",
                    row.len()
                )));
            }
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::EmptyInput("feature normalizer"));
        }
        for m in &mut mean {
            *m /= count as f64;
        }
        let mut var = vec![0.0; dim];
        for row in rows {
            for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / count as f64).sqrt()).collect();
        Ok(FeatureNormalizer { mean, std })
    }

    pub fn apply(&self, row: &mut [f64]) {
        for ((v, &m), &s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = if s > STD_FLOOR { (*v - m) / s } else { 0.0 };
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Writes the handcrafted features to CSV with header
/// `id,morph1..morph8,tex1..tex4`.
pub fn write_features_csv(path: &std::path::Path, records: &[NucleusRecord]) -> Result<()> {
    let mut out = String::from("id");
    for i in 1..=MORPH_FEATURES {
        out.push_str(&format!(",morph{i}"));
    }
    for i in 1..=TEXTURE_FEATURES {
        out.push_str(&format!(",tex{i}"));
    }
    out.push('\n');
    for rec in records {
        out.push_str(&rec.id.to_string());
        for v in rec.morph.iter().chain(rec.texture.iter()) {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    crate::imgio::write_atomic(path, out.as_bytes())
}

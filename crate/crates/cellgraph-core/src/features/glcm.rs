//! Gray-level co-occurrence matrices restricted to a nucleus pixel set.

use image::GrayImage;

use crate::error::{Error, Result};
use crate::features::{NucleusRecord, TEXTURE_FEATURES};

pub const DEFAULT_GLCM_LEVELS: usize = 16;
/// (row, col) offsets; each is also counted with its negation, so one
/// symmetric matrix accumulates all directions.
pub const DEFAULT_GLCM_OFFSETS: [(i32, i32); 4] = [(0, 1), (1, 0), (1, 1), (1, -1)];

/// Normalized co-occurrence matrix. `counts` keeps the raw symmetric
/// integer tallies; `probs` sums to 1 whenever any pair exists.
#[derive(Debug, Clone, PartialEq)]
pub struct GlcmMatrix {
    pub levels: usize,
    pub counts: Vec<u64>,
    pub probs: Vec<f64>,
    pub pair_count: u64,
    pub symmetric: bool,
}

impl GlcmMatrix {
    pub fn zero_pairs(&self) -> bool {
        self.pair_count == 0
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.probs[i * self.levels + j]
    }
}

#[inline]
fn quantize(v: u8, levels: usize) -> usize {
    v as usize * levels / 256
}

/// Counts intensity pairs at each offset (and its negation) where both
/// pixels belong to the nucleus pixel set, quantized to `levels` bins.
pub fn glcm(
    gray: &GrayImage,
    rec: &NucleusRecord,
    levels: usize,
    offsets: &[(i32, i32)],
) -> Result<GlcmMatrix> {
    if !(2..=256).contains(&levels) {
        return Err(Error::Config(format!(
            "glcm levels must be in [2, 256], got {levels}"
        )));
    }
    if offsets.is_empty() {
        return Err(Error::EmptyInput("glcm offsets"));
    }
    let (r0, c0, r1, c1) = rec.bbox;
    let bw = (c1 - c0 + 1) as i64;
    let bh = (r1 - r0 + 1) as i64;
    let mut member = vec![false; (bw * bh) as usize];
    for &(r, c) in &rec.pixels {
        member[((r - r0) as i64 * bw + (c - c0) as i64) as usize] = true;
    }
    let inside = |r: i64, c: i64| -> bool {
        r >= r0 as i64
            && r <= r1 as i64
            && c >= c0 as i64
            && c <= c1 as i64
            && member[((r - r0 as i64) * bw + (c - c0 as i64)) as usize]
    };
    let (w, h) = (gray.width() as i64, gray.height() as i64);
    let raw = gray.as_raw();

    let mut counts = vec![0u64; levels * levels];
    let mut pairs = 0u64;
    for &(r, c) in &rec.pixels {
        let a = quantize(raw[(r as i64 * w + c as i64) as usize], levels);
        for &(dr, dc) in offsets {
            let (nr, nc) = (r as i64 + dr as i64, c as i64 + dc as i64);
            if nr < 0 || nc < 0 || nr >= h || nc >= w || !inside(nr, nc) {
                continue;
            }
            let b = quantize(raw[(nr * w + nc) as usize], levels);
            counts[a * levels + b] += 1;
            counts[b * levels + a] += 1;
            pairs += 1;
        }
    }
    let total: u64 = 2 * pairs;
    let probs = if total == 0 {
        vec![0.0; levels * levels]
    } else {
        counts.iter().map(|&c| c as f64 / total as f64).collect()
    };
    Ok(GlcmMatrix {
        levels,
        counts,
        probs,
        pair_count: pairs,
        symmetric: true,
    })
}

/// Second-order statistics in the order
/// `[dissimilarity, homogeneity, energy, asm]`.
///
/// A zero-pair matrix returns the constant-texture limit (0, 1, 1, 1).
pub fn glcm_features(m: &GlcmMatrix) -> [f64; TEXTURE_FEATURES] {
    if m.zero_pairs() {
        return [0.0, 1.0, 1.0, 1.0];
    }
    let mut dissimilarity = 0.0;
    let mut homogeneity = 0.0;
    let mut asm = 0.0;
    for i in 0..m.levels {
        for j in 0..m.levels {
            let p = m.probs[i * m.levels + j];
            if p == 0.0 {
                continue;
            }
            let d = (i as f64 - j as f64).abs();
            dissimilarity += p * d;
            homogeneity += p / (1.0 + d * d);
            asm += p * p;
        }
    }
    [dissimilarity, homogeneity, asm.sqrt(), asm]
}

//! Graph-level labels from pixel-level grade masks.

use image::GrayImage;

use crate::graph::RiskLabel;

pub const HIGH_RISK_SCORE_THRESHOLD: u8 = 6;

/// Primary/secondary grade call for one mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradeCall {
    pub primary: u8,
    pub secondary: u8,
    /// primary + secondary; 0 for benign masks.
    pub score: u8,
    pub label: RiskLabel,
}

/// Largest-area grade becomes primary, second largest secondary (equal to
/// primary when only one grade is present); area ties break toward the
/// higher grade. Score ≥ 6 is high-risk; a mask without graded pixels is a
/// benign low-risk sample with score 0.
pub fn label_from_mask(mask: &GrayImage) -> GradeCall {
    let mut areas = [0u64; 6];
    for p in mask.pixels() {
        let v = p[0].min(5);
        areas[v as usize] += 1;
    }
    label_from_areas(&areas)
}

/// Same rule over precomputed per-grade pixel areas (index = grade 0–5).
pub fn label_from_areas(areas: &[u64; 6]) -> GradeCall {
    // Iterate ascending and accept >= so ties land on the higher grade.
    let mut primary = 0u8;
    let mut best = 0u64;
    for grade in 1..=5u8 {
        if areas[grade as usize] > 0 && areas[grade as usize] >= best {
            best = areas[grade as usize];
            primary = grade;
        }
    }
    if primary == 0 {
        return GradeCall {
            primary: 0,
            secondary: 0,
            score: 0,
            label: RiskLabel::Low,
        };
    }
    let mut secondary = 0u8;
    let mut second_best = 0u64;
    for grade in 1..=5u8 {
        if grade == primary {
            continue;
        }
        if areas[grade as usize] > 0 && areas[grade as usize] >= second_best {
            second_best = areas[grade as usize];
            secondary = grade;
        }
    }
    if secondary == 0 {
        secondary = primary;
    }
    let score = primary + secondary;
    GradeCall {
        primary,
        secondary,
        score,
        label: if score >= HIGH_RISK_SCORE_THRESHOLD {
            RiskLabel::High
        } else {
            RiskLabel::Low
        },
    }
}

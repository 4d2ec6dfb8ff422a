//! Corner/center crop augmentation with a tissue-presence filter.

use std::collections::BTreeSet;

use image::{GenericImageView, GrayImage, RgbImage};

use crate::dataset::labels::{label_from_mask, GradeCall};
use crate::imgio::MaskImage;

/// Published crop side.
pub const DEFAULT_CROP_SIZE: usize = 1550;
/// A crop counts as tissue when at least this fraction of its instance-mask
/// pixels is foreground.
pub const DEFAULT_TISSUE_THRESHOLD: f64 = 0.01;

pub struct Crop {
    pub index: usize,
    pub x0: u32,
    pub y0: u32,
    pub image: RgbImage,
    pub mask: MaskImage,
    pub grade: Option<GrayImage>,
    /// Present when a grade mask was supplied.
    pub call: Option<GradeCall>,
}

fn crop_mask(mask: &MaskImage, x0: u32, y0: u32, cw: u32, ch: u32) -> MaskImage {
    let copy_region = |width: u32| -> Vec<usize> {
        (0..ch)
            .flat_map(|r| {
                let start = ((y0 + r) * width + x0) as usize;
                start..start + cw as usize
            })
            .collect()
    };
    match mask {
        MaskImage::Binary { width, data, .. } => MaskImage::Binary {
            width: cw,
            height: ch,
            data: copy_region(*width).into_iter().map(|i| data[i]).collect(),
        },
        MaskImage::Labeled { width, data, .. } => MaskImage::Labeled {
            width: cw,
            height: ch,
            data: copy_region(*width).into_iter().map(|i| data[i]).collect(),
        },
    }
}

/// The five candidate crops (four corners + center), deduplicated, filtered
/// by tissue fraction, each labeled from its own grade-mask crop when one
/// is given. Images smaller than `size` in either dimension yield the full
/// image as the single candidate.
pub fn crop_augment(
    image: &RgbImage,
    mask: &MaskImage,
    grade: Option<&GrayImage>,
    size: usize,
    tissue_threshold: f64,
) -> Vec<Crop> {
    let (w, h) = image.dimensions();
    let small = (w as usize) < size || (h as usize) < size;
    let (cw, ch) = if small {
        (w, h)
    } else {
        (size as u32, size as u32)
    };
    let offsets: BTreeSet<(u32, u32)> = if small {
        BTreeSet::from([(0u32, 0u32)])
    } else {
        let (mx, my) = (w - cw, h - ch);
        BTreeSet::from([(0, 0), (mx, 0), (0, my), (mx, my), (mx / 2, my / 2)])
    };

    let mut out = Vec::new();
    for (index, &(x0, y0)) in offsets.iter().enumerate() {
        let mask_crop = crop_mask(mask, x0, y0, cw, ch);
        let tissue = mask_crop.foreground_pixels() as f64 / (cw as f64 * ch as f64);
        if tissue < tissue_threshold {
            continue;
        }
        let image_crop = image.view(x0, y0, cw, ch).to_image();
        let grade_crop = grade.map(|g| image::imageops::crop_imm(g, x0, y0, cw, ch).to_image());
        let call = grade_crop.as_ref().map(label_from_mask);
        out.push(Crop {
            index,
            x0,
            y0,
            image: image_crop,
            mask: mask_crop,
            grade: grade_crop,
            call,
        });
    }
    out
}

//! PNG loading/saving and atomic file writes.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageBuffer, ImageFormat, Luma, RgbImage};

use crate::error::{Error, Result};

/// 16-bit single-channel buffer used for labeled instance masks.
pub type Gray16Image = ImageBuffer<Luma<u16>, Vec<u16>>;

/// Writes via a temp file in the same directory plus rename, so readers
/// never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp: PathBuf = path.to_path_buf();
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    tmp.set_file_name(format!(".{}.tmp-{}", name, std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| Error::data(path, e.to_string()))?;
    Ok(img.to_rgb8())
}

/// Loads an 8-bit grade mask (values 0–5).
pub fn load_grade_mask(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|e| Error::data(path, e.to_string()))?;
    let gray = match img {
        DynamicImage::ImageLuma8(g) => g,
        other => other.to_luma8(),
    };
    if let Some(&bad) = gray.as_raw().iter().find(|&&v| v > 5) {
        return Err(Error::data(
            path,
            format!("grade mask value {bad} exceeds 5"),
        ));
    }
    Ok(gray)
}

/// Instance mask as loaded from disk: either a 16-bit labeled image
/// (0 = background) or an 8-bit binary image (0/255).
pub enum MaskImage {
    Binary {
        width: u32,
        height: u32,
        data: Vec<bool>,
    },
    Labeled {
        width: u32,
        height: u32,
        data: Vec<u16>,
    },
}

impl MaskImage {
    pub fn from_gray8(img: &GrayImage) -> Result<Self> {
        if let Some(&bad) = img.as_raw().iter().find(|&&v| v != 0 && v != 255) {
            return Err(Error::Config(format!(
                "8-bit instance masks must be binary 0/255, found {bad}"
            )));
        }
        Ok(MaskImage::Binary {
            width: img.width(),
            height: img.height(),
            data: img.as_raw().iter().map(|&v| v == 255).collect(),
        })
    }

    pub fn from_gray16(img: &Gray16Image) -> Self {
        MaskImage::Labeled {
            width: img.width(),
            height: img.height(),
            data: img.as_raw().clone(),
        }
    }

    pub fn dimensions(&self) -> (u32, u32) {
        match self {
            MaskImage::Binary { width, height, .. } => (*width, *height),
            MaskImage::Labeled { width, height, .. } => (*width, *height),
        }
    }

    /// Count of non-background pixels.
    pub fn foreground_pixels(&self) -> usize {
        match self {
            MaskImage::Binary { data, .. } => data.iter().filter(|&&b| b).count(),
            MaskImage::Labeled { data, .. } => data.iter().filter(|&&v| v != 0).count(),
        }
    }
}

pub fn load_mask(path: &Path) -> Result<MaskImage> {
    let img = image::open(path).map_err(|e| Error::data(path, e.to_string()))?;
    match img {
        DynamicImage::ImageLuma8(g) => MaskImage::from_gray8(&g),
        DynamicImage::ImageLuma16(g) => Ok(MaskImage::from_gray16(&g)),
        other => Err(Error::data(
            path,
            format!("instance mask must be 8-bit binary or 16-bit labeled, got {other:?}"),
        )),
    }
}

fn encode_png(img: &DynamicImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn save_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    let bytes = encode_png(&DynamicImage::ImageRgb8(img.clone()))?;
    write_atomic(path, &bytes)
}

pub fn save_gray16(path: &Path, img: &Gray16Image) -> Result<()> {
    let bytes = encode_png(&DynamicImage::ImageLuma16(img.clone()))?;
    write_atomic(path, &bytes)
}

pub fn save_gray8(path: &Path, img: &GrayImage) -> Result<()> {
    let bytes = encode_png(&DynamicImage::ImageLuma8(img.clone()))?;
    write_atomic(path, &bytes)
}

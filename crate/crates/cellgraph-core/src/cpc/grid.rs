//! Overlapping cell grids over image patches.

use image::{GrayImage, RgbImage};

use crate::error::{Error, Result};

/// Row-major grid of flattened, per-cell mean-subtracted pixel blocks.
/// Pixel values are scaled to [0, 1] before mean subtraction.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub rows: usize,
    pub cols: usize,
    pub cell: usize,
    pub stride: usize,
    pub channels: usize,
    /// `(rows·cols) × (cell²·channels)` values.
    pub cells: Vec<f64>,
}

impl PatchGrid {
    pub fn cell_dim(&self) -> usize {
        self.cell * self.cell * self.channels
    }

    pub fn n_cells(&self) -> usize {
        self.rows * self.cols
    }
}

fn grid_side(size: usize, cell: usize, stride: usize) -> Result<usize> {
    if cell == 0 || stride == 0 || cell > size {
        return Err(Error::Config(format!(
            "invalid grid geometry: size {size}, cell {cell}, stride {stride}"
        )));
    }
    if !(size - cell).is_multiple_of(stride) {
        return Err(Error::Config(format!(
            "grid does not tile: (size {size} - cell {cell}) is not divisible by stride {stride}"
        )));
    }
    Ok((size - cell) / stride + 1)
}

fn fill_cell(cells: &mut Vec<f64>, block: &mut [f64]) {
    let mean = block.iter().sum::<f64>() / block.len() as f64;
    cells.extend(block.iter().map(|&v| v - mean));
}

/// Grid over a square `size`×`size` region of a grayscale image anchored at
/// `(x0, y0)`. The region must lie inside the image.
pub fn make_grid_gray(
    img: &GrayImage,
    x0: u32,
    y0: u32,
    size: usize,
    cell: usize,
    stride: usize,
) -> Result<PatchGrid> {
    let side = grid_side(size, cell, stride)?;
    if x0 as usize + size > img.width() as usize || y0 as usize + size > img.height() as usize {
        return Err(Error::Config(format!(
            "patch region {size}x{size}@({x0},{y0}) exceeds image {}x{}",
            img.width(),
            img.height()
        )));
    }
    let raw = img.as_raw();
    let w = img.width() as usize;
    let mut cells = Vec::with_capacity(side * side * cell * cell);
    let mut block = vec![0.0; cell * cell];
    for gr in 0..side {
        for gc in 0..side {
            let base_r = y0 as usize + gr * stride;
            let base_c = x0 as usize + gc * stride;
            for r in 0..cell {
                for c in 0..cell {
                    block[r * cell + c] = raw[(base_r + r) * w + base_c + c] as f64 / 255.0;
                }
            }
            fill_cell(&mut cells, &mut block);
        }
    }
    Ok(PatchGrid {
        rows: side,
        cols: side,
        cell,
        stride,
        channels: 1,
        cells,
    })
}

/// RGB variant; cells flatten to `3·cell²` with interleaved channels.
pub fn make_grid_rgb(
    img: &RgbImage,
    x0: u32,
    y0: u32,
    size: usize,
    cell: usize,
    stride: usize,
) -> Result<PatchGrid> {
    let side = grid_side(size, cell, stride)?;
    if x0 as usize + size > img.width() as usize || y0 as usize + size > img.height() as usize {
        return Err(Error::Config(format!(
            "patch region {size}x{size}@({x0},{y0}) exceeds image {}x{}",
            img.width(),
            img.height()
        )));
    }
    let raw = img.as_raw();
    let w = img.width() as usize;
    let mut cells = Vec::with_capacity(side * side * cell * cell * 3);
    let mut block = vec![0.0; cell * cell * 3];
    for gr in 0..side {
        for gc in 0..side {
            let base_r = y0 as usize + gr * stride;
            let base_c = x0 as usize + gc * stride;
            for r in 0..cell {
                for c in 0..cell {
                    let at = ((base_r + r) * w + base_c + c) * 3;
                    let dst = (r * cell + c) * 3;
                    block[dst] = raw[at] as f64 / 255.0;
                    block[dst + 1] = raw[at + 1] as f64 / 255.0;
                    block[dst + 2] = raw[at + 2] as f64 / 255.0;
                }
            }
            fill_cell(&mut cells, &mut block);
        }
    }
    Ok(PatchGrid {
        rows: side,
        cols: side,
        cell,
        stride,
        channels: 3,
        cells,
    })
}

/// Borrowed patch source; must match the model's `rgb` flag.
pub enum PatchSource<'a> {
    Gray(&'a GrayImage),
    Rgb(&'a RgbImage),
}

impl PatchSource<'_> {
    pub fn dimensions(&self) -> (u32, u32) {
        match self {
            PatchSource::Gray(g) => g.dimensions(),
            PatchSource::Rgb(g) => g.dimensions(),
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            PatchSource::Gray(_) => 1,
            PatchSource::Rgb(_) => 3,
        }
    }
}

/// Dispatches on the source kind.
pub fn make_grid(
    src: &PatchSource,
    x0: u32,
    y0: u32,
    size: usize,
    cell: usize,
    stride: usize,
) -> Result<PatchGrid> {
    match src {
        PatchSource::Gray(g) => make_grid_gray(g, x0, y0, size, cell, stride),
        PatchSource::Rgb(g) => make_grid_rgb(g, x0, y0, size, cell, stride),
    }
}

/// Top-left anchors of all `patch`×`patch` tiles at `stride` that fit.
pub fn patch_anchors(width: u32, height: u32, patch: usize, stride: usize) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    if patch == 0 || stride == 0 || patch > width as usize || patch > height as usize {
        return out;
    }
    let mut y = 0usize;
    while y + patch <= height as usize {
        let mut x = 0usize;
        while x + patch <= width as usize {
            out.push((x as u32, y as u32));
            x += stride;
        }
        y += stride;
    }
    out
}

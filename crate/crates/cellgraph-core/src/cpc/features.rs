//! Per-nucleus CPC feature extraction.

use crate::cpc::grid::{make_grid, PatchSource};
use crate::cpc::model::{encode_cells, CpcModel};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

/// Top-left anchor of the window around `(cx, cy)`, shifted (not shrunk)
/// to stay inside the image.
fn window_anchor(cx: f64, cy: f64, window: usize, width: u32, height: u32) -> Result<(u32, u32)> {
    if (width as usize) < window || (height as usize) < window {
        return Err(Error::Config(format!(
            "image {width}x{height} is smaller than the {window}-pixel CPC window"
        )));
    }
    let half = window as f64 / 2.0;
    let x0 = (cx - half)
        .round()
        .clamp(0.0, (width as usize - window) as f64) as u32;
    let y0 = (cy - half)
        .round()
        .clamp(0.0, (height as usize - window) as f64) as u32;
    Ok((x0, y0))
}

/// CPC feature vectors (length D_z) for every centroid: each window's cell
/// grid is encoded with g_enc and mean-pooled. All windows of the image are
/// encoded in one pass.
pub fn nucleus_cpc_features_batch(
    source: &PatchSource,
    centroids: &[(f64, f64)],
    model: &CpcModel,
) -> Result<Vec<Vec<f64>>> {
    if centroids.is_empty() {
        return Ok(Vec::new());
    }
    let cfg = &model.config;
    let want_channels = if cfg.rgb { 3 } else { 1 };
    if source.channels() != want_channels {
        return Err(Error::Config(format!(
            "model expects {want_channels}-channel windows, got {}",
            source.channels()
        )));
    }
    let (width, height) = source.dimensions();
    let mut all_cells: Vec<f64> = Vec::new();
    let mut cells_per_window = 0usize;
    for &(cx, cy) in centroids {
        let (x0, y0) = window_anchor(cx, cy, cfg.window, width, height)?;
        let grid = make_grid(source, x0, y0, cfg.window, cfg.cell, cfg.cell_stride)?;
        cells_per_window = grid.n_cells();
        all_cells.extend_from_slice(&grid.cells);
    }
    let cd = cfg.cell_dim();
    let rows = centroids.len() * cells_per_window;
    let mut tape = Tape::new();
    let ids = model.params.stage(&mut tape)?;
    let cells = tape.leaf(&Tensor::new(vec![rows, cd], all_cells)?)?;
    let latents = encode_cells(&mut tape, &ids, cells)?;
    let pooled = tape.mean_pool_rows(latents, cells_per_window)?;
    let vals = tape.values(pooled);
    Ok(centroids
        .iter()
        .enumerate()
        .map(|(i, _)| vals[i * cfg.dz..(i + 1) * cfg.dz].to_vec())
        .collect())
}

/// Single-nucleus convenience wrapper.
pub fn nucleus_cpc_features(
    source: &PatchSource,
    centroid: (f64, f64),
    model: &CpcModel,
) -> Result<Vec<f64>> {
    Ok(nucleus_cpc_features_batch(source, &[centroid], model)?
        .pop()
        .expect("one centroid in, one vector out"))
}

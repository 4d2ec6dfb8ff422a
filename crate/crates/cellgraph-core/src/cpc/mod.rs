//! Contrastive-predictive-coding feature learner.
//!
//! A grid of overlapping cells is encoded per cell, row latents are pooled
//! and summarized by a causal recurrent context, and linear heads predict
//! future row latents against sampled negatives (InfoNCE). After training,
//! nuclei get the mean-pooled latent of the window around their centroid.

mod features;
mod grid;
mod loss;
mod train;


pub use features::{nucleus_cpc_features, nucleus_cpc_features_batch};
pub use grid::{make_grid, make_grid_gray, make_grid_rgb, patch_anchors, PatchGrid, PatchSource};
pub use loss::{assemble_infonce, info_nce_loss, InfoNceBatch, NceTask};
pub use model::{context_rows, context_step, encode_cells, CpcConfig, CpcModel};
pub use train::{cpc_batch_loss, held_out_loss, train_cpc, CpcEpochLog};

pub mod model;

/// Structured synthetic patches with predictable row progressions: a
/// vertical ramp plus a low-frequency vertical sinusoid, parameters drawn
/// per patch. Used by the self-tests and the gradient/learning checks.
pub fn probe_patches(
    n: usize,
    size: usize,
    cell: usize,
    stride: usize,
    seed: u64,
) -> crate::error::Result<Vec<PatchGrid>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let base = rng.gen_range(60.0..200.0);
        let slope = rng.gen_range(-2.0..2.0);
        let amp = rng.gen_range(15.0..45.0);
        let freq = rng.gen_range(0.5..1.8);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let mut img = image::GrayImage::new(size as u32, size as u32);
        for r in 0..size as u32 {
            let t = r as f64 / size as f64;
            let v =
                base + slope * r as f64 + amp * (std::f64::consts::TAU * freq * t + phase).sin();
            for c in 0..size as u32 {
                let jitter = rng.gen_range(-2.0..2.0);
                img.put_pixel(c, r, image::Luma([(v + jitter).clamp(0.0, 255.0) as u8]));
            }
        }
        out.push(make_grid_gray(&img, 0, 0, size, cell, stride)?);
    }
    Ok(out)
}

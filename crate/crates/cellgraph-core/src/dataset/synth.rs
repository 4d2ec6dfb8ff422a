//! Seeded synthetic tissue generator.
//!
//! Low-risk samples place near-circular nuclei along gland-like rings with
//! wide spacing and smooth interiors; high-risk samples pack elongated,
//! speckled nuclei into dense irregular clusters. The two classes therefore
//! differ in morphology, texture, and spatial statistics by construction.

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::RiskLabel;
use crate::imgio::Gray16Image;

pub const MIN_SIDE: u32 = 256;
/// Upper bound on nuclei per image; keeps graph sizes and training time flat.
const MAX_NUCLEI: usize = 190;

/// Hard floor on center spacing per class. Low-risk stays sparse; high-risk
/// packs 2–3× denser, so nearest-neighbor distances separate the classes.
const LOW_RISK_MIN_SEP: f64 = 17.0;
const HIGH_RISK_MIN_SEP: f64 = 6.0;

pub struct SynthSample {
    pub image: RgbImage,
    pub mask: Gray16Image,
    pub label: RiskLabel,
    pub placed: usize,
}

struct Ellipse {
    cx: f64,
    cy: f64,
    major: f64,
    minor: f64,
    theta: f64,
}

impl Ellipse {
    fn pixels(&self, side: u32) -> Vec<(u32, u32)> {
        let (sin, cos) = self.theta.sin_cos();
        let r = self.major.ceil() as i64 + 1;
        let mut out = Vec::new();
        for dr in -r..=r {
            for dc in -r..=r {
                let y = self.cy.round() as i64 + dr;
                let x = self.cx.round() as i64 + dc;
                if y < 0 || x < 0 || y >= side as i64 || x >= side as i64 {
                    continue;
                }
                let dx = x as f64 - self.cx;
                let dy = y as f64 - self.cy;
                let u = dx * cos + dy * sin;
                let v = -dx * sin + dy * cos;
                if (u / self.major).powi(2) + (v / self.minor).powi(2) <= 1.0 {
                    out.push((y as u32, x as u32));
                }
            }
        }
        out
    }
}

/// Coarse value noise, bilinearly upsampled; one channel in [-1, 1].
fn value_noise(side: u32, cells: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let g = cells + 1;
    let grid: Vec<f64> = (0..g * g).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut out = vec![0.0; (side * side) as usize];
    let scale = cells as f64 / side as f64;
    for r in 0..side {
        for c in 0..side {
            let gy = r as f64 * scale;
            let gx = c as f64 * scale;
            let (y0, x0) = (gy.floor() as u32, gx.floor() as u32);
            let (fy, fx) = (gy - y0 as f64, gx - x0 as f64);
            let at = |y: u32, x: u32| grid[(y.min(g - 1) * g + x.min(g - 1)) as usize];
            let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
            let bot = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
            out[(r * side + c) as usize] = top * (1.0 - fy) + bot * fy;
        }
    }
    out
}

fn render_background(side: u32, rng: &mut ChaCha8Rng) -> RgbImage {
    let base = [232.0, 205.0, 218.0];
    let noise = value_noise(side, 16, rng);
    let mut img = RgbImage::new(side, side);
    for r in 0..side {
        for c in 0..side {
            let n = noise[(r * side + c) as usize] * 10.0;
            let jitter = rng.gen_range(-4.0..4.0);
            let px = [
                (base[0] + n + jitter).clamp(0.0, 255.0) as u8,
                (base[1] + n + jitter).clamp(0.0, 255.0) as u8,
                (base[2] + n + jitter).clamp(0.0, 255.0) as u8,
            ];
            img.put_pixel(c, r, Rgb(px));
        }
    }
    img
}

fn far_enough(centers: &[(f64, f64)], cx: f64, cy: f64, min_sep: f64) -> bool {
    centers
        .iter()
        .all(|&(x, y)| (x - cx).powi(2) + (y - cy).powi(2) >= min_sep * min_sep)
}

/// All candidate pixels and their 8-neighborhood must be unclaimed, so
/// instances can never merge.
fn region_free(mask: &Gray16Image, pixels: &[(u32, u32)]) -> bool {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    pixels.iter().all(|&(r, c)| {
        (-1..=1i64).all(|dr| {
            (-1..=1i64).all(|dc| {
                let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                nr < 0
                    || nc < 0
                    || nr >= h
                    || nc >= w
                    || mask.get_pixel(nc as u32, nr as u32)[0] == 0
            })
        })
    })
}

struct Painter<'a> {
    image: &'a mut RgbImage,
    mask: &'a mut Gray16Image,
    next_id: u16,
}

impl Painter<'_> {
    fn paint(&mut self, e: &Ellipse, pixels: &[(u32, u32)], speckle: bool, rng: &mut ChaCha8Rng) {
        let id = self.next_id;
        self.next_id += 1;
        let base = [
            96.0 + rng.gen_range(-18.0..18.0),
            64.0 + rng.gen_range(-12.0..12.0),
            140.0 + rng.gen_range(-18.0..18.0),
        ];
        for &(r, c) in pixels {
            let shade = if speckle {
                rng.gen_range(-45.0..45.0)
            } else {
                let dx = c as f64 - e.cx;
                let dy = r as f64 - e.cy;
                let d = ((dx * dx + dy * dy).sqrt() / e.major).min(1.0);
                -25.0 * (1.0 - d * d) + rng.gen_range(-2.0..2.0)
            };
            let px = [
                (base[0] + shade).clamp(0.0, 255.0) as u8,
                (base[1] + shade).clamp(0.0, 255.0) as u8,
                (base[2] + shade).clamp(0.0, 255.0) as u8,
            ];
            self.image.put_pixel(c, r, Rgb(px));
            self.mask.put_pixel(c, r, image::Luma([id]));
        }
    }
}

fn synth_low_risk(side: u32, rng: &mut ChaCha8Rng, painter: &mut Painter) -> Vec<(f64, f64)> {
    let scale = (side as f64 / 512.0).powi(2);
    let n_rings = ((8.0 * scale).round() as usize).max(3);
    let mut centers: Vec<(f64, f64)> = Vec::new();
    for _ in 0..n_rings {
        let ring_r = rng.gen_range(42.0..78.0);
        let margin = ring_r + 12.0;
        let cx = rng.gen_range(margin..side as f64 - margin);
        let cy = rng.gen_range(margin..side as f64 - margin);
        let spacing = rng.gen_range(19.0..23.0);
        let count = (std::f64::consts::TAU * ring_r / spacing).floor() as usize;
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        for i in 0..count {
            if centers.len() >= MAX_NUCLEI {
                return centers;
            }
            let angle = phase
                + std::f64::consts::TAU * i as f64 / count as f64
                + rng.gen_range(-0.06..0.06);
            let ncx = cx + ring_r * angle.cos();
            let ncy = cy + ring_r * angle.sin();
            if !far_enough(&centers, ncx, ncy, LOW_RISK_MIN_SEP) {
                continue;
            }
            let radius = rng.gen_range(4.0..6.5);
            let aspect = rng.gen_range(1.0..1.05);
            let e = Ellipse {
                cx: ncx,
                cy: ncy,
                major: radius * aspect,
                minor: radius,
                theta: rng.gen_range(0.0..std::f64::consts::PI),
            };
            let pixels = e.pixels(side);
            if pixels.is_empty() || !region_free(painter.mask, &pixels) {
                continue;
            }
            painter.paint(&e, &pixels, false, rng);
            centers.push((ncx, ncy));
        }
    }
    centers
}

fn synth_high_risk(side: u32, rng: &mut ChaCha8Rng, painter: &mut Painter) -> Vec<(f64, f64)> {
    let scale = (side as f64 / 512.0).powi(2);
    let n_clusters = ((7.0 * scale).round() as usize).max(3);
    let mut centers: Vec<(f64, f64)> = Vec::new();
    for _ in 0..n_clusters {
        let cluster_r = rng.gen_range(32.0..48.0);
        let margin = cluster_r + 12.0;
        let cx = rng.gen_range(margin..side as f64 - margin);
        let cy = rng.gen_range(margin..side as f64 - margin);
        let target = rng.gen_range(24..=34usize);
        let mut placed = 0;
        let mut attempts = 0;
        while placed < target && attempts < target * 40 {
            attempts += 1;
            if centers.len() >= MAX_NUCLEI {
                return centers;
            }
            let rad = cluster_r * rng.gen_range(0.0f64..1.0).sqrt();
            let ang = rng.gen_range(0.0..std::f64::consts::TAU);
            let ncx = cx + rad * ang.cos();
            let ncy = cy + rad * ang.sin();
            if ncx < 10.0 || ncy < 10.0 || ncx > side as f64 - 10.0 || ncy > side as f64 - 10.0 {
                continue;
            }
            if !far_enough(&centers, ncx, ncy, HIGH_RISK_MIN_SEP) {
                continue;
            }
            let minor = rng.gen_range(1.6..2.3);
            let ratio = rng.gen_range(2.0..4.0);
            let e = Ellipse {
                cx: ncx,
                cy: ncy,
                major: minor * ratio,
                minor,
                theta: rng.gen_range(0.0..std::f64::consts::PI),
            };
            let pixels = e.pixels(side);
            if pixels.is_empty() || !region_free(painter.mask, &pixels) {
                continue;
            }
            painter.paint(&e, &pixels, true, rng);
            centers.push((ncx, ncy));
            placed += 1;
        }
    }
    centers
}

/// One synthetic image + labeled instance mask. Bit-identical for the same
/// (label, side, stream, seed).
pub fn synth_sample(label: RiskLabel, side: u32, seed: u64, stream: u64) -> Result<SynthSample> {
    if side < MIN_SIDE {
        return Err(Error::Config(format!(
            "synthetic image side must be >= {MIN_SIDE}, got {side}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut image = render_background(side, &mut rng);
    let mut mask = Gray16Image::new(side, side);
    let mut painter = Painter {
        image: &mut image,
        mask: &mut mask,
        next_id: 1,
    };
    let centers = match label {
        RiskLabel::Low => synth_low_risk(side, &mut rng, &mut painter),
        RiskLabel::High => synth_high_risk(side, &mut rng, &mut painter),
    };
    Ok(SynthSample {
        image,
        mask,
        label,
        placed: centers.len(),
    })
}

/// `n_per_class` samples per label; low-risk streams come first.
pub fn synth_generate(n_per_class: usize, side: u32, seed: u64) -> Result<Vec<SynthSample>> {
    let mut out = Vec::with_capacity(2 * n_per_class);
    for i in 0..n_per_class {
        out.push(synth_sample(RiskLabel::Low, side, seed, i as u64)?);
    }
    for i in 0..n_per_class {
        out.push(synth_sample(
            RiskLabel::High,
            side,
            seed,
            (n_per_class + i) as u64,
        )?);
    }
    Ok(out)
}

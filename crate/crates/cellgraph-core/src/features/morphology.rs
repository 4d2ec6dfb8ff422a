//! Moment-based shape descriptors for a nucleus pixel set.

use std::f64::consts::{PI, SQRT_2};

use crate::features::{NucleusRecord, MORPH_FEATURES};

/// Fixed feature order; checkpoints depend on it.
pub const MORPH_NAMES: [&str; MORPH_FEATURES] = [
    "area",
    "perimeter",
    "roundness",
    "eccentricity",
    "solidity",
    "orientation",
    "major_axis",
    "minor_axis",
];

/// The eight morphological features:
/// area, perimeter, roundness (4πA/P²), eccentricity, solidity,
/// orientation (radians in (−π/2, π/2]), major and minor axis lengths.
///
/// Degenerate sets fall back to eccentricity 0, orientation 0, solidity 1.
pub fn morphology(rec: &NucleusRecord) -> [f64; MORPH_FEATURES] {
    let area = rec.pixels.len() as f64;
    let perimeter = perimeter_estimate(rec);
    let roundness = 4.0 * PI * area / (perimeter * perimeter);

    // Central second moments with x = col, y = row.
    let (cx, cy) = rec.centroid;
    let (mut mu20, mut mu02, mut mu11) = (0.0, 0.0, 0.0);
    for &(r, c) in &rec.pixels {
        let dx = c as f64 - cx;
        let dy = r as f64 - cy;
        mu20 += dx * dx;
        mu02 += dy * dy;
        mu11 += dx * dy;
    }
    let trace = mu20 + mu02;
    let det_term = ((mu20 - mu02) * (mu20 - mu02) + 4.0 * mu11 * mu11).sqrt();
    let l1 = (trace + det_term) / 2.0;
    let l2 = (trace - det_term) / 2.0;

    let eccentricity = if l1 > 1e-12 {
        (1.0 - (l2 / l1).max(0.0)).max(0.0).sqrt()
    } else {
        0.0
    };
    let orientation = if mu11 == 0.0 && mu20 == mu02 {
        0.0
    } else {
        0.5 * (2.0 * mu11).atan2(mu20 - mu02)
    };
    let major = 4.0 * (l1.max(0.0) / area).sqrt();
    let minor = 4.0 * (l2.max(0.0) / area).sqrt();
    let solidity = (area / hull_area(rec)).min(1.0);

    [
        area,
        perimeter,
        roundness,
        eccentricity,
        solidity,
        orientation,
        major,
        minor,
    ]
}

/// Crofton 4-direction perimeter over 2×2 boundary configurations, floored
/// by the isoperimetric bound 2√(πA) so roundness stays ≤ 1 on degenerate
/// sets where the estimator under-shoots.
fn perimeter_estimate(rec: &NucleusRecord) -> f64 {
    let (r0, c0, r1, c1) = rec.bbox;
    let w = (c1 - c0 + 1) as usize;
    let h = (r1 - r0 + 1) as usize;
    let mut grid = vec![false; w * h];
    for &(r, c) in &rec.pixels {
        grid[(r - r0) as usize * w + (c - c0) as usize] = true;
    }
    let at = |r: isize, c: isize| -> usize {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0
        } else {
            grid[r as usize * w + c as usize] as usize
        }
    };
    let coef = {
        let a = PI / 4.0 * (1.0 + 1.0 / SQRT_2);
        let b = PI / (4.0 * SQRT_2);
        let c = PI / (2.0 * SQRT_2);
        let d = PI / 4.0;
        let e = PI / 2.0;
        [0.0, a, b, c, 0.0, a, 0.0, b, d, e, 0.0, 0.0, d, e, 0.0, 0.0]
    };
    let mut total = 0.0;
    for r in 0..=h as isize {
        for c in 0..=w as isize {
            let code = at(r, c) + 2 * at(r - 1, c) + 4 * at(r, c - 1) + 8 * at(r - 1, c - 1);
            total += coef[code];
        }
    }
    let iso_bound = 2.0 * (PI * rec.pixels.len() as f64).sqrt();
    total.max(iso_bound)
}

/// Convex hull area over pixel corner points (each pixel a unit square).
/// Only row-extreme pixels can contribute hull vertices.
fn hull_area(rec: &NucleusRecord) -> f64 {
    let (r0, _, r1, _) = rec.bbox;
    let rows = (r1 - r0 + 1) as usize;
    let mut extremes: Vec<(u32, u32)> = vec![(u32::MAX, 0); rows];
    for &(r, c) in &rec.pixels {
        let e = &mut extremes[(r - r0) as usize];
        e.0 = e.0.min(c);
        e.1 = e.1.max(c);
    }
    let mut points = Vec::with_capacity(rows * 4);
    for (i, &(cmin, cmax)) in extremes.iter().enumerate() {
        if cmin == u32::MAX {
            continue;
        }
        let r = (r0 as usize + i) as f64;
        for (x, y) in [
            (cmin as f64 - 0.5, r - 0.5),
            (cmin as f64 - 0.5, r + 0.5),
            (cmax as f64 + 0.5, r - 0.5),
            (cmax as f64 + 0.5, r + 0.5),
        ] {
            points.push((x, y));
        }
    }
    let hull = convex_hull(&mut points);
    polygon_area(&hull).max(1e-12)
}

/// Andrew's monotone chain; returns hull vertices in order.
fn convex_hull(points: &mut Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    points.dedup();
    if points.len() <= 2 {
        return points.clone();
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(points.len() * 2);
    for &p in points.iter() {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in points.iter().rev() {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
        {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

fn polygon_area(poly: &[(f64, f64)]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..poly.len() {
        let (x1, y1) = poly[i];
        let (x2, y2) = poly[(i + 1) % poly.len()];
        s += x1 * y2 - x2 * y1;
    }
    s.abs() / 2.0
}

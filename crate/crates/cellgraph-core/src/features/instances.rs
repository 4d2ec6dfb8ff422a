//! Instance extraction from labeled or binary masks.

use std::collections::HashMap;

use crate::features::NucleusRecord;
use crate::imgio::MaskImage;

/// One record per instance. Labeled masks group pixels by label value;
/// binary masks get 8-connected component labeling with ids assigned in
/// row-major discovery order (1-based). Border-touching instances are
/// retained; an all-background mask yields an empty list.
pub fn extract_instances(mask: &MaskImage) -> Vec<NucleusRecord> {
    match mask {
        MaskImage::Labeled {
            width,
            height,
            data,
        } => {
            let mut groups: HashMap<u16, Vec<(u32, u32)>> = HashMap::new();
            for r in 0..*height {
                for c in 0..*width {
                    let v = data[(r * width + c) as usize];
                    if v != 0 {
                        groups.entry(v).or_default().push((r, c));
                    }
                }
            }
            let mut ids: Vec<u16> = groups.keys().copied().collect();
            ids.sort_unstable();
            ids.into_iter()
                .map(|id| NucleusRecord::from_pixels(id as u32, groups.remove(&id).unwrap()))
                .collect()
        }
        MaskImage::Binary {
            width,
            height,
            data,
        } => connected_components(*width, *height, data),
    }
}

/// Two-pass union-find labeling with 8-connectivity.
fn connected_components(width: u32, height: u32, data: &[bool]) -> Vec<NucleusRecord> {
    let (w, h) = (width as usize, height as usize);
    let mut labels = vec![0u32; w * h];
    let mut parent: Vec<u32> = vec![0]; // parent[0] unused (background)

    fn find(parent: &mut [u32], mut x: u32) -> u32 {
        while parent[x as usize] != x {
            parent[x as usize] = parent[parent[x as usize] as usize];
            x = parent[x as usize];
        }
        x
    }
    fn union(parent: &mut [u32], a: u32, b: u32) {
        let (ra, rb) = (find(parent, a), find(parent, b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            parent[hi as usize] = lo;
        }
    }

    for r in 0..h {
        for c in 0..w {
            if !data[r * w + c] {
                continue;
            }
            // Scan-order neighbors already labeled: NW, N, NE, W.
            let mut best = 0u32;
            let mut hit = [0u32; 4];
            let mut hits = 0;
            let neigh = [
                (r.wrapping_sub(1), c.wrapping_sub(1)),
                (r.wrapping_sub(1), c),
                (r.wrapping_sub(1), c + 1),
                (r, c.wrapping_sub(1)),
            ];
            for (nr, nc) in neigh {
                if nr < h && nc < w {
                    let l = labels[nr * w + nc];
                    if l != 0 {
                        hit[hits] = l;
                        hits += 1;
                        if best == 0 || l < best {
                            best = l;
                        }
                    }
                }
            }
            if best == 0 {
                let fresh = parent.len() as u32;
                parent.push(fresh);
                labels[r * w + c] = fresh;
            } else {
                labels[r * w + c] = best;
                for &l in &hit[..hits] {
                    union(&mut parent, best, l);
                }
            }
        }
    }

    // Second pass: resolve roots and compact to 1..k in discovery order.
    let mut compact: HashMap<u32, u32> = HashMap::new();
    let mut groups: Vec<Vec<(u32, u32)>> = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let l = labels[r * w + c];
            if l == 0 {
                continue;
            }
            let root = find(&mut parent, l);
            let next = groups.len() as u32 + 1;
            let id = *compact.entry(root).or_insert_with(|| {
                groups.push(Vec::new());
                next
            });
            groups[(id - 1) as usize].push((r as u32, c as u32));
        }
    }
    groups
        .into_iter()
        .enumerate()
        .map(|(i, px)| NucleusRecord::from_pixels(i as u32 + 1, px))
        .collect()
}

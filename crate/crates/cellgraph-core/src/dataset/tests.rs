use super::*;
use crate::features::{extract_instances, morphology};
use crate::graph::{Centroid, KdTree, RiskLabel};
use crate::imgio::MaskImage;
use image::{GrayImage, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ── labels ────────────────────────────────────────────────────────────

fn grade_mask_of(areas: &[(u8, u64)], side: u32) -> GrayImage {
    let mut img = GrayImage::new(side, side);
    let mut it = img.pixels_mut();
    for &(grade, count) in areas {
        for _ in 0..count {
            it.next().expect("mask too small for requested areas")[0] = grade;
        }
    }
    img
}

#[test]
fn majority_grades_sum_to_score() {
    let mask = grade_mask_of(&[(3, 60), (4, 40)], 32);
    let call = label_from_mask(&mask);
    assert_eq!((call.primary, call.secondary, call.score), (3, 4, 7));
    assert_eq!(call.label, RiskLabel::High);
}

#[test]
fn single_grade_doubles_as_secondary() {
    let mask = grade_mask_of(&[(2, 100)], 32);
    let call = label_from_mask(&mask);
    assert_eq!((call.primary, call.secondary, call.score), (2, 2, 4));
    assert_eq!(call.label, RiskLabel::Low);
}

#[test]
fn benign_mask_is_low_risk_score_zero() {
    let mask = GrayImage::new(16, 16);
    let call = label_from_mask(&mask);
    assert_eq!(call.score, 0);
    assert_eq!(call.label, RiskLabel::Low);
}

#[test]
fn area_ties_break_toward_higher_grade() {
    let call = label_from_areas(&[0, 0, 50, 50, 0, 0]);
    assert_eq!((call.primary, call.secondary), (3, 2));
    let call = label_from_areas(&[0, 0, 0, 30, 30, 30]);
    assert_eq!((call.primary, call.secondary, call.score), (5, 4, 9));
}

#[test]
fn labeling_depends_only_on_area_histogram() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut values: Vec<u8> = std::iter::empty()
        .chain(std::iter::repeat_n(3u8, 200))
        .chain(std::iter::repeat_n(4u8, 120))
        .chain(std::iter::repeat_n(0u8, 704))
        .collect();
    let mut img = GrayImage::new(32, 32);
    let base = {
        for (p, &v) in img.pixels_mut().zip(&values) {
            p[0] = v;
        }
        label_from_mask(&img)
    };
    for _ in 0..5 {
        values.shuffle(&mut rng);
        for (p, &v) in img.pixels_mut().zip(&values) {
            p[0] = v;
        }
        assert_eq!(label_from_mask(&img), base);
    }
}

// ── crops ─────────────────────────────────────────────────────────────

fn mask_with_blob(side: u32, r0: u32, c0: u32, extent: u32) -> MaskImage {
    let mut data = vec![false; (side * side) as usize];
    for r in r0..(r0 + extent).min(side) {
        for c in c0..(c0 + extent).min(side) {
            data[(r * side + c) as usize] = true;
        }
    }
    MaskImage::Binary {
        width: side,
        height: side,
        data,
    }
}

#[test]
fn published_crop_defaults() {
    assert_eq!(DEFAULT_CROP_SIZE, 1550);
    assert!((DEFAULT_TISSUE_THRESHOLD - 0.01).abs() < 1e-15);
}

#[test]
fn blank_corners_are_discarded() {
    let image = RgbImage::new(100, 100);
    // Tissue only around the center.
    let mask = mask_with_blob(100, 40, 40, 20);
    let crops = crop_augment(&image, &mask, None, 40, 0.01);
    // Corner crops (offsets 0 and 60) never touch rows/cols 40..60.
    assert_eq!(crops.len(), 1);
    assert_eq!((crops[0].x0, crops[0].y0), (30, 30));
}

#[test]
fn exact_size_image_collapses_to_one_crop() {
    let image = RgbImage::new(64, 64);
    let mask = mask_with_blob(64, 0, 0, 64);
    let crops = crop_augment(&image, &mask, None, 64, 0.01);
    assert_eq!(crops.len(), 1);
}

#[test]
fn small_image_yields_full_frame_crop() {
    let image = RgbImage::new(48, 40);
    let mask = mask_with_blob(48, 0, 0, 48);
    // Mask dims follow the image here.
    let mask = match mask {
        MaskImage::Binary { data, .. } => MaskImage::Binary {
            width: 48,
            height: 40,
            data: data[..(48 * 40) as usize].to_vec(),
        },
        other => other,
    };
    let crops = crop_augment(&image, &mask, None, 100, 0.01);
    assert_eq!(crops.len(), 1);
    assert_eq!(crops[0].image.dimensions(), (48, 40));
}

#[test]
fn crops_are_labeled_from_their_own_grade_region() {
    let image = RgbImage::new(80, 80);
    let mask = mask_with_blob(80, 0, 0, 80);
    let mut grade = GrayImage::new(80, 80);
    // Top-left quadrant grade 4+5, bottom-right grade 2 only.
    for r in 0..40 {
        for c in 0..40 {
            grade.put_pixel(c, r, image::Luma([if (r + c) % 2 == 0 { 4 } else { 5 }]));
        }
    }
    for r in 40..80 {
        for c in 40..80 {
            grade.put_pixel(c, r, image::Luma([2]));
        }
    }
    let crops = crop_augment(&image, &mask, Some(&grade), 40, 0.01);
    let top_left = crops.iter().find(|c| (c.x0, c.y0) == (0, 0)).unwrap();
    assert_eq!(top_left.call.unwrap().label, RiskLabel::High);
    let bottom_right = crops.iter().find(|c| (c.x0, c.y0) == (40, 40)).unwrap();
    assert_eq!(bottom_right.call.unwrap().label, RiskLabel::Low);
    assert_eq!(bottom_right.call.unwrap().score, 4);
}

// ── folds ─────────────────────────────────────────────────────────────

fn samples_of(n_low: usize, n_high: usize) -> Vec<(String, RiskLabel)> {
    let mut out = Vec::new();
    for i in 0..n_low {
        out.push((format!("low_{i:04}"), RiskLabel::Low));
    }
    for i in 0..n_high {
        out.push((format!("high_{i:04}"), RiskLabel::High));
    }
    out
}

#[test]
fn balanced_hundred_gives_ten_per_class_per_fold() {
    let samples = samples_of(50, 50);
    let assignment = make_folds(&samples, 5, 7, true).unwrap();
    for fold in 0..5 {
        let mut low = 0;
        let mut high = 0;
        for (i, (_, label)) in samples.iter().enumerate() {
            if assignment.fold_of_sample(i) == fold {
                match label {
                    RiskLabel::Low => low += 1,
                    RiskLabel::High => high += 1,
                }
            }
        }
        assert_eq!((low, high), (10, 10), "fold {fold}");
    }
}

#[test]
fn fold_assignment_is_deterministic() {
    let samples = samples_of(23, 31);
    let a = make_folds(&samples, 5, 99, true).unwrap();
    let b = make_folds(&samples, 5, 99, true).unwrap();
    assert_eq!(a, b);
}

#[test]
fn class_imbalance_per_fold_at_most_one() {
    let samples = samples_of(23, 31);
    let assignment = make_folds(&samples, 5, 3, true).unwrap();
    for class in [RiskLabel::Low, RiskLabel::High] {
        let mut counts = vec![0usize; 5];
        for (i, (_, label)) in samples.iter().enumerate() {
            if *label == class {
                counts[assignment.fold_of_sample(i)] += 1;
            }
        }
        let (min, max) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(max - min <= 1, "class {class:?} counts {counts:?}");
    }
}

#[test]
fn groups_never_straddle_partitions() {
    // Three crops per source image.
    let mut samples = Vec::new();
    for i in 0..30 {
        let label = if i % 2 == 0 {
            RiskLabel::Low
        } else {
            RiskLabel::High
        };
        for _crop in 0..3 {
            samples.push((format!("img_{i:03}"), label));
        }
    }
    let assignment = make_folds(&samples, 5, 11, true).unwrap();
    for fold in 0..5 {
        let parts = fold_partition(&samples, &assignment, fold, 0.1, 11).unwrap();
        let mut part_of_group: std::collections::BTreeMap<&str, Part> =
            std::collections::BTreeMap::new();
        for (i, part) in parts.iter().enumerate() {
            let group = samples[i].0.as_str();
            if let Some(prev) = part_of_group.get(group) {
                assert_eq!(
                    prev, part,
                    "group {group} straddles partitions in fold {fold}"
                );
            } else {
                part_of_group.insert(group, *part);
            }
        }
        // All three partitions are non-empty and disjoint by construction.
        assert!(parts.contains(&Part::Train));
        assert!(parts.contains(&Part::Val));
        assert!(parts.contains(&Part::Test));
    }
}

#[test]
fn naive_split_lets_crops_separate() {
    let mut samples = Vec::new();
    for i in 0..10 {
        for _crop in 0..4 {
            samples.push((
                format!("img_{i}"),
                if i < 5 {
                    RiskLabel::Low
                } else {
                    RiskLabel::High
                },
            ));
        }
    }
    let assignment = make_folds(&samples, 5, 1, false).unwrap();
    let straddles = (0..10).any(|i| {
        let folds: std::collections::BTreeSet<usize> = (0..samples.len())
            .filter(|&s| samples[s].0 == format!("img_{i}"))
            .map(|s| assignment.fold_of_sample(s))
            .collect();
        folds.len() > 1
    });
    assert!(
        straddles,
        "crop-level splitting should separate same-source crops"
    );
}

#[test]
fn too_few_groups_per_class_is_error() {
    let samples = samples_of(3, 50);
    assert!(make_folds(&samples, 5, 0, true).is_err());
}

// ── synthetic generator ───────────────────────────────────────────────

#[test]
fn synth_below_min_side_is_error() {
    assert!(synth_sample(RiskLabel::Low, 128, 0, 0).is_err());
}

#[test]
fn synth_is_bit_deterministic() {
    let a = synth_sample(RiskLabel::High, 256, 42, 3).unwrap();
    let b = synth_sample(RiskLabel::High, 256, 42, 3).unwrap();
    assert_eq!(a.image.as_raw(), b.image.as_raw());
    assert_eq!(a.mask.as_raw(), b.mask.as_raw());
    let c = synth_sample(RiskLabel::High, 256, 43, 3).unwrap();
    assert_ne!(a.image.as_raw(), c.image.as_raw());
}

#[test]
fn instance_mask_components_equal_placements() {
    for (label, stream) in [(RiskLabel::Low, 0u64), (RiskLabel::High, 1)] {
        let s = synth_sample(label, 320, 9, stream).unwrap();
        let recs = extract_instances(&MaskImage::from_gray16(&s.mask));
        assert_eq!(recs.len(), s.placed, "{label:?}");
        assert!(s.placed > 20, "{label:?} produced only {} nuclei", s.placed);
    }
}

fn mean_ecc_and_nn(label: RiskLabel, seed: u64, streams: std::ops::Range<u64>) -> (f64, f64) {
    let mut eccs = Vec::new();
    let mut nns = Vec::new();
    for stream in streams {
        let s = synth_sample(label, 384, seed, stream).unwrap();
        let recs = extract_instances(&MaskImage::from_gray16(&s.mask));
        let centroids: Vec<Centroid> = recs
            .iter()
            .enumerate()
            .map(|(i, r)| Centroid {
                id: i as u32,
                x: r.centroid.0,
                y: r.centroid.1,
            })
            .collect();
        let tree = KdTree::build(&centroids).unwrap();
        for (i, rec) in recs.iter().enumerate() {
            eccs.push(morphology(rec)[3]);
            let nn = tree.knn(
                centroids[i].x,
                centroids[i].y,
                1,
                f64::INFINITY,
                Some(i as u32),
            );
            if let Some(n) = nn.first() {
                nns.push(n.dist2.sqrt());
            }
        }
    }
    (
        eccs.iter().sum::<f64>() / eccs.len() as f64,
        nns.iter().sum::<f64>() / nns.len() as f64,
    )
}

#[test]
fn classes_differ_in_shape_and_spacing() {
    let (low_ecc, low_nn) = mean_ecc_and_nn(RiskLabel::Low, 5, 0..10);
    let (high_ecc, high_nn) = mean_ecc_and_nn(RiskLabel::High, 5, 10..20);
    assert!(low_ecc < 0.4, "low-risk mean eccentricity {low_ecc}");
    assert!(high_ecc > 0.6, "high-risk mean eccentricity {high_ecc}");
    assert!(
        low_nn >= 2.0 * high_nn,
        "nearest-neighbor spacing must differ 2×: low {low_nn}, high {high_nn}"
    );
}

// ── persistence ───────────────────────────────────────────────────────

fn sample_graph() -> crate::graph::CellGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let features: Vec<f64> = (0..4 * 3).map(|_| rng.gen_range(-5.0..5.0)).collect();
    crate::graph::CellGraph::new(
        "img_007".into(),
        RiskLabel::High,
        3,
        features,
        vec![(0.5, 1.5), (10.25, 3.125), (7.0, 8.0), (2.0, 9.5)],
        crate::graph::EdgeList::new(4, vec![(0, 2), (1, 3), (0, 1)]).unwrap(),
    )
    .unwrap()
}

#[test]
fn graph_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.json");
    let g = sample_graph();
    save_graph(&g, &path).unwrap();
    let loaded = load_graph(&path).unwrap();
    assert_eq!(loaded, g);
}

#[test]
fn empty_edge_graph_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.json");
    let g = crate::graph::CellGraph::new(
        "solo".into(),
        RiskLabel::Low,
        2,
        vec![1.0, 2.0],
        vec![(0.0, 0.0)],
        crate::graph::EdgeList::empty(1),
    )
    .unwrap();
    save_graph(&g, &path).unwrap();
    assert_eq!(load_graph(&path).unwrap(), g);
}

#[test]
fn corrupted_edge_is_named_in_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let doc = serde_json::json!({
        "format_version": 1,
        "source_id": "x",
        "label": 0,
        "f_dim": 1,
        "nodes": [{"id": 0, "x": 0.0, "y": 0.0, "feat": [1.0]}],
        "edges": [[0, 99]]
    });
    std::fs::write(&path, serde_json::to_vec(&doc).unwrap()).unwrap();
    let err = load_graph(&path).unwrap_err().to_string();
    assert!(err.contains("99"), "error should name the edge: {err}");
}

#[test]
fn version_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v2.json");
    let doc = serde_json::json!({
        "format_version": 2,
        "source_id": "x",
        "label": 0,
        "f_dim": 1,
        "nodes": [{"id": 0, "x": 0.0, "y": 0.0, "feat": [1.0]}],
        "edges": []
    });
    std::fs::write(&path, serde_json::to_vec(&doc).unwrap()).unwrap();
    let err = load_graph(&path).unwrap_err().to_string();
    assert!(err.contains("format_version"), "{err}");
}

// ── manifest ──────────────────────────────────────────────────────────

#[test]
fn manifest_round_trip_and_missing_file_check() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.png"), b"x").unwrap();
    std::fs::write(dir.path().join("a_mask.png"), b"x").unwrap();
    let manifest = Manifest {
        root: dir.path().to_path_buf(),
        entries: vec![ManifestEntry {
            source_id: "a".into(),
            image: "a.png".into(),
            instance_mask: "a_mask.png".into(),
            grade_mask: None,
            label: Some(RiskLabel::High),
            fold: Some(2),
        }],
    };
    let path = dir.path().join("manifest.csv");
    manifest.save(&path).unwrap();
    let loaded = Manifest::load(&path).unwrap();
    assert_eq!(loaded, manifest);

    // A dangling reference fails the load.
    let mut broken = manifest.clone();
    broken.entries[0].image = "missing.png".into();
    broken.save(&path).unwrap();
    assert!(Manifest::load(&path).is_err());
}

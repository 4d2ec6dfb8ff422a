//! Property tests for invariants that hold over arbitrary inputs, not
//! just the frozen fixtures.

use proptest::prelude::*;

use cellgraph_core::features::{glcm, glcm_features, NucleusRecord, DEFAULT_GLCM_OFFSETS};
use cellgraph_core::graph::{knn_graph, Centroid};
use cellgraph_core::metrics::{auc, auc_pairwise_oracle};
use cellgraph_core::tensor::{Tape, Tensor};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Narrowing a concatenation recovers the exact parts.
    #[test]
    fn split_inverts_concat(
        rows in 1usize..5,
        cols_a in 1usize..5,
        cols_b in 1usize..5,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..rows * cols_a).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..rows * cols_b).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let mut tape = Tape::new();
        let ta = tape.leaf(&Tensor::matrix(rows, cols_a, a.clone()).unwrap()).unwrap();
        let tb = tape.leaf(&Tensor::matrix(rows, cols_b, b.clone()).unwrap()).unwrap();
        let cat = tape.concat(&[ta, tb], 1).unwrap();
        let back_a = tape.narrow(cat, 1, 0, cols_a).unwrap();
        let back_b = tape.narrow(cat, 1, cols_a, cols_b).unwrap();
        prop_assert_eq!(tape.values(back_a), a.as_slice());
        prop_assert_eq!(tape.values(back_b), b.as_slice());
    }

    /// Adding any constant to a logit row never moves the loss.
    #[test]
    fn cross_entropy_shift_invariance(
        logits in proptest::collection::vec(-30.0f64..30.0, 6),
        shift in -500.0f64..500.0,
        t0 in 0usize..3,
        t1 in 0usize..3,
    ) {
        let targets = [t0, t1];
        let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        let mut tape = Tape::new();
        let a = tape.leaf(&Tensor::matrix(2, 3, logits).unwrap()).unwrap();
        let la = tape.softmax_cross_entropy(a, &targets).unwrap();
        let b = tape.leaf(&Tensor::matrix(2, 3, shifted).unwrap()).unwrap();
        let lb = tape.softmax_cross_entropy(b, &targets).unwrap();
        prop_assert!((tape.values(la)[0] - tape.values(lb)[0]).abs() < 1e-12);
    }

    /// Max-reduce backward is one-hot per reduced slice and sums to the
    /// upstream gradient.
    #[test]
    fn max_backward_is_one_hot(
        rows in 1usize..5,
        cols in 1usize..5,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let vals: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mut tape = Tape::new();
        let x = tape
            .leaf(&Tensor::matrix(rows, cols, vals).unwrap().with_grad())
            .unwrap();
        let m = tape.max(x, Some(1)).unwrap();
        let s = tape.sum(m, None).unwrap();
        tape.backward(s).unwrap();
        let g = tape.grad(x).unwrap();
        for r in 0..rows {
            let slice = &g[r * cols..(r + 1) * cols];
            prop_assert_eq!(slice.iter().filter(|&&v| v != 0.0).count(), 1);
            prop_assert!((slice.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    /// The KNN graph is invariant (as a set of id pairs) under any
    /// permutation of the input point order.
    #[test]
    fn knn_graph_permutation_invariance(
        n in 1usize..40,
        k in 1usize..5,
        seed in any::<u64>(),
        rotate in 0usize..40,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<Centroid> = (0..n as u32)
            .map(|id| Centroid {
                id,
                // Coarse grid forces distance ties and duplicates.
                x: rng.gen_range(0..12) as f64 * 25.0,
                y: rng.gen_range(0..12) as f64 * 25.0,
            })
            .collect();
        let base = knn_graph(&points, k, 100.0).unwrap();
        let mut rotated = points.clone();
        rotated.rotate_left(rotate % n.max(1));
        prop_assert_eq!(knn_graph(&rotated, k, 100.0).unwrap(), base);
    }

    /// GLCM matrices are exactly symmetric, their features sit in the
    /// analytic ranges, and energy² equals ASM.
    #[test]
    fn glcm_symmetry_and_ranges(
        w in 4u32..20,
        h in 4u32..20,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut gray = image::GrayImage::new(w, h);
        for p in gray.pixels_mut() {
            p[0] = rng.gen();
        }
        let mut pixels = Vec::new();
        for r in 0..h {
            for c in 0..w {
                if rng.gen_bool(0.5) {
                    pixels.push((r, c));
                }
            }
        }
        if pixels.is_empty() {
            pixels.push((0, 0));
        }
        let rec = NucleusRecord::from_pixels(1, pixels);
        let m = glcm(&gray, &rec, 8, &DEFAULT_GLCM_OFFSETS).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                prop_assert_eq!(m.counts[i * 8 + j], m.counts[j * 8 + i]);
            }
        }
        let f = glcm_features(&m);
        prop_assert!(f[0] >= 0.0);
        prop_assert!(f[1] > 0.0 && f[1] <= 1.0);
        prop_assert!(f[2] > 0.0 && f[2] <= 1.0);
        prop_assert!(f[3] > 0.0 && f[3] <= 1.0);
        // energy = sqrt(asm); re-squaring rounds at most one ulp.
        prop_assert!((f[2] * f[2] - f[3]).abs() <= f[3] * 4.0 * f64::EPSILON);
    }

    /// Rank-based AUC equals the all-pairs count with 0.5 for ties.
    #[test]
    fn auc_equals_pairwise_count(
        scores in proptest::collection::vec(0usize..10, 2..60),
        labels_seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(labels_seed);
        let s: Vec<f64> = scores.iter().map(|&v| v as f64 / 10.0).collect();
        let l: Vec<usize> = (0..s.len()).map(|_| rng.gen_range(0..2)).collect();
        match (auc(&s, &l).unwrap(), auc_pairwise_oracle(&s, &l)) {
            (None, None) => {}
            (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-12),
            other => prop_assert!(false, "disagreement: {:?}", other),
        }
    }
}

use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pt(id: u32, x: f64, y: f64) -> Centroid {
    Centroid { id, x, y }
}

/// O(n²) reference: for each point, its ≤k nearest within radius, ordered
/// by (distance², id), symmetrized by union.
pub(crate) fn brute_force_knn_graph(points: &[Centroid], k: usize, radius: f64) -> Vec<(u32, u32)> {
    let mut set = std::collections::BTreeSet::new();
    for p in points {
        let mut cands: Vec<(f64, u32)> = points
            .iter()
            .filter(|q| q.id != p.id)
            .map(|q| ((q.x - p.x).powi(2) + (q.y - p.y).powi(2), q.id))
            .filter(|&(d2, _)| d2 <= radius * radius)
            .collect();
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, id) in cands.iter().take(k) {
            set.insert((p.id.min(id), p.id.max(id)));
        }
    }
    set.into_iter().collect()
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, degenerate: bool) -> Vec<Centroid> {
    (0..n as u32)
        .map(|id| {
            if degenerate && rng.gen_bool(0.3) {
                // Collinear or duplicate coordinates.
                let v = rng.gen_range(0..20) as f64 * 10.0;
                if rng.gen_bool(0.5) {
                    pt(id, v, 50.0)
                } else {
                    pt(id, 50.0, v)
                }
            } else {
                pt(id, rng.gen_range(0.0..500.0), rng.gen_range(0.0..500.0))
            }
        })
        .collect()
}

#[test]
fn single_point_tree_has_depth_zero() {
    let tree = KdTree::build(&[pt(0, 3.0, 4.0)]).unwrap();
    assert_eq!(tree.depth(), 0);
    assert_eq!(tree.len(), 1);
}

#[test]
fn empty_input_is_an_error() {
    assert!(matches!(KdTree::build(&[]), Err(Error::EmptyInput(_))));
}

#[test]
fn knn_matches_brute_force_on_uniform_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let points = random_points(&mut rng, 1000, false);
    let tree = KdTree::build(&points).unwrap();
    for _ in 0..50 {
        let (qx, qy) = (rng.gen_range(0.0..500.0), rng.gen_range(0.0..500.0));
        let got = tree.knn(qx, qy, 7, 120.0, None);
        let mut want: Vec<Neighbor> = points
            .iter()
            .map(|p| Neighbor {
                dist2: (p.x - qx).powi(2) + (p.y - qy).powi(2),
                id: p.id,
            })
            .filter(|n| n.dist2 <= 120.0 * 120.0)
            .collect();
        want.sort();
        want.truncate(7);
        assert_eq!(got, want);
    }
}

#[test]
fn duplicate_coordinates_both_returned_by_radius_query() {
    let points = vec![pt(0, 10.0, 10.0), pt(1, 10.0, 10.0), pt(2, 90.0, 90.0)];
    let tree = KdTree::build(&points).unwrap();
    let hits = tree.within_radius(10.0, 10.0, 1.0);
    assert_eq!(hits.iter().map(|n| n.id).collect::<Vec<_>>(), vec![0, 1]);
}

#[test]
fn published_defaults_are_five_neighbors_within_hundred_pixels() {
    assert_eq!(DEFAULT_KNN_K, 5);
    assert_eq!(DEFAULT_KNN_RADIUS, 100.0);
}

#[test]
fn single_node_graph_has_no_edges() {
    let edges = knn_graph(&[pt(0, 1.0, 1.0)], 5, 100.0).unwrap();
    assert_eq!(edges.node_count(), 1);
    assert!(edges.is_empty());
}

#[test]
fn knn_graph_matches_double_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let points = random_points(&mut rng, 50, false);
    let edges = knn_graph(&points, 5, 100.0).unwrap();
    assert_eq!(edges.pairs(), brute_force_knn_graph(&points, 5, 100.0));
}

#[test]
fn knn_graph_oracle_sweep_with_degeneracies() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for trial in 0..60 {
        let n = rng.gen_range(1..200);
        let points = random_points(&mut rng, n, trial % 2 == 0);
        let k = rng.gen_range(1..8);
        let radius = rng.gen_range(20.0..200.0);
        let edges = knn_graph(&points, k, radius).unwrap();
        assert_eq!(
            edges.pairs(),
            brute_force_knn_graph(&points, k, radius),
            "trial {trial} n {n} k {k} radius {radius}"
        );
    }
}

#[test]
fn knn_graph_is_permutation_invariant() {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let points = random_points(&mut rng, 80, true);
    let baseline = knn_graph(&points, 5, 100.0).unwrap();
    for _ in 0..10 {
        let mut shuffled = points.clone();
        shuffled.shuffle(&mut rng);
        let edges = knn_graph(&shuffled, 5, 100.0).unwrap();
        assert_eq!(edges, baseline);
    }
}

#[test]
fn own_selection_degree_at_most_k_and_radius_respected() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let points = random_points(&mut rng, 120, false);
    let (k, radius) = (4, 80.0);
    let tree = KdTree::build(&points).unwrap();
    for p in &points {
        let own = tree.knn(p.x, p.y, k, radius, Some(p.id));
        assert!(own.len() <= k);
        for nb in own {
            assert!(nb.dist2 <= radius * radius);
        }
    }
    // No symmetrized edge exceeds the radius either.
    let edges = knn_graph(&points, k, radius).unwrap();
    for &(u, v) in edges.pairs() {
        let (a, b) = (&points[u as usize], &points[v as usize]);
        let d2 = (a.x - b.x).powi(2) + (a.y - b.y).powi(2);
        assert!(d2 <= radius * radius);
    }
}

#[test]
fn exact_radius_distance_is_included() {
    let points = vec![pt(0, 0.0, 0.0), pt(1, 100.0, 0.0)];
    let edges = knn_graph(&points, 5, 100.0).unwrap();
    assert_eq!(edges.pairs(), &[(0, 1)]);
}

#[test]
fn edge_list_rejects_self_loops_and_bad_endpoints() {
    assert!(EdgeList::new(3, vec![(1, 1)]).is_err());
    assert!(EdgeList::new(3, vec![(0, 3)]).is_err());
    let e = EdgeList::new(3, vec![(2, 0), (0, 2), (1, 0)]).unwrap();
    assert_eq!(e.pairs(), &[(0, 1), (0, 2)]);
}

#[test]
fn two_hop_connects_path_endpoints() {
    let edges = EdgeList::new(3, vec![(0, 1), (1, 2)]).unwrap();
    let adj = adjacency_powers(&edges);
    // (0,2) and (2,0) in the 3×3 matrix
    assert!(adj.two_hop[2] && adj.two_hop[6]);
    assert!(!adj.one_hop[2]);
    for i in 0..3 {
        assert!(!adj.two_hop[i * 3 + i], "diagonal must stay zero");
    }
}

#[test]
fn empty_edge_list_gives_zero_matrices() {
    let adj = adjacency_powers(&EdgeList::empty(4));
    assert!(adj.one_hop.iter().all(|&b| !b));
    assert!(adj.two_hop.iter().all(|&b| !b));
}

/// Dense boolean matrix product oracle for A + A².
pub(crate) fn dense_two_hop_oracle(edges: &EdgeList) -> Vec<bool> {
    let n = edges.node_count();
    let mut a = vec![0u8; n * n];
    for &(u, v) in edges.pairs() {
        a[u as usize * n + v as usize] = 1;
        a[v as usize * n + u as usize] = 1;
    }
    let mut out = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let mut reach = a[i * n + j] != 0;
            if !reach {
                reach = (0..n).any(|k| a[i * n + k] != 0 && a[k * n + j] != 0);
            }
            out[i * n + j] = reach;
        }
    }
    out
}

#[test]
fn adjacency_powers_match_dense_matrix_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let n = rng.gen_range(1..40usize);
        let mut pairs = Vec::new();
        for u in 0..n as u32 {
            for v in (u + 1)..n as u32 {
                if rng.gen_bool(0.15) {
                    pairs.push((u, v));
                }
            }
        }
        let edges = EdgeList::new(n, pairs).unwrap();
        let adj = adjacency_powers(&edges);
        assert_eq!(adj.two_hop, dense_two_hop_oracle(&edges));
    }
}

#[test]
fn induced_subgraph_reindexes() {
    let edges = EdgeList::new(5, vec![(0, 1), (1, 3), (3, 4), (2, 4)]).unwrap();
    let sub = edges.induced(&[1, 3, 4]).unwrap();
    assert_eq!(sub.node_count(), 3);
    assert_eq!(sub.pairs(), &[(0, 1), (1, 2)]);
}

#[test]
fn centroid_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("centroids.csv");
    std::fs::write(&path, "id,x,y\n0,1.5,2.5\n1,10.0,20.25\n").unwrap();
    let points = read_centroids_csv(&path).unwrap();
    assert_eq!(points, vec![pt(0, 1.5, 2.5), pt(1, 10.0, 20.25)]);

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "a,b,c\n1,2,3\n").unwrap();
    assert!(read_centroids_csv(&bad).is_err());
}

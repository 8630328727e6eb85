mod common;

use common::{brute_kernel, floyd_warshall, rng, INF};
use netexp::covariance::build_kernel;
use netexp::graph::{
    average_path_length, bfs_distances, boundary_profile, connected_components, j_count_profile,
    neighborhood_moment, neighborhood_sizes,
};
use netexp::Graph;
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn graph_strategy(max_n: usize) -> impl Strategy<Value = Graph> {
    (1..=max_n, any::<bool>())
        .prop_flat_map(|(n, directed)| {
            (
                Just(n),
                Just(directed),
                proptest::collection::vec(any::<u8>(), n * n),
            )
        })
        .prop_map(|(n, directed, bits)| {
            let mut edges = Vec::new();
            for i in 0..n {
                for j in 0..n {
                    if i != j && (directed || i < j) && bits[i * n + j] < 60 {
                        edges.push((i, j));
                    }
                }
            }
            Graph::from_edges(n, &edges, directed).unwrap().0
        })
}

fn brute_apl(dist: &[Vec<u32>], g: &Graph) -> f64 {
    let mut best: Vec<usize> = Vec::new();
    for comp in connected_components(g) {
        if comp.len() > best.len() {
            best = comp;
        }
    }
    if best.len() < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for &i in &best {
        for &j in &best {
            total += dist[i][j] as f64;
        }
    }
    total / (best.len() * (best.len() - 1)) as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn bfs_agrees_with_floyd_warshall(g in graph_strategy(12), cap in 0u32..5) {
        let dist = floyd_warshall(&g);
        for i in 0..g.n() {
            let full = bfs_distances(&g, i, None).unwrap();
            let capped = bfs_distances(&g, i, Some(cap)).unwrap();
            for j in 0..g.n() {
                let want = (dist[i][j] != INF).then_some(dist[i][j]);
                prop_assert_eq!(full.get(j), want);
                prop_assert_eq!(capped.get(j), want.filter(|&d| d <= cap));
            }
        }
    }

    #[test]
    fn neighborhoods_and_shells(g in graph_strategy(12), depth in 0u32..6) {
        let dist = floyd_warshall(&g);
        let n = g.n();
        let sizes = neighborhood_sizes(&g, depth);
        for i in 0..n {
            prop_assert_eq!(sizes[i], dist[i].iter().filter(|&&d| d <= depth).count());
        }
        let shells = boundary_profile(&g);
        let cumulative: f64 = shells.iter().take(depth as usize + 1).sum();
        prop_assert!((neighborhood_moment(&g, depth, 1) - cumulative).abs() < 1e-12);
        for (s, &m) in shells.iter().enumerate() {
            let pairs = dist.iter().flatten().filter(|&&d| d == s as u32).count();
            prop_assert!((m * n as f64 - pairs as f64).abs() < 1e-9);
        }
        let ones = j_count_profile(&g, &vec![1.0; n]).unwrap();
        prop_assert_eq!(ones.len(), shells.len());
        for (j, m) in ones.iter().zip(&shells) {
            prop_assert!((j - n as f64 * m).abs() < 1e-9);
        }
    }

    #[test]
    fn average_path_length_matches_brute_force(g in graph_strategy(12)) {
        let dist = floyd_warshall(&g);
        prop_assert!((average_path_length(&g) - brute_apl(&dist, &g)).abs() < 1e-12);
    }

    #[test]
    fn kernel_is_distance_indicator(g in graph_strategy(12), b in 0u32..5, keep in proptest::collection::vec(any::<bool>(), 12)) {
        let dist = floyd_warshall(&g);
        let units: Vec<usize> = (0..g.n()).filter(|&i| keep[i]).collect();
        let k = build_kernel(&g, &units, b).unwrap();
        prop_assert_eq!(k.to_dense(), brute_kernel(&dist, &units, b));
        prop_assert_eq!(k.nnz(), (0..units.len()).map(|a| k.rows[a].len()).sum::<usize>());
    }

    #[test]
    fn relabelling_preserves_summaries(g in graph_strategy(12), seed in any::<u64>()) {
        let n = g.n();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng(seed));
        let h = g.permuted(&perm).unwrap();
        prop_assert_eq!(boundary_profile(&g), boundary_profile(&h));
        prop_assert!((average_path_length(&g) - average_path_length(&h)).abs() < 1e-12);
        let sizes = neighborhood_sizes(&g, 2);
        let moved = neighborhood_sizes(&h, 2);
        for i in 0..n {
            prop_assert_eq!(sizes[i], moved[perm[i]]);
        }
    }
}

#[test]
fn path_graph_profile() {
    let g = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3)], false)
        .unwrap()
        .0;
    assert_eq!(boundary_profile(&g), vec![1.0, 1.5, 1.0, 0.5]);
    assert!((average_path_length(&g) - 20.0 / 12.0).abs() < 1e-12);
}

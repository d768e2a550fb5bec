//! Randomised invariants of the graph utilities, the tape's segment ops,
//! normalisation and the keyed noise.

mod support;

use dhmp::autodiff::{Matrix, Tape};
use dhmp::mesh::{generate_grid_mesh, k_hop_closure, restrict_to_selected, validate_edges};
use dhmp::noise::keyed_uniform;
use dhmp::oracle::ChannelStats;
use proptest::prelude::*;
use support::graphs::{random_graph, structural_violation};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn one_more_hop_extends_the_closure_by_one_edge(seed in 0u64..10_000, k in 1usize..4) {
        let (n, edges) = random_graph(seed, 30);
        prop_assert_eq!(k_hop_closure(&edges, n, 1).unwrap(), edges.clone());
        let base = k_hop_closure(&edges, n, k).unwrap();
        let mut extended = base.clone();
        for &(i, m) in &base {
            extended.extend(edges.iter().filter(|&&(a, _)| a == m).map(|&(_, j)| (i, j)));
        }
        extended.sort_unstable();
        extended.dedup();
        prop_assert_eq!(extended, k_hop_closure(&edges, n, k + 1).unwrap());
    }

    #[test]
    fn restriction_keeps_only_selected_nodes(seed in 0u64..10_000, k in 1usize..4, mask_seed in 0u64..1000) {
        let (n, edges) = random_graph(seed, 30);
        let closure = k_hop_closure(&edges, n, k).unwrap();
        let mut selected: Vec<bool> = (0..n).map(|i| keyed_uniform(mask_seed, &[i as u64]) < 0.4).collect();
        selected[(mask_seed as usize) % n] = true;
        let coarse = restrict_to_selected(&closure, &selected).unwrap();
        let m = coarse.node_count();
        prop_assert_eq!(m, selected.iter().filter(|&&s| s).count());
        prop_assert!(structural_violation(m, &coarse.edges).is_none());
        for &(a, b) in &coarse.edges {
            let (fa, fb) = (coarse.fine_index_of[a], coarse.fine_index_of[b]);
            prop_assert!(closure.binary_search(&(fa, fb)).is_ok());
        }
        let kept = closure
            .iter()
            .filter(|&&(i, j)| selected[i] && selected[j])
            .count();
        prop_assert_eq!(kept, coarse.edges.len());
    }

    #[test]
    fn grid_meshes_are_well_formed(nx in 2usize..12, ny in 2usize..12, jitter in 0.0f64..0.45, seed in 0u64..100) {
        let mesh = generate_grid_mesh(nx, ny, jitter, seed).unwrap();
        prop_assert_eq!(mesh.node_count, nx * ny);
        prop_assert_eq!(mesh.cells.len(), 2 * (nx - 1) * (ny - 1));
        prop_assert!(validate_edges(&mesh.edges, mesh.node_count).is_ok());
        let undirected = (nx - 1) * ny + nx * (ny - 1) + (nx - 1) * (ny - 1);
        prop_assert_eq!(mesh.edges.len(), 2 * undirected + nx * ny);
    }

    #[test]
    fn segment_softmax_is_a_distribution_per_segment(
        logits in prop::collection::vec(-30.0f64..30.0, 1..40),
        cuts in prop::collection::vec(0usize..40, 0..6),
        shift in -50.0f64..50.0,
    ) {
        let n = logits.len();
        let mut segments: Vec<usize> = (0..n).map(|i| cuts.iter().filter(|&&c| c <= i).count()).collect();
        segments.sort_unstable();
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::column(logits.clone())).unwrap();
        let sa = tape.segment_softmax(x, &segments).unwrap();
        let a = tape.value(sa).data.clone();
        let y = tape.constant(Matrix::column(logits.iter().map(|v| v + shift).collect())).unwrap();
        let sb = tape.segment_softmax(y, &segments).unwrap();
        let b = tape.value(sb).data.clone();
        for s in segments.iter().copied().collect::<std::collections::BTreeSet<_>>() {
            let total: f64 = (0..n).filter(|&i| segments[i] == s).map(|i| a[i]).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((p - q).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(p));
        }
    }

    #[test]
    fn normalisation_round_trips(rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 1..30)) {
        let stats = ChannelStats::from_rows(3, rows.iter().map(|r| r.as_slice()));
        prop_assert!(stats.std.iter().all(|&s| s > 0.0));
        for row in &rows {
            let mut v = row.clone();
            stats.normalize(&mut v);
            stats.denormalize(&mut v);
            for (a, b) in v.iter().zip(row) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn keyed_uniforms_are_pure_and_in_range(seed in any::<u64>(), a in any::<u64>(), b in any::<u64>()) {
        let u = keyed_uniform(seed, &[a, b]);
        prop_assert!((0.0..1.0).contains(&u));
        prop_assert_eq!(u.to_bits(), keyed_uniform(seed, &[a, b]).to_bits());
    }
}

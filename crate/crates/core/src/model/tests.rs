use std::sync::Arc;

use super::*;
use crate::autodiff::{Matrix, ParamStore, Tape};
use crate::mesh::{generate_grid_mesh, k_hop_closure, restrict_to_selected, MeshGraph};
use crate::noise::{KeyedNoise, PermutedNoise, ZeroNoise};

fn small_config(variant: Variant, levels: usize) -> ModelConfig {
    ModelConfig {
        variant,
        levels,
        latent: 8,
        hidden: 8,
        node_input: 4,
        flat_passes: 3,
        init_seed: 3,
        ..Default::default()
    }
}

fn inputs(mesh: &MeshGraph, seed: u64) -> Matrix {
    let fields = Matrix::column(
        (0..mesh.node_count)
            .map(|i| crate::noise::keyed_uniform(seed, &[i as u64]) * 2.0 - 1.0)
            .collect(),
    );
    node_input_matrix(&fields, &mesh.node_types)
}

fn run(
    model: &Model,
    mesh: &MeshGraph,
    x: &Matrix,
    noise: &dyn crate::noise::SelectionNoise,
) -> (Matrix, Vec<HierarchyLevel>, Vec<AlphaTrace>) {
    let mut tape = Tape::new();
    let bp = model.bind(&mut tape).unwrap();
    let out = model
        .forward(
            &mut tape,
            &bp,
            mesh,
            x,
            &ForwardOptions::at_temperature(1.0),
            noise,
        )
        .unwrap();
    (tape.value(out.prediction).clone(), out.levels, out.alphas)
}

fn latent_on(tape: &mut Tape, graph: LevelGraph, width: usize, seed: u64) -> LatentGraph {
    let n = graph.node_count;
    let e = graph.edge_count();
    let r = |k: usize, s: u64| crate::noise::keyed_uniform(seed, &[s, k as u64]) - 0.5;
    let nodes = tape
        .leaf(
            Matrix::from_vec(n, width, (0..n * width).map(|k| r(k, 0)).collect()),
            true,
        )
        .unwrap();
    let edges = tape
        .leaf(
            Matrix::from_vec(e, width, (0..e * width).map(|k| r(k, 1)).collect()),
            true,
        )
        .unwrap();
    LatentGraph {
        nodes,
        edges,
        graph: Arc::new(graph),
    }
}

fn path_graph() -> LevelGraph {
    let edges = vec![(0, 0), (0, 1), (1, 0), (1, 1), (1, 2), (2, 1), (2, 2)];
    let pos = vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
    LevelGraph::build(1, 3, edges, pos.clone(), pos, vec![0, 1, 2])
}

#[test]
fn equal_edge_weights_reduce_to_mean_aggregation() {
    let mut store = ParamStore::new();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
    let amp = AmpParams::register(&mut store, &mut rng, "amp", 4, 6, false);
    for w in &amp.weight.second.blocks {
        store.get_mut(*w).data.iter_mut().for_each(|v| *v = 0.0);
    }
    let mut tape = Tape::new();
    let bp = store.bind(&mut tape).unwrap();
    let mesh = generate_grid_mesh(3, 3, 0.1, 0).unwrap();
    let latent = latent_on(&mut tape, LevelGraph::from_mesh(&mesh), 4, 2);
    let out = amp_forward(&mut tape, &bp, &amp, &latent, false).unwrap();
    let g = &latent.graph;
    let alpha = &tape.value(out.alpha).data;
    for i in 0..g.node_count {
        let deg = (g.segments[i + 1] - g.segments[i]) as f64;
        for a in &alpha[g.segments[i]..g.segments[i + 1]] {
            assert!((a - 1.0 / deg).abs() < 1e-15);
        }
    }
}

#[test]
fn lone_self_loop_gets_full_weight() {
    let mut store = ParamStore::new();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
    let amp = AmpParams::register(&mut store, &mut rng, "amp", 4, 6, true);
    let mut tape = Tape::new();
    let bp = store.bind(&mut tape).unwrap();
    let graph = LevelGraph::build(
        1,
        1,
        vec![(0, 0)],
        vec![[0.0, 0.0]],
        vec![[0.0, 0.0]],
        vec![0],
    );
    let latent = latent_on(&mut tape, graph, 4, 9);
    let out = amp_forward(&mut tape, &bp, &amp, &latent, true).unwrap();
    assert_eq!(tape.value(out.alpha).data, vec![1.0]);
    assert!(out.keep_logit.is_some());
    // residual: v_new - v = node MLP output, edge message = e_hat
    let e_hat: Vec<f64> = tape
        .value(out.latent.edges)
        .data
        .iter()
        .zip(&tape.value(latent.edges).data)
        .map(|(a, b)| a - b)
        .collect();
    assert_eq!(e_hat.len(), 4);
}

#[test]
fn zero_noise_selection_keeps_confident_nodes_and_bridges_them() {
    let graph = Arc::new(path_graph());
    let mut tape = Tape::new();
    let logit = |p: f64| (p / (1.0 - p)).ln();
    let s = tape
        .leaf(
            Matrix::column(vec![logit(0.9), logit(0.1), logit(0.9)]),
            true,
        )
        .unwrap();
    let alpha = tape
        .constant(Matrix::column(graph.degree_weights()))
        .unwrap();
    let opts = SelectOptions {
        temperature: 1.0,
        soft_gate: false,
        hops: 2,
        learned_weights: true,
        noise: &ZeroNoise,
    };
    let link = sample_selection(&mut tape, &graph, s, alpha, &opts).unwrap();
    assert_eq!(link.record.keep_mask, vec![true, false, true]);
    assert_eq!(
        link.record.coarse.edges,
        vec![(0, 0), (0, 1), (1, 0), (1, 1)]
    );
    assert_eq!(link.coarse_graph.node_keys, vec![0, 2]);
    let probs = link.record.keep_probs.as_ref().unwrap();
    assert!((probs[0] - 0.9).abs() < 1e-12 && (probs[1] - 0.1).abs() < 1e-12);
    assert_eq!(link.record.forced_keep, None);
}

#[test]
fn empty_sample_forces_the_most_likely_node() {
    let graph = Arc::new(path_graph());
    let mut tape = Tape::new();
    let s = tape
        .leaf(Matrix::column(vec![-3.0, -1.0, -1.0]), true)
        .unwrap();
    let alpha = tape
        .constant(Matrix::column(graph.degree_weights()))
        .unwrap();
    let opts = SelectOptions {
        temperature: 0.5,
        soft_gate: false,
        hops: 2,
        learned_weights: false,
        noise: &ZeroNoise,
    };
    let link = sample_selection(&mut tape, &graph, s, alpha, &opts).unwrap();
    assert_eq!(link.record.forced_keep, Some(1));
    assert_eq!(link.record.keep_mask, vec![false, true, false]);
    assert_eq!(tape.value(link.gate.unwrap()).data, vec![0.0, 1.0, 0.0]);
}

#[test]
fn saturated_selection_keeps_the_closure() {
    let mesh = generate_grid_mesh(4, 4, 0.0, 0).unwrap();
    let graph = Arc::new(LevelGraph::from_mesh(&mesh));
    let mut tape = Tape::new();
    let s = tape.leaf(Matrix::filled(16, 1, 60.0), true).unwrap();
    let alpha = tape
        .constant(Matrix::column(graph.degree_weights()))
        .unwrap();
    let noise = KeyedNoise::new(1, 0);
    let opts = SelectOptions {
        temperature: 5.0,
        soft_gate: false,
        hops: 2,
        learned_weights: true,
        noise: &noise,
    };
    let link = sample_selection(&mut tape, &graph, s, alpha, &opts).unwrap();
    assert!(link.record.keep_mask.iter().all(|&k| k));
    assert_eq!(
        link.record.coarse.edges,
        k_hop_closure(&mesh.edges, 16, 2).unwrap()
    );
}

fn manual_link(
    tape: &mut Tape,
    graph: LevelGraph,
    mask: Vec<bool>,
    weights: Vec<f64>,
) -> LevelLink {
    let graph = Arc::new(graph);
    let closed = k_hop_closure(&graph.edges, graph.node_count, 2).unwrap();
    let coarse = restrict_to_selected(&closed, &mask).unwrap();
    let coarse_graph = Arc::new(graph.coarsen(&coarse));
    let w = tape.constant(Matrix::column(weights.clone())).unwrap();
    LevelLink {
        record: HierarchyLevel {
            level: 1,
            keep_probs: None,
            keep_mask: mask,
            alpha: weights,
            coarse_components: 1,
            coarse,
            fine: graph,
            forced_keep: None,
        },
        coarse_graph,
        weights: w,
        gate: None,
    }
}

#[test]
fn reduce_copies_isolated_and_averages_equal_weights() {
    // nodes 0-1 connected, node 2 isolated
    let edges = vec![(0, 0), (0, 1), (1, 0), (1, 1), (2, 2)];
    let pos = vec![[0.0; 2]; 3];
    let graph = LevelGraph::build(1, 3, edges, pos.clone(), pos, vec![0, 1, 2]);
    let mut tape = Tape::new();
    let link = manual_link(
        &mut tape,
        graph,
        vec![true, false, true],
        vec![0.5, 0.5, 0.3, 0.7, 1.0],
    );
    let feats = tape
        .constant(Matrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 6.0, -4.0, 8.0]))
        .unwrap();
    let out = reduce(&mut tape, feats, &link, false).unwrap();
    let v = tape.value(out);
    assert_eq!(v.row(0), &[2.0, 4.0]);
    assert_eq!(v.row(1), &[-4.0, 8.0]);
}

#[test]
fn expand_fills_orphans_with_zero() {
    // path 0-1-2-3, keep only node 0: node 2 and 3 have no kept neighbour
    let edges = vec![
        (0, 0),
        (0, 1),
        (1, 0),
        (1, 1),
        (1, 2),
        (2, 1),
        (2, 2),
        (2, 3),
        (3, 2),
        (3, 3),
    ];
    let pos = vec![[0.0; 2]; 4];
    let graph = LevelGraph::build(1, 4, edges, pos.clone(), pos, vec![0, 1, 2, 3]);
    let weights = vec![0.5, 0.5, 0.2, 0.3, 0.5, 0.25, 0.5, 0.25, 0.5, 0.5];
    let mut tape = Tape::new();
    let link = manual_link(&mut tape, graph, vec![true, false, false, false], weights);
    let coarse = tape
        .constant(Matrix::from_vec(1, 2, vec![3.0, -1.0]))
        .unwrap();
    let out = expand(&mut tape, coarse, &link, false).unwrap();
    let v = tape.value(out);
    assert_eq!(v.row(0), &[3.0, -1.0]);
    assert_eq!(v.row(1), &[3.0, -1.0]);
    assert_eq!(v.row(2), &[0.0, 0.0]);
    assert_eq!(v.row(3), &[0.0, 0.0]);
    assert!(v.is_finite());

    let raw = expand(&mut tape, coarse, &link, true).unwrap();
    assert_eq!(tape.value(raw).row(1), &[0.2 * 3.0, -0.2]);
}

#[test]
fn one_level_dhmp_matches_single_pass_flat() {
    let mesh = generate_grid_mesh(4, 3, 0.2, 1).unwrap();
    let x = inputs(&mesh, 4);
    let dhmp = Model::new(small_config(Variant::Dhmp, 1)).unwrap();
    let flat = Model::new(ModelConfig {
        flat_passes: 1,
        ..small_config(Variant::Flat, 1)
    })
    .unwrap();
    assert_eq!(dhmp.params.flatten(), flat.params.flatten());
    let (a, levels, _) = run(&dhmp, &mesh, &x, &ZeroNoise);
    let (b, _, _) = run(&flat, &mesh, &x, &ZeroNoise);
    assert!(levels.is_empty());
    assert_eq!(a, b);
}

#[test]
fn every_variant_predicts_one_row_per_node() {
    let mesh = generate_grid_mesh(5, 4, 0.2, 2).unwrap();
    let x = inputs(&mesh, 1);
    for v in Variant::ALL {
        let model = Model::new(small_config(v, 3)).unwrap();
        let (pred, levels, alphas) = run(&model, &mesh, &x, &KeyedNoise::new(3, 0));
        assert_eq!(pred.shape(), (20, 1), "{v}");
        assert!(pred.is_finite());
        let expected_levels = if v == Variant::Flat { 0 } else { 2 };
        assert_eq!(levels.len(), expected_levels);
        for w in levels.windows(2) {
            assert!(w[1].kept() <= w[0].kept());
        }
        for t in alphas {
            for i in 0..t.graph.node_count {
                let s: f64 = t.alpha[t.graph.segments[i]..t.graph.segments[i + 1]]
                    .iter()
                    .sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn fixed_seed_gives_identical_hierarchies() {
    let mesh = generate_grid_mesh(6, 6, 0.2, 2).unwrap();
    let x = inputs(&mesh, 1);
    let model = Model::new(small_config(Variant::Dhmp, 3)).unwrap();
    let (a, la, _) = run(&model, &mesh, &x, &KeyedNoise::new(8, 5));
    let (b, lb, _) = run(&model, &mesh, &x, &KeyedNoise::new(8, 5));
    assert_eq!(a, b);
    for (p, q) in la.iter().zip(&lb) {
        assert_eq!(p.keep_mask, q.keep_mask);
    }
}

#[test]
fn static_selection_takes_even_bfs_depths() {
    let g = path_graph();
    assert_eq!(static_selection(&g), vec![true, false, true]);
}

#[test]
fn permuted_mesh_permutes_prediction() {
    let mesh = generate_grid_mesh(5, 5, 0.25, 7).unwrap();
    let x = inputs(&mesh, 2);
    // new label k holds old node perm[k]
    let n = mesh.node_count;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.reverse();
    perm.swap(3, 11);
    let mut new_of = vec![0; n];
    for (k, &old) in perm.iter().enumerate() {
        new_of[old] = k;
    }
    let cells = mesh.cells.iter().map(|c| c.map(|i| new_of[i])).collect();
    let pos = perm.iter().map(|&o| mesh.mesh_positions[o]).collect();
    let types = perm.iter().map(|&o| mesh.node_types[o]).collect();
    let pmesh = MeshGraph::from_cells(cells, pos, types).unwrap();
    let px = x.select_rows(&perm);
    let base = KeyedNoise::new(4, 1);
    let pnoise = PermutedNoise {
        inner: &base,
        original_of: perm.clone(),
    };
    for v in [Variant::Dhmp, Variant::M3, Variant::Flat] {
        let model = Model::new(small_config(v, 3)).unwrap();
        let (a, _, _) = run(&model, &mesh, &x, &base);
        let (b, _, _) = run(&model, &pmesh, &px, &pnoise);
        assert!(a.select_rows(&perm).max_abs_diff(&b) < 1e-12, "{v}");
    }
}

#[test]
fn translation_leaves_forward_bit_identical() {
    // dyadic grid spacing keeps the shifted offsets exact
    let mesh = generate_grid_mesh(9, 5, 0.0, 0).unwrap();
    let shifted = MeshGraph::from_cells(
        mesh.cells.clone(),
        mesh.mesh_positions
            .iter()
            .map(|p| [p[0] + 0.5, p[1] - 2.0])
            .collect(),
        mesh.node_types.clone(),
    )
    .unwrap();
    let x = inputs(&mesh, 3);
    let model = Model::new(small_config(Variant::Dhmp, 3)).unwrap();
    let noise = KeyedNoise::new(1, 1);
    let (a, _, _) = run(&model, &mesh, &x, &noise);
    let (b, _, _) = run(&model, &shifted, &x, &noise);
    assert_eq!(a, b);
}

#[test]
fn input_width_is_checked() {
    let mesh = generate_grid_mesh(3, 3, 0.0, 0).unwrap();
    let model = Model::new(small_config(Variant::Dhmp, 2)).unwrap();
    let mut tape = Tape::new();
    let bp = model.bind(&mut tape).unwrap();
    let bad = Matrix::zeros(9, 2);
    assert!(matches!(
        model.forward(
            &mut tape,
            &bp,
            &mesh,
            &bad,
            &ForwardOptions::at_temperature(1.0),
            &ZeroNoise
        ),
        Err(ModelError::InputWidth {
            got: 2,
            expected: 4
        })
    ));
}

#[test]
fn identical_rows_encode_identically() {
    let mesh = generate_grid_mesh(3, 3, 0.0, 0).unwrap();
    let model = Model::new(small_config(Variant::Dhmp, 2)).unwrap();
    let mut tape = Tape::new();
    let bp = model.bind(&mut tape).unwrap();
    let x = node_input_matrix(&Matrix::zeros(9, 1), &mesh.node_types);
    let g = Arc::new(LevelGraph::from_mesh(&mesh));
    let lat = model.encode(&mut tape, &bp, &g, &x).unwrap();
    let v = tape.value(lat.nodes);
    // nodes 0 and 2 are both boundary corners with zero field
    assert_eq!(v.row(0), v.row(2));
    assert!(v.is_finite());
}

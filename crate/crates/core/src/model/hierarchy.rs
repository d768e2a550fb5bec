use std::sync::Arc;

use serde::Serialize;

use super::graph::{LatentGraph, LevelGraph};
use super::layers::{amp_forward, AmpOutput, AmpParams};
use super::{ModelError, Result};
use crate::autodiff::{gumbel_softmax_st, BoundParams, Matrix, Tape, Tensor};
use crate::mesh::{component_count, k_hop_closure, restrict_to_selected, CoarseGraph};
use crate::noise::SelectionNoise;

/// Record of one down-sampling step, from level `level` to `level + 1`.
#[derive(Debug, Clone, Serialize)]
pub struct HierarchyLevel {
    pub level: usize,
    /// Keep probability per fine node; `None` for static hierarchies.
    pub keep_probs: Option<Vec<f64>>,
    pub keep_mask: Vec<bool>,
    /// Inter-level weight of every fine edge before renormalisation.
    pub alpha: Vec<f64>,
    pub coarse: CoarseGraph,
    #[serde(skip)]
    pub fine: Arc<LevelGraph>,
    /// Node kept by the non-empty fallback, if the sample kept nothing.
    pub forced_keep: Option<usize>,
    /// Connected components of the coarse graph.
    pub coarse_components: usize,
}

impl HierarchyLevel {
    pub fn kept(&self) -> usize {
        self.coarse.node_count()
    }
}

/// Everything REDUCE and EXPAND need to move features across one level.
pub struct LevelLink {
    pub record: HierarchyLevel,
    pub coarse_graph: Arc<LevelGraph>,
    /// Per fine edge inter-level weight, `edges x 1`.
    pub weights: Tensor,
    /// Selection value per fine node (`nodes x 1`) that scales the reduced
    /// features; absent for static hierarchies.
    pub gate: Option<Tensor>,
}

pub struct SelectOptions<'a> {
    pub temperature: f64,
    /// Gate with the relaxed probability instead of the straight-through
    /// hard value. The topology still follows the hard sample.
    pub soft_gate: bool,
    pub hops: usize,
    /// Reuse the AMP weights between levels (otherwise `1 / degree`).
    pub learned_weights: bool,
    pub noise: &'a dyn SelectionNoise,
}

/// AMP with the keep-probability head, Gumbel-Softmax node sampling and
/// K-hop coarse graph construction.
pub fn diff_select(
    tape: &mut Tape,
    bp: &BoundParams,
    params: &AmpParams,
    latent: &LatentGraph,
    opts: &SelectOptions,
) -> Result<(AmpOutput, LevelLink)> {
    if !params.has_prob_head() {
        return Err(ModelError::Config(
            "selection layer has no probability head".into(),
        ));
    }
    let amp = amp_forward(tape, bp, params, latent, true)?;
    let logit = amp.keep_logit.expect("probability head");
    let link = sample_selection(tape, &latent.graph, logit, amp.alpha, opts)?;
    Ok((amp, link))
}

/// Gumbel-Softmax sampling of keep/drop from per-node keep logits (the drop
/// logit is zero), then K-hop closure and restriction. If nothing is kept
/// the node with the largest logit (lowest index on ties) is forced in.
pub fn sample_selection(
    tape: &mut Tape,
    graph: &Arc<LevelGraph>,
    logit: Tensor,
    alpha: Tensor,
    opts: &SelectOptions,
) -> Result<LevelLink> {
    let noise: Vec<[f64; 2]> = graph
        .node_keys
        .iter()
        .map(|&k| opts.noise.gumbel(graph.level, k))
        .collect();
    let drop = tape.constant(Matrix::zeros(graph.node_count, 1))?;
    let sample = gumbel_softmax_st(tape, logit, drop, opts.temperature, &noise)?;
    let mut mask = sample.hard.clone();
    let mut forced_keep = None;
    let mut st = sample.straight_through;
    if !mask.iter().any(|&k| k) {
        let logits = &tape.value(logit).data;
        let best = (0..logits.len()).fold(0, |b, i| if logits[i] > logits[b] { i } else { b });
        mask[best] = true;
        forced_keep = Some(best);
        let hard = Matrix::column(mask.iter().map(|&k| f64::from(u8::from(k))).collect());
        st = tape.straight_through(hard, sample.soft)?;
    }
    let keep_probs = tape
        .value(logit)
        .data
        .iter()
        .map(|&s| crate::autodiff::sigmoid(s))
        .collect();
    let gate = if opts.soft_gate { sample.soft } else { st };
    let weights = if opts.learned_weights {
        alpha
    } else {
        tape.constant(Matrix::column(graph.degree_weights()))?
    };
    build_link(
        tape,
        graph,
        mask,
        Some(keep_probs),
        weights,
        Some(gate),
        forced_keep,
        opts.hops,
    )
}

/// Data-independent selection: nodes at even breadth-first depth, walking
/// components in order of their lowest node index.
pub fn static_selection(graph: &LevelGraph) -> Vec<bool> {
    let n = graph.node_count;
    let mut depth = vec![usize::MAX; n];
    let mut queue = std::collections::VecDeque::new();
    for root in 0..n {
        if depth[root] != usize::MAX {
            continue;
        }
        depth[root] = 0;
        queue.push_back(root);
        while let Some(u) = queue.pop_front() {
            for &v in &graph.senders[graph.segments[u]..graph.segments[u + 1]] {
                if depth[v] == usize::MAX {
                    depth[v] = depth[u] + 1;
                    queue.push_back(v);
                }
            }
        }
    }
    depth.iter().map(|d| d % 2 == 0).collect()
}

/// Link for a static hierarchy.
pub fn static_link(
    tape: &mut Tape,
    graph: &Arc<LevelGraph>,
    alpha: Tensor,
    learned_weights: bool,
    hops: usize,
) -> Result<LevelLink> {
    let mask = static_selection(graph);
    let weights = if learned_weights {
        alpha
    } else {
        tape.constant(Matrix::column(graph.degree_weights()))?
    };
    build_link(tape, graph, mask, None, weights, None, None, hops)
}

#[allow(clippy::too_many_arguments)]
fn build_link(
    tape: &Tape,
    graph: &Arc<LevelGraph>,
    mask: Vec<bool>,
    keep_probs: Option<Vec<f64>>,
    weights: Tensor,
    gate: Option<Tensor>,
    forced_keep: Option<usize>,
    hops: usize,
) -> Result<LevelLink> {
    let closed = k_hop_closure(&graph.edges, graph.node_count, hops)?;
    let coarse = restrict_to_selected(&closed, &mask)?;
    let coarse_graph = Arc::new(graph.coarsen(&coarse));
    let record = HierarchyLevel {
        level: graph.level,
        keep_probs,
        keep_mask: mask,
        alpha: tape.value(weights).data.clone(),
        coarse_components: component_count(&coarse.edges, coarse.node_count()),
        coarse,
        fine: Arc::clone(graph),
        forced_keep,
    };
    Ok(LevelLink {
        record,
        coarse_graph,
        weights,
        gate,
    })
}

/// Scales `w` so that the entries sharing a target sum to one. Targets with
/// no entries are left alone.
fn renormalise(tape: &mut Tape, w: Tensor, targets: &Arc<[usize]>, n: usize) -> Result<Tensor> {
    let sums = tape.scatter_add_rows(w, Arc::clone(targets), n)?;
    let mut has = vec![false; n];
    targets.iter().for_each(|&t| has[t] = true);
    let pad = tape.constant(Matrix::column(
        has.iter().map(|&h| if h { 0.0 } else { 1.0 }).collect(),
    ))?;
    let sums = tape.add(sums, pad)?;
    let inv = tape.reciprocal(sums)?;
    let inv_e = tape.gather_rows(inv, Arc::clone(targets))?;
    Ok(tape.mul(w, inv_e)?)
}

/// Weighted sum of `features` rows: row `sources[k]` times `w[k]` into
/// output row `targets[k]`.
fn weighted_scatter(
    tape: &mut Tape,
    features: Tensor,
    w: Tensor,
    sources: Arc<[usize]>,
    targets: Arc<[usize]>,
    n: usize,
    raw: bool,
) -> Result<Tensor> {
    let w = if raw {
        w
    } else {
        renormalise(tape, w, &targets, n)?
    };
    let f = tape.gather_rows(features, sources)?;
    let f = tape.mul_col(f, w)?;
    Ok(tape.scatter_add_rows(f, targets, n)?)
}

/// REDUCE: each kept node averages its fine neighbourhood with the
/// inter-level weights, then is scaled by its selection gate.
pub fn reduce(
    tape: &mut Tape,
    fine_nodes: Tensor,
    link: &LevelLink,
    raw_alpha: bool,
) -> Result<Tensor> {
    let g = &link.record.fine;
    let mask = &link.record.keep_mask;
    let coarse_of = link.record.coarse.coarse_index_of();
    let picked: Vec<usize> = (0..g.edge_count())
        .filter(|&e| mask[g.receivers[e]])
        .collect();
    let sources: Arc<[usize]> = picked.iter().map(|&e| g.senders[e]).collect();
    let targets: Arc<[usize]> = picked
        .iter()
        .map(|&e| coarse_of[g.receivers[e]].expect("kept receiver"))
        .collect();
    let w = tape.gather_rows(link.weights, picked.into())?;
    let out = weighted_scatter(
        tape,
        fine_nodes,
        w,
        sources,
        targets,
        link.record.coarse.node_count(),
        raw_alpha,
    )?;
    match link.gate {
        Some(gate) => {
            let idx: Arc<[usize]> = link.record.coarse.fine_index_of.clone().into();
            let gc = tape.gather_rows(gate, idx)?;
            Ok(tape.mul_col(out, gc)?)
        }
        None => Ok(out),
    }
}

/// EXPAND: each fine node averages the coarse features of its kept
/// neighbours; nodes with no kept neighbour receive zeros.
pub fn expand(
    tape: &mut Tape,
    coarse_nodes: Tensor,
    link: &LevelLink,
    raw_alpha: bool,
) -> Result<Tensor> {
    let g = &link.record.fine;
    let mask = &link.record.keep_mask;
    let coarse_of = link.record.coarse.coarse_index_of();
    let picked: Vec<usize> = (0..g.edge_count())
        .filter(|&e| mask[g.senders[e]])
        .collect();
    let sources: Arc<[usize]> = picked
        .iter()
        .map(|&e| coarse_of[g.senders[e]].expect("kept sender"))
        .collect();
    let targets: Arc<[usize]> = picked.iter().map(|&e| g.receivers[e]).collect();
    let w = tape.gather_rows(link.weights, picked.into())?;
    weighted_scatter(
        tape,
        coarse_nodes,
        w,
        sources,
        targets,
        g.node_count,
        raw_alpha,
    )
}

/// FeatureMixing: AMP over the expanded features plus the skip from before
/// down-sampling. Also returns the edge weights of each AMP pass.
pub fn feature_mixing(
    tape: &mut Tape,
    bp: &BoundParams,
    layers: &[AmpParams],
    expanded: Tensor,
    skip: &LatentGraph,
) -> Result<(LatentGraph, Vec<Tensor>)> {
    if expanded.shape() != tape.value(skip.nodes).shape() {
        return Err(ModelError::Config(format!(
            "feature mixing on mismatched graphs: {:?} vs {:?}",
            expanded.shape(),
            skip.nodes.shape()
        )));
    }
    let mut latent = LatentGraph {
        nodes: expanded,
        edges: skip.edges,
        graph: Arc::clone(&skip.graph),
    };
    let mut alphas = Vec::with_capacity(layers.len());
    for layer in layers {
        let out = amp_forward(tape, bp, layer, &latent, false)?;
        alphas.push(out.alpha);
        latent = out.latent;
    }
    let nodes = tape.add(latent.nodes, skip.nodes)?;
    let mixed = LatentGraph {
        nodes,
        edges: skip.edges,
        graph: Arc::clone(&skip.graph),
    };
    Ok((mixed, alphas))
}

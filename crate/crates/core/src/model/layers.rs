use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::graph::LatentGraph;
use super::Result;
use crate::autodiff::{BoundParams, Matrix, ParamId, ParamStore, Tape, Tensor};

/// Affine map over a column-wise concatenation of inputs, stored as one
/// weight block per input so callers can project inputs separately.
#[derive(Debug, Clone)]
pub struct Linear {
    pub blocks: Vec<ParamId>,
    pub bias: ParamId,
    pub out: usize,
}

impl Linear {
    pub fn register(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        inputs: &[usize],
        out: usize,
    ) -> Self {
        let fan_in: usize = inputs.iter().sum();
        let bound = 1.0 / (fan_in as f64).sqrt();
        let blocks = inputs
            .iter()
            .enumerate()
            .map(|(k, &w)| {
                let data = (0..w * out).map(|_| rng.gen_range(-bound..bound)).collect();
                store.register(format!("{name}.w{k}"), Matrix::from_vec(w, out, data))
            })
            .collect();
        let bias = store.register(format!("{name}.b"), Matrix::zeros(1, out));
        Linear { blocks, bias, out }
    }

    pub fn project(
        &self,
        tape: &mut Tape,
        bp: &BoundParams,
        block: usize,
        x: Tensor,
    ) -> Result<Tensor> {
        Ok(tape.matmul(x, bp.get(self.blocks[block]))?)
    }

    pub fn forward(&self, tape: &mut Tape, bp: &BoundParams, inputs: &[Tensor]) -> Result<Tensor> {
        let mut acc = self.project(tape, bp, 0, inputs[0])?;
        for (k, &x) in inputs.iter().enumerate().skip(1) {
            let p = self.project(tape, bp, k, x)?;
            acc = tape.add(acc, p)?;
        }
        self.add_bias(tape, bp, acc)
    }

    pub fn add_bias(&self, tape: &mut Tape, bp: &BoundParams, x: Tensor) -> Result<Tensor> {
        Ok(tape.add_row(x, bp.get(self.bias))?)
    }
}

/// Two-layer ReLU MLP with optional output LayerNorm and an optional scalar
/// side head read from the same hidden layer (never normalised).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub first: Linear,
    pub second: Linear,
    pub norm: Option<(ParamId, ParamId)>,
    pub side: Option<Linear>,
}

impl Mlp {
    #[allow(clippy::too_many_arguments)]
    pub fn register(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        inputs: &[usize],
        hidden: usize,
        out: usize,
        layer_norm: bool,
        side_head: bool,
    ) -> Self {
        let first = Linear::register(store, rng, &format!("{name}.l1"), inputs, hidden);
        let second = Linear::register(store, rng, &format!("{name}.l2"), &[hidden], out);
        let side =
            side_head.then(|| Linear::register(store, rng, &format!("{name}.side"), &[hidden], 1));
        let norm = layer_norm.then(|| {
            (
                store.register(format!("{name}.ln.gain"), Matrix::filled(1, out, 1.0)),
                store.register(format!("{name}.ln.bias"), Matrix::zeros(1, out)),
            )
        });
        Mlp {
            first,
            second,
            norm,
            side,
        }
    }

    /// Everything after the first affine map.
    pub fn head(
        &self,
        tape: &mut Tape,
        bp: &BoundParams,
        pre: Tensor,
    ) -> Result<(Tensor, Option<Tensor>)> {
        let h = tape.relu(pre)?;
        let mut y = self.second.forward(tape, bp, &[h])?;
        if let Some((gain, bias)) = self.norm {
            y = tape.layer_norm(y, bp.get(gain), bp.get(bias))?;
        }
        let side = match &self.side {
            Some(lin) => Some(lin.forward(tape, bp, &[h])?),
            None => None,
        };
        Ok((y, side))
    }

    pub fn forward(&self, tape: &mut Tape, bp: &BoundParams, inputs: &[Tensor]) -> Result<Tensor> {
        let pre = self.first.forward(tape, bp, inputs)?;
        Ok(self.head(tape, bp, pre)?.0)
    }

    /// Edge MLP over `[e_ij, v_i, v_j]`: the node blocks are projected once
    /// per node and gathered, which equals projecting the gathered rows.
    pub fn forward_edges(
        &self,
        tape: &mut Tape,
        bp: &BoundParams,
        latent: &LatentGraph,
    ) -> Result<(Tensor, Option<Tensor>)> {
        let pre = edge_preactivation(&self.first, tape, bp, latent)?;
        self.head(tape, bp, pre)
    }
}

fn edge_preactivation(
    lin: &Linear,
    tape: &mut Tape,
    bp: &BoundParams,
    latent: &LatentGraph,
) -> Result<Tensor> {
    let g = &latent.graph;
    let from_edge = lin.project(tape, bp, 0, latent.edges)?;
    let recv_proj = lin.project(tape, bp, 1, latent.nodes)?;
    let send_proj = lin.project(tape, bp, 2, latent.nodes)?;
    let recv = tape.gather_rows(recv_proj, Arc::clone(&g.receivers))?;
    let send = tape.gather_rows(send_proj, Arc::clone(&g.senders))?;
    let sum = tape.add(from_edge, recv)?;
    let sum = tape.add(sum, send)?;
    lin.add_bias(tape, bp, sum)
}

/// Parameters of one anisotropic message-passing layer.
#[derive(Debug, Clone)]
pub struct AmpParams {
    /// Edge update over `[e_ij, v_i, v_j]`, LayerNorm on output.
    pub edge: Mlp,
    /// Importance weight over `[e_ij, v_i, v_j]`, scalar output, no LayerNorm.
    pub weight: Mlp,
    /// Node update over `[v_i, m_i]`, LayerNorm on the feature output; the
    /// optional side head is the keep-probability logit.
    pub node: Mlp,
}

impl AmpParams {
    pub fn register(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        latent: usize,
        hidden: usize,
        prob_head: bool,
    ) -> Self {
        let f = latent;
        AmpParams {
            edge: Mlp::register(
                store,
                rng,
                &format!("{name}.edge"),
                &[f, f, f],
                hidden,
                f,
                true,
                false,
            ),
            weight: Mlp::register(
                store,
                rng,
                &format!("{name}.weight"),
                &[f, f, f],
                hidden,
                1,
                false,
                false,
            ),
            node: Mlp::register(
                store,
                rng,
                &format!("{name}.node"),
                &[f, f],
                hidden,
                f,
                true,
                prob_head,
            ),
        }
    }

    pub fn has_prob_head(&self) -> bool {
        self.node.side.is_some()
    }
}

pub struct AmpOutput {
    pub latent: LatentGraph,
    /// Softmax-normalised importance weight of every edge, `edges x 1`.
    pub alpha: Tensor,
    /// Raw edge importance before normalisation.
    pub weight: Tensor,
    /// Keep-probability logit per node, `nodes x 1`.
    pub keep_logit: Option<Tensor>,
}

/// One AMP layer: edge update, per-receiver softmax over learned edge
/// weights, weighted message sum, node update, residuals on both.
pub fn amp_forward(
    tape: &mut Tape,
    bp: &BoundParams,
    params: &AmpParams,
    latent: &LatentGraph,
    with_prob: bool,
) -> Result<AmpOutput> {
    let g = &latent.graph;
    debug_assert!(
        g.segments.windows(2).all(|w| w[1] > w[0]),
        "node without edges"
    );
    let (edge_update, _) = params.edge.forward_edges(tape, bp, latent)?;
    let (weight, _) = params.weight.forward_edges(tape, bp, latent)?;
    let alpha = tape.segment_softmax(weight, &g.receivers)?;
    let weighted = tape.mul_col(edge_update, alpha)?;
    let message = tape.scatter_add_rows(weighted, Arc::clone(&g.receivers), g.node_count)?;
    let pre = params
        .node
        .first
        .forward(tape, bp, &[latent.nodes, message])?;
    let (node_update, side) = params.node.head(tape, bp, pre)?;
    let nodes = tape.add(latent.nodes, node_update)?;
    let edges = tape.add(latent.edges, edge_update)?;
    Ok(AmpOutput {
        latent: LatentGraph {
            nodes,
            edges,
            graph: Arc::clone(&latent.graph),
        },
        alpha,
        weight,
        keep_logit: if with_prob { side } else { None },
    })
}

//! The hierarchical message-passing network.
//!
//! `forward` runs encode, a down path of AMP + selection + REDUCE per level,
//! AMP at the coarsest level, an up path of EXPAND + FeatureMixing, and an
//! un-normalised decoder. Variants swap the hierarchy source (learned or
//! breadth-first static) and the inter-level weights (learned or 1/degree);
//! `Flat` stacks AMP layers on the input mesh.

mod config;
mod graph;
mod hierarchy;
mod layers;

pub use config::{ModelConfig, Variant};
pub use graph::{LatentGraph, LevelGraph};
pub use hierarchy::{
    diff_select, expand, feature_mixing, reduce, sample_selection, static_link, static_selection,
    HierarchyLevel, LevelLink, SelectOptions,
};
pub use layers::{amp_forward, AmpOutput, AmpParams, Linear, Mlp};

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, BoundParams, Matrix, ParamStore, Tape, Tensor};
use crate::mesh::{MeshError, MeshGraph, NodeType};
use crate::noise::SelectionNoise;
use crate::oracle::ChannelStats;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("model config: {0}")]
    Config(String),
    #[error("input width {got} does not match configured {expected}")]
    InputWidth { got: usize, expected: usize },
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// Parameter handles, registered in a fixed order derived from the config.
#[derive(Debug, Clone)]
pub struct Layout {
    pub node_encoder: Mlp,
    pub edge_encoder: Mlp,
    pub coarse_edge_encoder: Option<Mlp>,
    /// `down[l]` are the AMP layers run at level `l` before down-sampling
    /// (the last level has no down-sampling).
    pub down: Vec<Vec<AmpParams>>,
    /// `mix[l]` are the FeatureMixing layers at level `l`.
    pub mix: Vec<Vec<AmpParams>>,
    pub decoder: Mlp,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub layout: Layout,
    /// Applied to edge offsets at every level before encoding.
    pub edge_norm: Option<ChannelStats>,
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOptions {
    pub temperature: f64,
    /// Gate REDUCE with relaxed keep probabilities instead of the
    /// straight-through hard values; used for finite-difference checks.
    pub soft_gate: bool,
}

impl ForwardOptions {
    pub fn at_temperature(temperature: f64) -> Self {
        ForwardOptions {
            temperature,
            soft_gate: false,
        }
    }
}

/// Softmax weights of one AMP pass. Passes are listed in execution order:
/// down path, bottom level, then FeatureMixing on the way up.
#[derive(Debug, Clone)]
pub struct AlphaTrace {
    pub level: usize,
    pub graph: Arc<LevelGraph>,
    pub alpha: Vec<f64>,
}

pub struct ForwardOutput {
    /// `nodes x output` normalised prediction.
    pub prediction: Tensor,
    pub levels: Vec<HierarchyLevel>,
    pub alphas: Vec<AlphaTrace>,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let (f, h) = (config.latent, config.hidden);
        let levels = config.effective_levels();
        let node_encoder = Mlp::register(
            &mut params,
            &mut rng,
            "enc.node",
            &[config.node_input],
            h,
            f,
            true,
            false,
        );
        let edge_width = config.mode.offset_width();
        let edge_encoder = Mlp::register(
            &mut params,
            &mut rng,
            "enc.edge",
            &[edge_width],
            h,
            f,
            true,
            false,
        );
        let coarse_edge_encoder = (levels > 1).then(|| {
            Mlp::register(
                &mut params,
                &mut rng,
                "enc.coarse_edge",
                &[edge_width],
                h,
                f,
                true,
                false,
            )
        });
        let dynamic = config.variant.dynamic_hierarchy();
        let mut down = Vec::with_capacity(levels);
        for l in 0..levels {
            let count = if config.variant == Variant::Flat {
                config.flat_passes
            } else {
                config.layers_per_level
            };
            let layers = (0..count)
                .map(|k| {
                    let head = dynamic && l + 1 < levels && k + 1 == count;
                    AmpParams::register(
                        &mut params,
                        &mut rng,
                        &format!("down{l}.amp{k}"),
                        f,
                        h,
                        head,
                    )
                })
                .collect();
            down.push(layers);
        }
        let mix = (0..levels.saturating_sub(1))
            .map(|l| {
                (0..config.layers_per_level)
                    .map(|k| {
                        AmpParams::register(
                            &mut params,
                            &mut rng,
                            &format!("mix{l}.amp{k}"),
                            f,
                            h,
                            false,
                        )
                    })
                    .collect()
            })
            .collect();
        let decoder = Mlp::register(
            &mut params,
            &mut rng,
            "dec",
            &[f],
            h,
            config.output,
            false,
            false,
        );
        Ok(Model {
            config,
            params,
            layout: Layout {
                node_encoder,
                edge_encoder,
                coarse_edge_encoder,
                down,
                mix,
                decoder,
            },
            edge_norm: None,
        })
    }

    /// Rebuilds a model from its config and flat parameter values.
    pub fn from_flat(config: ModelConfig, flat: &[f64]) -> Result<Self> {
        let mut model = Model::new(config)?;
        if !model.params.load_flat(flat) {
            return Err(ModelError::Config(format!(
                "parameter blob holds {} values, model needs {}",
                flat.len(),
                model.params.scalar_count()
            )));
        }
        Ok(model)
    }

    /// Sets the edge offset normalisation; its width must match the mesh
    /// mode.
    pub fn set_edge_norm(&mut self, norm: ChannelStats) -> Result<()> {
        let expected = self.config.mode.offset_width();
        if norm.width() != expected {
            return Err(ModelError::Config(format!(
                "edge statistics have {} channels, offsets have {expected}",
                norm.width()
            )));
        }
        self.edge_norm = Some(norm);
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<BoundParams> {
        Ok(self.params.bind(tape)?)
    }

    /// Node and edge encoders on the input mesh.
    pub fn encode(
        &self,
        tape: &mut Tape,
        bp: &BoundParams,
        graph: &Arc<LevelGraph>,
        node_inputs: &Matrix,
    ) -> Result<LatentGraph> {
        if node_inputs.cols != self.config.node_input || node_inputs.rows != graph.node_count {
            return Err(ModelError::InputWidth {
                got: node_inputs.cols,
                expected: self.config.node_input,
            });
        }
        let x = tape.constant(node_inputs.clone())?;
        let nodes = self.layout.node_encoder.forward(tape, bp, &[x])?;
        let offsets = tape.constant(graph.offsets(self.config.mode, self.edge_norm.as_ref()))?;
        let edges = self.layout.edge_encoder.forward(tape, bp, &[offsets])?;
        Ok(LatentGraph {
            nodes,
            edges,
            graph: Arc::clone(graph),
        })
    }

    fn encode_coarse_edges(
        &self,
        tape: &mut Tape,
        bp: &BoundParams,
        graph: &LevelGraph,
    ) -> Result<Tensor> {
        let enc = self
            .layout
            .coarse_edge_encoder
            .as_ref()
            .ok_or_else(|| ModelError::Config("no coarse edge encoder".into()))?;
        let offsets = tape.constant(graph.offsets(self.config.mode, self.edge_norm.as_ref()))?;
        enc.forward(tape, bp, &[offsets])
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bp: &BoundParams,
        mesh: &MeshGraph,
        node_inputs: &Matrix,
        opts: &ForwardOptions,
        noise: &dyn SelectionNoise,
    ) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let top = Arc::new(LevelGraph::from_mesh(mesh));
        let mut latent = self.encode(tape, bp, &top, node_inputs)?;
        let levels = cfg.effective_levels();
        let mut alphas = Vec::new();
        let trace = |tape: &Tape, out: &AmpOutput, alphas: &mut Vec<AlphaTrace>| {
            alphas.push(AlphaTrace {
                level: out.latent.graph.level,
                graph: Arc::clone(&out.latent.graph),
                alpha: tape.value(out.alpha).data.clone(),
            });
        };

        let mut skips = Vec::with_capacity(levels);
        let mut links: Vec<LevelLink> = Vec::with_capacity(levels);
        for l in 0..levels - 1 {
            let layers = &self.layout.down[l];
            let (last, rest) = layers.split_last().expect("at least one layer per level");
            for layer in rest {
                let out = amp_forward(tape, bp, layer, &latent, false)?;
                trace(tape, &out, &mut alphas);
                latent = out.latent;
            }
            let (out, link) = if cfg.variant.dynamic_hierarchy() {
                let sel = SelectOptions {
                    temperature: opts.temperature,
                    soft_gate: opts.soft_gate,
                    hops: cfg.hops,
                    learned_weights: cfg.variant.learned_inter_level(),
                    noise,
                };
                diff_select(tape, bp, last, &latent, &sel)?
            } else {
                let out = amp_forward(tape, bp, last, &latent, false)?;
                let link = static_link(
                    tape,
                    &latent.graph,
                    out.alpha,
                    cfg.variant.learned_inter_level(),
                    cfg.hops,
                )?;
                (out, link)
            };
            trace(tape, &out, &mut alphas);
            let coarse_nodes = reduce(tape, out.latent.nodes, &link, cfg.raw_alpha)?;
            let coarse_edges = self.encode_coarse_edges(tape, bp, &link.coarse_graph)?;
            skips.push(out.latent);
            latent = LatentGraph {
                nodes: coarse_nodes,
                edges: coarse_edges,
                graph: Arc::clone(&link.coarse_graph),
            };
            links.push(link);
        }
        for layer in &self.layout.down[levels - 1] {
            let out = amp_forward(tape, bp, layer, &latent, false)?;
            trace(tape, &out, &mut alphas);
            latent = out.latent;
        }
        for l in (0..levels - 1).rev() {
            let expanded = expand(tape, latent.nodes, &links[l], cfg.raw_alpha)?;
            let (mixed, mix_alphas) =
                feature_mixing(tape, bp, &self.layout.mix[l], expanded, &skips[l])?;
            for alpha in mix_alphas {
                alphas.push(AlphaTrace {
                    level: mixed.graph.level,
                    graph: Arc::clone(&mixed.graph),
                    alpha: tape.value(alpha).data.clone(),
                });
            }
            latent = mixed;
        }
        let prediction = self.layout.decoder.forward(tape, bp, &[latent.nodes])?;
        Ok(ForwardOutput {
            prediction,
            levels: links.into_iter().map(|l| l.record).collect(),
            alphas,
        })
    }
}

/// Node input matrix: field channels followed by the node-type one-hot.
pub fn node_input_matrix(fields: &Matrix, node_types: &[NodeType]) -> Matrix {
    let c = fields.cols + NodeType::COUNT;
    let mut data = Vec::with_capacity(fields.rows * c);
    for (r, t) in node_types.iter().enumerate() {
        data.extend_from_slice(fields.row(r));
        let mut onehot = [0.0; NodeType::COUNT];
        onehot[t.index()] = 1.0;
        data.extend_from_slice(&onehot);
    }
    Matrix::from_vec(fields.rows, c, data)
}

#[cfg(test)]
mod tests;

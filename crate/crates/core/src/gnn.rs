//! Attention-based message passing over a retrieved subgraph. The super
//! node's final feature is the knowledge-infused dialogue representation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extraction::{Origin, SubgraphSpec};
use crate::numerics::{Activation, Tape, Tensor, Var};
use crate::params::{ParamId, ParamStore};

pub const GNN_GROUP: u32 = 1;

pub const SUPER_TYPE: usize = 0;
pub const LINKED_TYPE: usize = 1;
pub const EXPANDED_TYPE: usize = 2;
const NODE_TYPES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GnnConfig {
    pub layers: usize,
    pub hidden: usize,
    /// Width of node-type, relation and edge-score embeddings.
    pub relation_dim: usize,
    /// Width of the attention scoring layer.
    pub attention_dim: usize,
    pub activation: Activation,
    pub init_seed: u64,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig {
            layers: 5,
            hidden: 200,
            relation_dim: 16,
            attention_dim: 32,
            activation: Activation::Tanh,
            init_seed: 1,
        }
    }
}

impl GnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.relation_dim == 0 || self.attention_dim == 0 {
            return Err(Error::Config("gnn dims must be positive".into()));
        }
        Ok(())
    }
}

/// Directed message edges of one subgraph in local node indices.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageGraph {
    pub nodes: usize,
    pub node_types: Vec<usize>,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub relation: Vec<usize>,
    pub score: Vec<f64>,
}

impl MessageGraph {
    /// KG edges in both directions, then super edges in both directions.
    /// KG edges carry their weight, super edges the concept score.
    pub fn from_spec(spec: &SubgraphSpec) -> Result<Self> {
        let n = spec.node_count();
        let mut node_types = vec![SUPER_TYPE];
        node_types.extend(spec.concepts.iter().map(|c| match c.origin {
            Origin::Linked => LINKED_TYPE,
            Origin::Expanded => EXPANDED_TYPE,
        }));
        let mut g = MessageGraph {
            nodes: n,
            node_types,
            src: Vec::new(),
            dst: Vec::new(),
            relation: Vec::new(),
            score: Vec::new(),
        };
        let missing = || Error::Sample(format!("subgraph {}/{}: edge endpoint not kept", spec.sample, spec.candidate));
        for e in &spec.kg_edges {
            let h = spec.local_index(e.head).ok_or_else(missing)?;
            let t = spec.local_index(e.tail).ok_or_else(missing)?;
            g.push(h, t, e.relation.0 as usize, e.weight);
            g.push(t, h, e.relation.0 as usize, e.weight);
        }
        let sup = spec.super_relation.0 as usize;
        for s in &spec.super_edges {
            let i = spec.local_index(s.concept).ok_or_else(missing)?;
            g.push(0, i, sup, s.weight);
            g.push(i, 0, sup, s.weight);
        }
        Ok(g)
    }

    fn push(&mut self, src: usize, dst: usize, rel: usize, score: f64) {
        self.src.push(src);
        self.dst.push(dst);
        self.relation.push(rel);
        self.score.push(score);
    }

    pub fn num_edges(&self) -> usize {
        self.src.len()
    }

    /// Edges ending at `node`, as indices into the edge arrays.
    pub fn incoming(&self, node: usize) -> Vec<usize> {
        (0..self.num_edges()).filter(|&e| self.dst[e] == node).collect()
    }

    fn restrict(&self, keep: &[usize]) -> MessageGraph {
        MessageGraph {
            nodes: self.nodes,
            node_types: self.node_types.clone(),
            src: keep.iter().map(|&e| self.src[e]).collect(),
            dst: keep.iter().map(|&e| self.dst[e]).collect(),
            relation: keep.iter().map(|&e| self.relation[e]).collect(),
            score: keep.iter().map(|&e| self.score[e]).collect(),
        }
    }
}

#[derive(Debug, Clone)]
struct LayerIds {
    att_wh: ParamId,
    att_we: ParamId,
    att_a: ParamId,
    msg: ParamId,
    upd_w: ParamId,
    upd_b: ParamId,
}

#[derive(Debug, Clone)]
struct Ids {
    bridge_in: Option<ParamId>,
    bridge_out: Option<ParamId>,
    type_emb: ParamId,
    rel_emb: ParamId,
    score_w: ParamId,
    score_b: ParamId,
    layers: Vec<LayerIds>,
}

impl Ids {
    fn resolve(p: &ParamStore, layers: usize, bridged: bool) -> Result<Self> {
        let get = |n: &str| p.id_of(n).ok_or_else(|| Error::Checkpoint(format!("missing gnn parameter {n}")));
        let layer_ids = (0..layers)
            .map(|l| {
                let n = |s: &str| get(&format!("layer{l}.{s}"));
                Ok(LayerIds {
                    att_wh: n("att.wh")?,
                    att_we: n("att.we")?,
                    att_a: n("att.a")?,
                    msg: n("msg.w")?,
                    upd_w: n("upd.w")?,
                    upd_b: n("upd.b")?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Ids {
            bridge_in: if bridged { Some(get("bridge_in.w")?) } else { None },
            bridge_out: if bridged { Some(get("bridge_out.w")?) } else { None },
            type_emb: get("type_emb")?,
            rel_emb: get("rel_emb")?,
            score_w: get("score.w")?,
            score_b: get("score.b")?,
            layers: layer_ids,
        })
    }
}

/// Serialized form of a [`GnnModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnState {
    pub config: GnnConfig,
    pub input_dim: usize,
    /// Relation count including the reserved super relation.
    pub relations: usize,
    pub params: ParamStore,
}

#[derive(Debug, Clone)]
pub struct GnnModel {
    config: GnnConfig,
    input_dim: usize,
    relations: usize,
    params: ParamStore,
    ids: Ids,
}

impl GnnModel {
    /// `input_dim` is the encoder width; `kg_relations` excludes the super
    /// relation, which is appended as the last relation id.
    pub fn new(config: GnnConfig, input_dim: usize, kg_relations: usize) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::Config("gnn input_dim must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let (h, r, a) = (config.hidden, config.relation_dim, config.attention_dim);
        let relations = kg_relations + 1;
        let lin = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| Tensor::uniform(&[rows, cols], (1.0 / rows as f64).sqrt(), rng);
        let mut p = ParamStore::new(GNN_GROUP);
        let bridged = input_dim != h;
        if bridged {
            p.add("bridge_in.w", lin(input_dim, h, &mut rng));
            p.add("bridge_out.w", lin(h, input_dim, &mut rng));
        }
        p.add("type_emb", Tensor::uniform(&[NODE_TYPES, r], 0.5, &mut rng));
        p.add("rel_emb", Tensor::uniform(&[relations, r], 0.5, &mut rng));
        p.add("score.w", Tensor::uniform(&[1, r], 0.5, &mut rng));
        p.add("score.b", Tensor::zeros(&[1, r]));
        for l in 0..config.layers {
            let n = |s: &str| format!("layer{l}.{s}");
            p.add(n("att.wh"), lin(h, a, &mut rng));
            p.add(n("att.we"), lin(3 * r, a, &mut rng));
            p.add(n("att.a"), lin(a, 1, &mut rng));
            p.add(n("msg.w"), lin(h, h, &mut rng));
            p.add(n("upd.w"), lin(2 * h, h, &mut rng));
            p.add(n("upd.b"), Tensor::zeros(&[1, h]));
        }
        let ids = Ids::resolve(&p, config.layers, bridged)?;
        Ok(GnnModel {
            config,
            input_dim,
            relations,
            params: p,
            ids,
        })
    }

    pub fn from_state(state: GnnState) -> Result<Self> {
        if state.relations == 0 {
            return Err(Error::Checkpoint("gnn state without relations".into()));
        }
        let reference = GnnModel::new(state.config.clone(), state.input_dim, state.relations - 1)?;
        reference.params.check_compatible(&state.params)?;
        Ok(GnnModel {
            params: state.params,
            ..reference
        })
    }

    pub fn to_state(&self) -> GnnState {
        GnnState {
            config: self.config.clone(),
            input_dim: self.input_dim,
            relations: self.relations,
            params: self.params.clone(),
        }
    }

    pub fn config(&self) -> &GnnConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Initial node features (`nodes x input_dim`): the super node gets
    /// `h_prime`, concept nodes their precomputed embeddings.
    fn initial_features(&self, tape: &mut Tape, h_prime: Var, spec: &SubgraphSpec) -> Result<Var> {
        let d = self.input_dim;
        if tape.dims(h_prime) != (1, d) {
            return Err(Error::shape("propagate", format!("h' is {:?}, expected 1x{d}", tape.dims(h_prime))));
        }
        let n = spec.node_count();
        let sup = tape.scatter_add_rows(h_prime, &[0], n)?;
        if spec.concepts.is_empty() {
            return Ok(sup);
        }
        if let Some(bad) = spec.concept_embeddings.iter().find(|r| r.len() != d) {
            return Err(Error::shape("propagate", format!("concept embedding of {} in dim {d}", bad.len())));
        }
        let rows = tape.constant_matrix(spec.concepts.len(), d, spec.concept_embeddings.concat())?;
        let targets: Vec<usize> = (1..n).collect();
        let concepts = tape.scatter_add_rows(rows, &targets, n)?;
        tape.add(sup, concepts)
    }

    /// Per-edge conditioning `type_emb[src type] ⊕ rel_emb[rel] ⊕ affine(score)`.
    fn edge_features(&self, tape: &mut Tape, g: &MessageGraph) -> Result<Var> {
        if let Some(&bad) = g.relation.iter().find(|&&r| r >= self.relations) {
            return Err(Error::shape("gat_layer", format!("relation {bad} of {}", self.relations)));
        }
        let types: Vec<usize> = g.src.iter().map(|&s| g.node_types[s]).collect();
        let type_emb = self.params.bind(tape, self.ids.type_emb)?;
        let rel_emb = self.params.bind(tape, self.ids.rel_emb)?;
        let t = tape.gather_rows(type_emb, &types)?;
        let r = tape.gather_rows(rel_emb, &g.relation)?;
        let s = tape.constant_matrix(g.num_edges(), 1, g.score.clone())?;
        let sw = self.params.bind(tape, self.ids.score_w)?;
        let sb = self.params.bind(tape, self.ids.score_b)?;
        let s = tape.matmul(s, sw)?;
        let s = tape.add(s, sb)?;
        tape.concat_cols(&[t, r, s])
    }

    /// One propagation layer. Returns the updated features of nodes
    /// `0..out_rows` (all nodes, or just the super node) and the attention
    /// weight of every edge in `g` (empty when `g` has no edges).
    ///
    /// Only edges whose destination is below `out_rows` may appear in `g`.
    pub fn gat_layer_on(
        &self,
        tape: &mut Tape,
        features: Var,
        g: &MessageGraph,
        edge_feats: Option<Var>,
        layer: usize,
        out_rows: usize,
    ) -> Result<(Var, Option<Var>)> {
        let hid = self.config.hidden;
        if tape.dims(features) != (g.nodes, hid) {
            return Err(Error::shape("gat_layer", format!("features {:?} for {} nodes", tape.dims(features), g.nodes)));
        }
        let ids = self
            .ids
            .layers
            .get(layer)
            .ok_or_else(|| Error::shape("gat_layer", format!("layer {layer} of {}", self.config.layers)))?;
        let (agg, alpha) = match edge_feats {
            Some(ef) if g.num_edges() > 0 => {
                let hs = tape.gather_rows(features, &g.src)?;
                let wh = self.params.bind(tape, ids.att_wh)?;
                let we = self.params.bind(tape, ids.att_we)?;
                let a = self.params.bind(tape, ids.att_a)?;
                let zh = tape.matmul(hs, wh)?;
                let ze = tape.matmul(ef, we)?;
                let z = tape.add(zh, ze)?;
                let z = tape.tanh(z)?;
                let logit = tape.matmul(z, a)?;
                let alpha = tape.segment_softmax(logit, &g.dst, out_rows)?;
                let msg_w = self.params.bind(tape, ids.msg)?;
                let m = tape.matmul(hs, msg_w)?;
                let m = tape.scale_rows(m, alpha)?;
                (tape.scatter_add_rows(m, &g.dst, out_rows)?, Some(alpha))
            }
            _ => (tape.constant(&Tensor::zeros(&[out_rows, hid]))?, None),
        };
        let own = if out_rows == g.nodes { features } else { tape.slice_rows(features, 0, out_rows)? };
        let cat = tape.concat_cols(&[own, agg])?;
        let w = self.params.bind(tape, ids.upd_w)?;
        let b = self.params.bind(tape, ids.upd_b)?;
        let z = tape.matmul(cat, w)?;
        let z = tape.add(z, b)?;
        Ok((tape.elementwise(self.config.activation, z)?, alpha))
    }

    fn bridge(&self, tape: &mut Tape, x: Var, id: Option<ParamId>) -> Result<Var> {
        match id {
            Some(id) => {
                let w = self.params.bind(tape, id)?;
                tape.matmul(x, w)
            }
            None => Ok(x),
        }
    }

    /// Runs all layers and returns the final features of every node
    /// (`nodes x hidden`).
    pub fn node_features_on(&self, tape: &mut Tape, h_prime: Var, spec: &SubgraphSpec) -> Result<Var> {
        let g = MessageGraph::from_spec(spec)?;
        let x = self.initial_features(tape, h_prime, spec)?;
        let mut h = self.bridge(tape, x, self.ids.bridge_in)?;
        let ef = if g.num_edges() > 0 { Some(self.edge_features(tape, &g)?) } else { None };
        for l in 0..self.config.layers {
            h = self.gat_layer_on(tape, h, &g, ef, l, g.nodes)?.0;
        }
        Ok(h)
    }

    /// `h_X`: the super node's final feature mapped back to the encoder
    /// width (`1 x input_dim`). The last layer only updates the super node.
    pub fn propagate_on(&self, tape: &mut Tape, h_prime: Var, spec: &SubgraphSpec) -> Result<Var> {
        let g = MessageGraph::from_spec(spec)?;
        let x = self.initial_features(tape, h_prime, spec)?;
        let mut h = self.bridge(tape, x, self.ids.bridge_in)?;
        let ef = if g.num_edges() > 0 { Some(self.edge_features(tape, &g)?) } else { None };
        let layers = self.config.layers;
        for l in 0..layers.saturating_sub(1) {
            h = self.gat_layer_on(tape, h, &g, ef, l, g.nodes)?.0;
        }
        let sup = if layers > 0 {
            let into_super = g.incoming(0);
            let last = g.restrict(&into_super);
            let ef_last = match ef {
                Some(ef) if !into_super.is_empty() => Some(tape.gather_rows(ef, &into_super)?),
                _ => None,
            };
            self.gat_layer_on(tape, h, &last, ef_last, layers - 1, 1)?.0
        } else {
            tape.slice_rows(h, 0, 1)?
        };
        self.bridge(tape, sup, self.ids.bridge_out)
    }

    /// [`Self::propagate_on`] without gradient tracking.
    pub fn propagate(&self, spec: &SubgraphSpec, h_prime: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::no_grad();
        let h = tape.constant_matrix(1, h_prime.len(), h_prime.to_vec())?;
        let out = self.propagate_on(&mut tape, h, spec)?;
        Ok(tape.value(out).to_vec())
    }
}

#[cfg(test)]
mod tests;

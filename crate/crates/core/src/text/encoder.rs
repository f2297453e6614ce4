//! Small pre-norm transformer encoder with CLS pooling and a logistic
//! prediction head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{TokenSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::numerics::{kernels, sigmoid, Activation, Tape, Tensor, Var};
use crate::params::{ParamId, ParamStore};

pub const ENCODER_GROUP: u32 = 0;
const LN_EPS: f64 = 1e-5;
const MASKED: f64 = -1e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub activation: Activation,
    /// Width of the prediction head input; equals `dim` unless a variant
    /// feeds extra features into the head.
    pub head_input_dim: usize,
    pub init_seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            dim: 64,
            layers: 2,
            heads: 2,
            ffn_dim: 128,
            max_seq_len: 512,
            activation: Activation::Relu,
            head_input_dim: 64,
            init_seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.ffn_dim == 0 || self.max_seq_len < 2 {
            return Err(Error::Config("encoder dims must be positive and max_seq_len >= 2".into()));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::Config(format!("heads {} must divide dim {}", self.heads, self.dim)));
        }
        if self.head_input_dim == 0 {
            return Err(Error::Config("head_input_dim must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct LayerIds {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone)]
struct Ids {
    tok: ParamId,
    pos: ParamId,
    layers: Vec<LayerIds>,
    lnf_g: ParamId,
    lnf_b: ParamId,
    head_w: ParamId,
    head_b: ParamId,
}

impl Ids {
    fn resolve(store: &ParamStore, layers: usize) -> Result<Self> {
        let get = |name: &str| store.id_of(name).ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")));
        let layers = (0..layers)
            .map(|l| {
                let n = |s: &str| get(&format!("layer{l}.{s}"));
                Ok(LayerIds {
                    ln1_g: n("ln1.g")?,
                    ln1_b: n("ln1.b")?,
                    wq: n("wq")?,
                    wk: n("wk")?,
                    wv: n("wv")?,
                    wo: n("wo")?,
                    bo: n("bo")?,
                    ln2_g: n("ln2.g")?,
                    ln2_b: n("ln2.b")?,
                    w1: n("w1")?,
                    b1: n("b1")?,
                    w2: n("w2")?,
                    b2: n("b2")?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Ids {
            tok: get("tok_emb")?,
            pos: get("pos_emb")?,
            layers,
            lnf_g: get("final_ln.g")?,
            lnf_b: get("final_ln.b")?,
            head_w: get("head.w")?,
            head_b: get("head.b")?,
        })
    }
}

/// The trainable text encoder `f_e` plus prediction head `f_d`.
#[derive(Debug, Clone)]
pub struct EncoderModel {
    config: EncoderConfig,
    vocab: Vocabulary,
    params: ParamStore,
    ids: Ids,
}

/// Serialized form of an [`EncoderModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderState {
    pub config: EncoderConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
}

impl EncoderModel {
    pub fn new(config: EncoderConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let d = config.dim;
        let f = config.ffn_dim;
        let mut p = ParamStore::new(ENCODER_GROUP);
        let lin = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| Tensor::uniform(&[rows, cols], (1.0 / rows as f64).sqrt(), rng);
        let ones = |n: usize| Tensor::matrix(1, n, vec![1.0; n]).expect("finite");
        let zeros = |n: usize| Tensor::zeros(&[1, n]);

        p.add("tok_emb", Tensor::uniform(&[vocab.len(), d], 1.0, &mut rng));
        p.add("pos_emb", Tensor::uniform(&[config.max_seq_len, d], 0.1, &mut rng));
        for l in 0..config.layers {
            let n = |s: &str| format!("layer{l}.{s}");
            p.add(n("ln1.g"), ones(d));
            p.add(n("ln1.b"), zeros(d));
            p.add(n("wq"), lin(d, d, &mut rng));
            p.add(n("wk"), lin(d, d, &mut rng));
            p.add(n("wv"), lin(d, d, &mut rng));
            p.add(n("wo"), lin(d, d, &mut rng));
            p.add(n("bo"), zeros(d));
            p.add(n("ln2.g"), ones(d));
            p.add(n("ln2.b"), zeros(d));
            p.add(n("w1"), lin(d, f, &mut rng));
            p.add(n("b1"), zeros(f));
            p.add(n("w2"), lin(f, d, &mut rng));
            p.add(n("b2"), zeros(d));
        }
        p.add("final_ln.g", ones(d));
        p.add("final_ln.b", zeros(d));
        p.add("head.w", lin(config.head_input_dim, 1, &mut rng));
        p.add("head.b", Tensor::zeros(&[1, 1]));
        let ids = Ids::resolve(&p, config.layers)?;
        Ok(EncoderModel {
            config,
            vocab,
            params: p,
            ids,
        })
    }

    pub fn from_state(state: EncoderState) -> Result<Self> {
        state.config.validate()?;
        let ids = Ids::resolve(&state.params, state.config.layers)?;
        let model = EncoderModel {
            config: state.config,
            vocab: state.vocab,
            params: state.params,
            ids,
        };
        let reference = EncoderModel::new(model.config.clone(), model.vocab.clone())?;
        reference.params.check_compatible(&model.params)?;
        Ok(model)
    }

    pub fn to_state(&self) -> EncoderState {
        EncoderState {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            params: self.params.clone(),
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    /// Records the forward pass on `tape` and returns the `1 x dim` hidden
    /// state at the CLS position (position 0).
    pub fn encode_on(&self, tape: &mut Tape, seq: &TokenSequence) -> Result<Var> {
        let n = seq.len();
        if n == 0 {
            return Err(Error::shape("encode", "empty sequence"));
        }
        if n > self.config.max_seq_len {
            return Err(Error::shape("encode", format!("length {n} exceeds max_seq_len {}", self.config.max_seq_len)));
        }
        if seq.mask.len() != n {
            return Err(Error::shape("encode", "mask length differs from ids"));
        }
        let idx: Vec<usize> = seq.ids.iter().map(|&i| i as usize).collect();
        let d = self.config.dim;
        let heads = self.config.heads;
        let dh = d / heads;
        let p = &self.params;
        let ids = &self.ids;

        let tok = p.bind(tape, ids.tok)?;
        let pos = p.bind(tape, ids.pos)?;
        let x_tok = tape.gather_rows(tok, &idx)?;
        let x_pos = tape.slice_rows(pos, 0, n)?;
        let mut x = tape.add(x_tok, x_pos)?;

        let mask = if seq.mask.iter().all(|&m| m == 1) {
            None
        } else {
            let row = seq.mask.iter().map(|&m| if m == 1 { 0.0 } else { MASKED }).collect();
            Some(tape.constant_matrix(1, n, row)?)
        };
        let inv_sqrt = 1.0 / (dh as f64).sqrt();

        for (l, lid) in ids.layers.iter().enumerate() {
            // Only the CLS row feeds the output, so the last layer computes
            // queries, residuals and the feed-forward block for that row alone.
            let last = l + 1 == ids.layers.len();
            let h = self.affine_norm(tape, x, lid.ln1_g, lid.ln1_b)?;
            let q_src = if last { tape.slice_rows(h, 0, 1)? } else { h };
            let wq = p.bind(tape, lid.wq)?;
            let wk = p.bind(tape, lid.wk)?;
            let wv = p.bind(tape, lid.wv)?;
            let q = tape.matmul(q_src, wq)?;
            let k = tape.matmul(h, wk)?;
            let v = tape.matmul(h, wv)?;
            let mut head_out = Vec::with_capacity(heads);
            for hd in 0..heads {
                let qh = tape.slice_cols(q, hd * dh, dh)?;
                let kh = tape.slice_cols(k, hd * dh, dh)?;
                let vh = tape.slice_cols(v, hd * dh, dh)?;
                let kt = tape.transpose(kh)?;
                let scores = tape.matmul(qh, kt)?;
                let mut scores = tape.scale(scores, inv_sqrt)?;
                if let Some(m) = mask {
                    scores = tape.add(scores, m)?;
                }
                let attn = tape.softmax_rows(scores)?;
                head_out.push(tape.matmul(attn, vh)?);
            }
            let cat = if heads == 1 { head_out[0] } else { tape.concat_cols(&head_out)? };
            let wo = p.bind(tape, lid.wo)?;
            let bo = p.bind(tape, lid.bo)?;
            let o = tape.matmul(cat, wo)?;
            let o = tape.add(o, bo)?;
            let resid = if last { tape.slice_rows(x, 0, 1)? } else { x };
            x = tape.add(resid, o)?;

            let h2 = self.affine_norm(tape, x, lid.ln2_g, lid.ln2_b)?;
            let w1 = p.bind(tape, lid.w1)?;
            let b1 = p.bind(tape, lid.b1)?;
            let w2 = p.bind(tape, lid.w2)?;
            let b2 = p.bind(tape, lid.b2)?;
            let f = tape.matmul(h2, w1)?;
            let f = tape.add(f, b1)?;
            let f = tape.elementwise(self.config.activation, f)?;
            let f = tape.matmul(f, w2)?;
            let f = tape.add(f, b2)?;
            x = tape.add(x, f)?;
        }
        if ids.layers.is_empty() {
            x = tape.slice_rows(x, 0, 1)?;
        }
        self.affine_norm(tape, x, ids.lnf_g, ids.lnf_b)
    }

    fn affine_norm(&self, tape: &mut Tape, x: Var, g: ParamId, b: ParamId) -> Result<Var> {
        let n = tape.layernorm_rows(x, LN_EPS)?;
        let g = self.params.bind(tape, g)?;
        let b = self.params.bind(tape, b)?;
        let n = tape.mul(n, g)?;
        tape.add(n, b)
    }

    /// `h'`: the CLS hidden state, computed without recording gradients.
    pub fn encode(&self, seq: &TokenSequence) -> Result<Vec<f64>> {
        let mut tape = Tape::no_grad();
        let h = self.encode_on(&mut tape, seq)?;
        Ok(tape.value(h).to_vec())
    }

    /// Head logit `features . w + b` on the tape.
    pub fn logit_on(&self, tape: &mut Tape, features: Var) -> Result<Var> {
        let (r, c) = tape.dims(features);
        if r != 1 || c != self.config.head_input_dim {
            return Err(Error::shape("predict", format!("features {r}x{c}, head expects 1x{}", self.config.head_input_dim)));
        }
        let w = self.params.bind(tape, self.ids.head_w)?;
        let b = self.params.bind(tape, self.ids.head_b)?;
        let z = tape.matmul(features, w)?;
        tape.add(z, b)
    }

    /// `sigmoid(features . w + b)` on the tape.
    pub fn predict_on(&self, tape: &mut Tape, features: Var) -> Result<Var> {
        let z = self.logit_on(tape, features)?;
        tape.sigmoid(z)
    }

    /// `sigmoid(features . w + b)`.
    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.config.head_input_dim {
            return Err(Error::shape(
                "predict",
                format!("{} features, head expects {}", features.len(), self.config.head_input_dim),
            ));
        }
        let w = self.params.get(self.ids.head_w).data();
        let b = self.params.get(self.ids.head_b).data()[0];
        Ok(sigmoid(kernels::dot(features, w) + b))
    }

    /// Overwrites the prediction head; used by tests and tools.
    pub fn set_head(&mut self, w: &[f64], b: f64) -> Result<()> {
        if w.len() != self.config.head_input_dim {
            return Err(Error::shape("set_head", "weight length"));
        }
        self.params.get_mut(self.ids.head_w).data_mut().copy_from_slice(w);
        self.params.get_mut(self.ids.head_b).data_mut()[0] = b;
        Ok(())
    }

    /// Sequence `[CLS] phrase [SEP]` used for concept embeddings.
    pub fn phrase_sequence(&self, phrase: &str) -> TokenSequence {
        let mut ids = vec![Vocabulary::CLS_ID];
        ids.extend(self.vocab.ids(phrase));
        ids.truncate(self.config.max_seq_len - 1);
        ids.push(Vocabulary::SEP_ID);
        TokenSequence::unpadded(ids)
    }
}

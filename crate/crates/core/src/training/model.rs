use crate::error::{Error, Result};
use crate::extraction::SubgraphSpec;
use crate::gnn::GnnModel;
use crate::kg::normalize_phrase;
use crate::numerics::{Tape, Var};
use crate::sample::MrsSample;
use crate::text::{trans_a, trans_a_with_knowledge, EncoderModel, Vocabulary};

use super::losses::{bce_loss, combined_loss, cosine_loss, LossWeights};
use super::{TrainConfig, Variant};

/// Encoder, optional GNN and the variant deciding how they are combined.
#[derive(Debug, Clone)]
pub struct SelectionModel {
    pub variant: Variant,
    pub encoder: EncoderModel,
    pub gnn: Option<GnnModel>,
    pub loss: LossWeights,
    pub s0_concepts: usize,
    pub max_seq_len: usize,
    pub stop_grad_gnn_target: bool,
}

/// Tape handles of one training row.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub y_hat: Var,
    pub h_prime: Var,
    pub h_x: Option<Var>,
    pub l_bce: Var,
    pub l_cos: Option<Var>,
    pub loss: Var,
}

impl SelectionModel {
    /// Fresh model for `config`; `kg_relations` sizes the GNN's relation
    /// table and is ignored by variants without a GNN.
    pub fn new(config: &TrainConfig, vocab: Vocabulary, kg_relations: usize) -> Result<Self> {
        config.validate()?;
        let encoder = EncoderModel::new(config.effective_encoder(), vocab)?;
        let gnn = if config.variant.uses_gnn() {
            Some(GnnModel::new(config.effective_gnn(), encoder.dim(), kg_relations)?)
        } else {
            None
        };
        Ok(SelectionModel {
            variant: config.variant,
            encoder,
            gnn,
            loss: config.loss,
            s0_concepts: config.s0_concepts,
            max_seq_len: config.extraction.max_seq_len,
            stop_grad_gnn_target: config.stop_grad_gnn_target,
        })
    }

    fn need_spec<'a>(&self, spec: Option<&'a SubgraphSpec>, sample: usize, candidate: usize) -> Result<&'a SubgraphSpec> {
        spec.ok_or_else(|| Error::MissingSubgraph {
            variant: self.variant.to_string(),
            sample,
            candidate,
        })
    }

    fn gnn(&self) -> Result<&GnnModel> {
        self.gnn
            .as_ref()
            .ok_or_else(|| Error::Config(format!("variant {} has no gnn", self.variant)))
    }

    fn mean_concepts(&self, tape: &mut Tape, spec: &SubgraphSpec) -> Result<Var> {
        let d = self.encoder.dim();
        let mut mean = vec![0.0; d];
        for row in &spec.concept_embeddings {
            if row.len() != d {
                return Err(Error::shape("mean_concepts", format!("embedding {} in dim {d}", row.len())));
            }
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        if !spec.concept_embeddings.is_empty() {
            let n = spec.concept_embeddings.len() as f64;
            mean.iter_mut().for_each(|m| *m /= n);
        }
        tape.constant_matrix(1, d, mean)
    }

    fn gnn_output(&self, tape: &mut Tape, h_prime: Var, spec: &SubgraphSpec) -> Result<Var> {
        self.gnn()?.propagate_on(tape, h_prime, spec)
    }

    /// Encodes the row and returns `(h', head features, h_X if computed)`.
    /// `with_target` also runs the GNN for the SINLG cosine term.
    fn features(
        &self,
        tape: &mut Tape,
        sample: &MrsSample,
        sample_index: usize,
        candidate: usize,
        spec: Option<&SubgraphSpec>,
        with_target: bool,
    ) -> Result<(Var, Var, Option<Var>)> {
        let vocab = self.encoder.vocab();
        let (seq, _) = if self.variant == Variant::S0 {
            let spec = self.need_spec(spec, sample_index, candidate)?;
            let phrases: Vec<String> = spec
                .concept_names
                .iter()
                .take(self.s0_concepts)
                .map(|n| normalize_phrase(n))
                .collect();
            trans_a_with_knowledge(vocab, sample, candidate, &phrases, self.max_seq_len)?
        } else {
            trans_a(vocab, sample, candidate, self.max_seq_len)?
        };
        let h = self.encoder.encode_on(tape, &seq)?;
        match self.variant {
            Variant::PlmOnly | Variant::S0 | Variant::S2 => Ok((h, h, None)),
            Variant::S1 => {
                let m = self.mean_concepts(tape, self.need_spec(spec, sample_index, candidate)?)?;
                Ok((h, tape.concat_cols(&[h, m])?, None))
            }
            Variant::S3 => {
                let hx = self.gnn_output(tape, h, self.need_spec(spec, sample_index, candidate)?)?;
                Ok((h, tape.concat_cols(&[h, hx])?, Some(hx)))
            }
            Variant::Sinlg => {
                let hx = if with_target {
                    Some(self.gnn_output(tape, h, self.need_spec(spec, sample_index, candidate)?)?)
                } else {
                    None
                };
                Ok((h, h, hx))
            }
        }
    }

    /// Probability that `candidate` is the true response. `spec` is needed
    /// by variants that consult knowledge at inference.
    pub fn predict_on(
        &self,
        tape: &mut Tape,
        sample: &MrsSample,
        sample_index: usize,
        candidate: usize,
        spec: Option<&SubgraphSpec>,
    ) -> Result<Var> {
        let (_, feats, _) = self.features(tape, sample, sample_index, candidate, spec, false)?;
        self.encoder.predict_on(tape, feats)
    }

    pub fn score_with(&self, sample: &MrsSample, sample_index: usize, candidate: usize, spec: Option<&SubgraphSpec>) -> Result<f64> {
        let mut tape = Tape::no_grad();
        let y = self.predict_on(&mut tape, sample, sample_index, candidate, spec)?;
        Ok(tape.scalar(y))
    }

    /// Knowledge-free score: only the encoder and head are consulted.
    pub fn score(&self, sample: &MrsSample, candidate: usize) -> Result<f64> {
        if self.variant.needs_knowledge_at_inference() {
            return Err(Error::Config(format!("variant {} needs knowledge at inference", self.variant)));
        }
        self.score_with(sample, 0, candidate, None)
    }

    /// Per-variant training loss for one labelled row.
    pub fn loss_on(
        &self,
        tape: &mut Tape,
        sample: &MrsSample,
        sample_index: usize,
        candidate: usize,
        spec: Option<&SubgraphSpec>,
    ) -> Result<Forward> {
        let label = *sample
            .labels
            .get(candidate)
            .ok_or_else(|| Error::Sample(format!("candidate {candidate} out of range")))?;
        let (h, feats, hx) = self.features(tape, sample, sample_index, candidate, spec, true)?;
        let y_hat = self.encoder.predict_on(tape, feats)?;
        let l_bce = bce_loss(tape, label, y_hat)?;
        let l_cos = match self.variant {
            Variant::Sinlg => {
                let mut target = hx.expect("sinlg target computed");
                if self.stop_grad_gnn_target {
                    let v = tape.value(target).to_vec();
                    target = tape.constant_matrix(1, v.len(), v)?;
                }
                Some(cosine_loss(tape, h, target, self.loss.epsilon)?)
            }
            Variant::S2 => {
                let m = self.mean_concepts(tape, self.need_spec(spec, sample_index, candidate)?)?;
                Some(cosine_loss(tape, h, m, self.loss.epsilon)?)
            }
            _ => None,
        };
        let loss = match l_cos {
            Some(c) => combined_loss(tape, &self.loss, l_bce, c)?,
            None => l_bce,
        };
        Ok(Forward {
            y_hat,
            h_prime: h,
            h_x: hx,
            l_bce,
            l_cos,
            loss,
        })
    }

    pub fn zero_grad(&mut self) {
        self.encoder.params_mut().zero_grad();
        if let Some(g) = &mut self.gnn {
            g.params_mut().zero_grad();
        }
    }

    pub fn accumulate(&mut self, tape: &Tape) -> Result<()> {
        self.encoder.params_mut().accumulate(tape)?;
        if let Some(g) = &mut self.gnn {
            g.params_mut().accumulate(tape)?;
        }
        Ok(())
    }
}

use std::sync::Arc;

use super::encoder::EncoderModel;
use super::vocab::TokenSequence;
use crate::error::{Error, Result};
use crate::kg::{ConceptId, KnowledgeGraph};
use crate::util::fingerprint_f64;

/// Frozen copy of the encoder taken before fine-tuning. It scores concepts
/// against dialogue text and provides the initial concept embeddings.
#[derive(Debug, Clone)]
pub struct ScorerSnapshot {
    model: Arc<EncoderModel>,
    fingerprint: u64,
}

impl ScorerSnapshot {
    pub fn capture(model: &EncoderModel) -> Self {
        let model = Arc::new(model.clone());
        let fingerprint = param_fingerprint(&model);
        ScorerSnapshot { model, fingerprint }
    }

    pub fn model(&self) -> &EncoderModel {
        &self.model
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    /// Hash of every parameter bit, taken at capture time.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Recomputes the parameter hash; equals [`Self::fingerprint`] as long
    /// as the snapshot is untouched.
    pub fn current_fingerprint(&self) -> u64 {
        param_fingerprint(&self.model)
    }

    pub fn encode(&self, seq: &TokenSequence) -> Result<Vec<f64>> {
        self.model.encode(seq)
    }

    /// CLS state of `[CLS] phrase [SEP]`.
    pub fn encode_concept(&self, phrase: &str) -> Result<Vec<f64>> {
        let normalized = crate::kg::normalize_phrase(phrase);
        self.model.encode(&self.model.phrase_sequence(&normalized))
    }
}

fn param_fingerprint(model: &EncoderModel) -> u64 {
    fingerprint_f64(model.params().iter().flat_map(|(_, t)| t.data().iter().copied()))
}

/// Snapshot embeddings of every concept in a graph, computed once.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptTable {
    dim: usize,
    rows: Vec<f64>,
}

impl ConceptTable {
    pub fn build(snapshot: &ScorerSnapshot, kg: &KnowledgeGraph) -> Result<Self> {
        let dim = snapshot.dim();
        let mut rows = Vec::with_capacity(kg.num_concepts() * dim);
        for (_, name) in kg.concepts() {
            rows.extend(snapshot.encode_concept(name)?);
        }
        Ok(ConceptTable { dim, rows })
    }

    /// Table from explicit rows, row `i` belonging to concept `i`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::shape("concept_table", format!("row of {} in table of dim {dim}", r.len())));
        }
        Ok(ConceptTable { dim, rows: rows.concat() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 { 0 } else { self.rows.len() / self.dim }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, c: ConceptId) -> Result<&[f64]> {
        let i = c.0 as usize;
        if i >= self.len() {
            return Err(Error::MissingEmbedding(i));
        }
        Ok(&self.rows[i * self.dim..(i + 1) * self.dim])
    }
}

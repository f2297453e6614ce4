//! Siamese training: the encoder is supervised by the ranking loss and,
//! through a cosine similarity term, pulled toward the GNN's reading of the
//! retrieved subgraph.

mod checkpoint;
mod losses;
mod model;
mod optim;
mod run;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extraction::ExtractionConfig;
use crate::gnn::GnnConfig;
use crate::text::EncoderConfig;

pub use checkpoint::Checkpoint;
pub use losses::{bce, bce_loss, combined_loss, cosine_loss, LossWeights, PROB_CLAMP};
pub use model::{Forward, SelectionModel};
pub use optim::{AdamState, AdamW};
pub use run::{build_vocab, train, train_with_log, DevMetrics, EpochLog, TrainData, TrainOutcome};

/// Training objective and prediction head layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Ranking loss on the encoder alone.
    #[serde(rename = "plm")]
    PlmOnly,
    /// Top concept phrases appended to the encoder input.
    S0,
    /// Head reads `h' ⊕ mean(concept embeddings)`.
    S1,
    /// Cosine term toward the mean concept embedding.
    S2,
    /// Head reads `h' ⊕ h_X`.
    S3,
    /// Head reads `h'`; cosine term toward `h_X`.
    Sinlg,
}

impl Variant {
    pub const ALL: [Variant; 6] = [Variant::PlmOnly, Variant::S0, Variant::S1, Variant::S2, Variant::S3, Variant::Sinlg];

    pub fn name(self) -> &'static str {
        match self {
            Variant::PlmOnly => "plm",
            Variant::S0 => "s0",
            Variant::S1 => "s1",
            Variant::S2 => "s2",
            Variant::S3 => "s3",
            Variant::Sinlg => "sinlg",
        }
    }

    /// Whether training rows need a retrieved subgraph.
    pub fn needs_subgraph(self) -> bool {
        self != Variant::PlmOnly
    }

    /// Whether scoring a candidate needs the knowledge graph.
    pub fn needs_knowledge_at_inference(self) -> bool {
        matches!(self, Variant::S0 | Variant::S1 | Variant::S3)
    }

    pub fn uses_gnn(self) -> bool {
        matches!(self, Variant::S3 | Variant::Sinlg)
    }

    pub fn uses_cosine(self) -> bool {
        matches!(self, Variant::S2 | Variant::Sinlg)
    }

    pub fn head_input_dim(self, dim: usize) -> usize {
        match self {
            Variant::S1 | Variant::S3 => 2 * dim,
            _ => dim,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?} (expected plm|s0|s1|s2|s3|sinlg)")))
    }
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Rows (sample, candidate pairs) per update.
    pub batch_size: usize,
    pub epochs: usize,
    /// Seeds parameter initialization and row shuffling; overrides the
    /// `init_seed` fields of the encoder and GNN configs.
    pub seed: u64,
    pub loss: LossWeights,
    pub extraction: ExtractionConfig,
    pub encoder: EncoderConfig,
    pub gnn: GnnConfig,
    /// Treat `h_X` as a constant in the cosine term: the encoder is pulled
    /// toward the graph representation but the GNN receives no gradient.
    pub stop_grad_gnn_target: bool,
    /// Concept phrases appended to the input by the S0 variant.
    pub s0_concepts: usize,
    /// Minimum token count for the vocabulary.
    pub min_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::Sinlg,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            batch_size: 64,
            epochs: 3,
            seed: 0,
            loss: LossWeights::default(),
            extraction: ExtractionConfig::default(),
            encoder: EncoderConfig::default(),
            gnn: GnnConfig::default(),
            stop_grad_gnn_target: false,
            s0_concepts: 10,
            min_count: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be finite and >= 0", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight_decay {} must be finite and >= 0", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.extraction.max_seq_len < 2 {
            return Err(Error::Config("max_seq_len must be at least 2".into()));
        }
        self.loss.validate()?;
        self.encoder.validate()?;
        self.gnn.validate()
    }

    /// Stable 64-bit hash of the serialized config, as 16 hex digits.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", crate::util::fnv1a(json.bytes()))
    }

    /// Encoder config with seed, head width and length limit applied.
    pub fn effective_encoder(&self) -> EncoderConfig {
        let mut e = self.encoder.clone();
        e.init_seed = self.seed;
        e.head_input_dim = self.variant.head_input_dim(e.dim);
        e.max_seq_len = self.extraction.max_seq_len;
        e
    }

    pub fn effective_gnn(&self) -> GnnConfig {
        let mut g = self.gnn.clone();
        g.init_seed = self.seed.wrapping_add(1);
        g
    }
}

#[cfg(test)]
mod tests;

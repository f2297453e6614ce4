use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::{GnnModel, GnnState};
use crate::text::{EncoderModel, EncoderState, ScorerSnapshot};

use super::optim::AdamState;
use super::{SelectionModel, TrainConfig};

/// Everything needed to resume training or to score candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub config_hash: String,
    pub encoder: EncoderState,
    pub gnn: Option<GnnState>,
    pub encoder_optimizer: AdamState,
    pub gnn_optimizer: Option<AdamState>,
    pub step: u64,
    /// Relation count of the graph the model was trained with, excluding
    /// the super relation.
    pub kg_relations: usize,
    /// Fingerprint of the frozen scorer (the encoder at initialization).
    pub snapshot_fingerprint: u64,
}

impl Checkpoint {
    pub fn capture(
        config: &TrainConfig,
        model: &SelectionModel,
        encoder_optimizer: &AdamState,
        gnn_optimizer: Option<&AdamState>,
        step: u64,
        kg_relations: usize,
        snapshot: &ScorerSnapshot,
    ) -> Self {
        Checkpoint {
            config: config.clone(),
            config_hash: config.hash(),
            encoder: model.encoder.to_state(),
            gnn: model.gnn.as_ref().map(GnnModel::to_state),
            encoder_optimizer: encoder_optimizer.clone(),
            gnn_optimizer: gnn_optimizer.cloned(),
            step,
            kg_relations,
            snapshot_fingerprint: snapshot.fingerprint(),
        }
    }

    pub fn model(&self) -> Result<SelectionModel> {
        if self.config.hash() != self.config_hash {
            return Err(Error::Checkpoint("config hash does not match stored config".into()));
        }
        let encoder = EncoderModel::from_state(self.encoder.clone())?;
        let gnn = self.gnn.clone().map(GnnModel::from_state).transpose()?;
        if gnn.is_some() != self.config.variant.uses_gnn() {
            return Err(Error::Checkpoint(format!("gnn presence does not fit variant {}", self.config.variant)));
        }
        Ok(SelectionModel {
            variant: self.config.variant,
            encoder,
            gnn,
            loss: self.config.loss,
            s0_concepts: self.config.s0_concepts,
            max_seq_len: self.config.extraction.max_seq_len,
            stop_grad_gnn_target: self.config.stop_grad_gnn_target,
        })
    }

    /// Rebuilds the frozen scorer from the config's initialization seed.
    pub fn snapshot(&self) -> Result<ScorerSnapshot> {
        let init = EncoderModel::new(self.config.effective_encoder(), self.encoder.vocab.clone())?;
        let snap = ScorerSnapshot::capture(&init);
        if snap.fingerprint() != self.snapshot_fingerprint {
            return Err(Error::Checkpoint("rebuilt scorer does not match the training scorer".into()));
        }
        Ok(snap)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

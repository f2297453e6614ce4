use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{self, MetricReport};
use crate::extraction::{KnowledgeBase, SubgraphSpec};
use crate::kg::{normalize_phrase, KnowledgeGraph};
use crate::numerics::Tape;
use crate::sample::MrsSample;
use crate::text::{split_tokens, ScorerSnapshot, Vocabulary};

use super::checkpoint::Checkpoint;
use super::optim::{AdamState, AdamW};
use super::{SelectionModel, TrainConfig};

pub type DevMetrics = MetricReport;

/// Inputs of a training run.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub train: &'a [MrsSample],
    pub dev: Option<&'a [MrsSample]>,
    pub kg: Option<&'a KnowledgeGraph>,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub step: u64,
    pub loss: f64,
    pub bce: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cos: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev: Option<DevMetrics>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub model: SelectionModel,
    pub snapshot: ScorerSnapshot,
    pub log: Vec<EpochLog>,
}

/// Vocabulary of the training texts plus every token of every concept label.
pub fn build_vocab(train: &[MrsSample], kg: Option<&KnowledgeGraph>, min_count: usize) -> Vocabulary {
    let texts = train.iter().flat_map(|s| s.persona.iter().chain(&s.context).chain(&s.candidates));
    let mut vocab = Vocabulary::build(texts.map(String::as_str), min_count);
    if let Some(kg) = kg {
        for (_, name) in kg.concepts() {
            for tok in split_tokens(&normalize_phrase(name)) {
                vocab.insert(&tok);
            }
        }
    }
    vocab
}

pub fn train(config: &TrainConfig, data: TrainData<'_>) -> Result<TrainOutcome> {
    train_with_log(config, data, |_| Ok(()))
}

/// Trains and calls `on_epoch` after every epoch.
pub fn train_with_log(
    config: &TrainConfig,
    data: TrainData<'_>,
    mut on_epoch: impl FnMut(&EpochLog) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    for (i, s) in data.train.iter().enumerate() {
        s.validate(false).map_err(|e| Error::Sample(format!("train sample {i}: {e}")))?;
    }
    let variant = config.variant;
    let kg = data.kg;
    if variant.needs_subgraph() && kg.is_none() {
        return Err(Error::Config(format!("variant {variant} needs a knowledge graph")));
    }
    let vocab = build_vocab(data.train, kg, config.min_count);
    let kg_relations = kg.map_or(0, KnowledgeGraph::num_relations);
    let mut model = SelectionModel::new(config, vocab, kg_relations)?;
    let snapshot = ScorerSnapshot::capture(&model.encoder);

    let kb = match kg {
        Some(kg) if variant.needs_subgraph() => Some(KnowledgeBase::new(kg.clone(), &snapshot)?),
        _ => None,
    };
    let train_specs: Option<Vec<Vec<SubgraphSpec>>> = match &kb {
        Some(kb) => Some(kb.extract_all(&snapshot, data.train, &config.extraction)?),
        None => None,
    };
    let dev_specs = match (&kb, data.dev) {
        (Some(kb), Some(dev)) if variant.needs_knowledge_at_inference() => Some(kb.extract_all(&snapshot, dev, &config.extraction)?),
        _ => None,
    };

    let opt = AdamW::new(config.learning_rate, config.weight_decay);
    let mut enc_state = AdamState::for_store(model.encoder.params());
    let mut gnn_state = model.gnn.as_ref().map(|g| AdamState::for_store(g.params()));
    let mut rows: Vec<(usize, usize)> = data
        .train
        .iter()
        .enumerate()
        .flat_map(|(s, sample)| (0..sample.len()).map(move |c| (s, c)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut step = 0u64;
    let mut log = Vec::new();

    for epoch in 1..=config.epochs {
        rows.shuffle(&mut rng);
        let (mut loss_sum, mut bce_sum, mut cos_sum) = (0.0, 0.0, 0.0);
        for batch in rows.chunks(config.batch_size) {
            model.zero_grad();
            let scale = 1.0 / batch.len() as f64;
            for &(s, c) in batch {
                let spec = train_specs.as_ref().map(|all| &all[s][c]);
                let mut tape = Tape::new();
                let f = model.loss_on(&mut tape, &data.train[s], s, c, spec)?;
                loss_sum += tape.scalar(f.loss);
                bce_sum += tape.scalar(f.l_bce);
                cos_sum += f.l_cos.map_or(0.0, |v| tape.scalar(v));
                let scaled = tape.scale(f.loss, scale)?;
                tape.backward(scaled)?;
                model.accumulate(&tape)?;
            }
            opt.step(model.encoder.params_mut(), &mut enc_state)?;
            if let (Some(g), Some(st)) = (&mut model.gnn, &mut gnn_state) {
                opt.step(g.params_mut(), st)?;
            }
            step += 1;
        }
        let n = rows.len().max(1) as f64;
        let dev = match data.dev {
            Some(dev) => Some(match &dev_specs {
                Some(specs) => evaluation::evaluate_with_specs(&model, dev, specs)?.1,
                None => evaluation::evaluate(&model, dev)?.1,
            }),
            None => None,
        };
        let entry = EpochLog {
            epoch,
            step,
            loss: loss_sum / n,
            bce: bce_sum / n,
            cos: variant.uses_cosine().then_some(cos_sum / n),
            dev,
        };
        log::info!(
            "{variant} epoch {epoch}: loss {:.4} bce {:.4}{}",
            entry.loss,
            entry.bce,
            entry.dev.as_ref().map(|d| format!(" dev R@1 {:.3}", d.r_at_1)).unwrap_or_default()
        );
        on_epoch(&entry)?;
        log.push(entry);
    }
    model.zero_grad();
    let checkpoint = Checkpoint::capture(config, &model, &enc_state, gnn_state.as_ref(), step, kg_relations, &snapshot);
    Ok(TrainOutcome {
        checkpoint,
        model,
        snapshot,
        log,
    })
}

//! Synthetic persona dialogues whose true responses are recognizable only
//! through the knowledge graph some of the time.
//!
//! Concepts come in paraphrase pairs `(a, a')` joined by a `Paraphrase` edge
//! and sharing a hub neighbor. A persona mentions a few concepts; the true
//! response mentions one of them either with the same word (lexical) or
//! with its partner (paraphrase). Pairs are split into two groups: in
//! training, paraphrase positives only use the first group, while in the dev
//! split they only use the held-out group.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{dataset_to_jsonl, write_text};
use crate::error::{Error, Result};
use crate::sample::MrsSample;

pub const PARAPHRASE: &str = "Paraphrase";
const OTHER_RELATIONS: [&str; 7] = ["RelatedTo", "IsA", "AtLocation", "UsedFor", "PartOf", "HasA", "CapableOf"];
const PERSONA_TEMPLATES: [&str; 4] = ["i like {}", "my hobby is {}", "i care about {}", "i often think of {}"];
const RESPONSE_TEMPLATES: [&str; 4] = ["i really enjoy {}", "have you tried {}", "{} is my favorite", "we talked about {} yesterday"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    /// Training dialogues.
    pub n_dialogues: usize,
    pub n_dev_dialogues: usize,
    pub turns_min: usize,
    pub turns_max: usize,
    /// Response-selection samples cut from the last turns of each dialogue.
    pub samples_per_dialogue: usize,
    /// Concept pairs; the graph has `2 * pairs + hubs` concepts.
    pub n_paraphrase_pairs: usize,
    pub n_hubs: usize,
    /// Relation count including `Paraphrase`.
    pub n_relations: usize,
    pub noise_edges: usize,
    /// Size of the small-talk vocabulary.
    pub filler_words: usize,
    pub words_per_turn: usize,
    pub persona_size: usize,
    pub candidates: usize,
    /// Share of training positives that use the partner word.
    pub paraphrase_fraction: f64,
    pub dev_paraphrase_fraction: f64,
    /// Share of pairs whose paraphrase positives appear only in dev.
    pub held_out_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            n_dialogues: 300,
            n_dev_dialogues: 60,
            turns_min: 6,
            turns_max: 8,
            samples_per_dialogue: 1,
            n_paraphrase_pairs: 40,
            n_hubs: 10,
            n_relations: 4,
            noise_edges: 30,
            filler_words: 40,
            words_per_turn: 3,
            persona_size: 3,
            candidates: 20,
            paraphrase_fraction: 0.5,
            dev_paraphrase_fraction: 0.6,
            held_out_fraction: 0.5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.n_dialogues == 0 || self.n_dev_dialogues == 0 {
            return bad("dialogue counts must be positive");
        }
        if self.turns_min == 0 || self.turns_min > self.turns_max {
            return bad("need 0 < turns_min <= turns_max");
        }
        if self.samples_per_dialogue == 0 || self.samples_per_dialogue > self.turns_min {
            return bad("samples_per_dialogue must be in 1..=turns_min");
        }
        if self.persona_size == 0 || self.candidates < 2 || self.words_per_turn == 0 || self.filler_words == 0 {
            return bad("persona_size, words_per_turn, filler_words must be positive and candidates >= 2");
        }
        if self.n_paraphrase_pairs < self.persona_size + 1 {
            return bad("fewer concept pairs than a persona plus one distractor needs");
        }
        if self.n_relations == 0 || self.n_relations > OTHER_RELATIONS.len() + 1 {
            return bad("n_relations must be in 1..=8");
        }
        if self.n_relations == 1 && (self.n_hubs > 0 || self.noise_edges > 0) {
            return bad("hub and noise edges need a relation besides Paraphrase");
        }
        for f in [self.paraphrase_fraction, self.dev_paraphrase_fraction, self.held_out_fraction] {
            if !(0.0..=1.0).contains(&f) {
                return bad("fractions must lie in [0, 1]");
            }
        }
        let held = self.held_out_count();
        if self.paraphrase_fraction > 0.0 && held == self.n_paraphrase_pairs {
            return bad("no pairs left for training paraphrases");
        }
        if self.dev_paraphrase_fraction > 0.0 && held == 0 {
            return bad("no held-out pairs for dev paraphrases");
        }
        Ok(())
    }

    fn held_out_count(&self) -> usize {
        (self.held_out_fraction * self.n_paraphrase_pairs as f64).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositiveKind {
    Lexical,
    Paraphrase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthStats {
    pub train_samples: usize,
    pub dev_samples: usize,
    pub concepts: usize,
    pub edges: usize,
    pub train_kinds: Vec<PositiveKind>,
    pub dev_kinds: Vec<PositiveKind>,
    /// Pairs whose paraphrase positives are reserved for dev.
    pub held_out_pairs: Vec<(String, String)>,
}

impl SynthStats {
    pub fn paraphrase_share(kinds: &[PositiveKind]) -> f64 {
        if kinds.is_empty() {
            return 0.0;
        }
        kinds.iter().filter(|&&k| k == PositiveKind::Paraphrase).count() as f64 / kinds.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub train: Vec<MrsSample>,
    pub dev: Vec<MrsSample>,
    pub kg_tsv: String,
    pub stats: SynthStats,
}

impl SynthCorpus {
    /// Writes `train.jsonl`, `dev.jsonl`, `kg.tsv` and `synth_stats.json`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        write_text(dir.join("train.jsonl"), &dataset_to_jsonl(&self.train))?;
        write_text(dir.join("dev.jsonl"), &dataset_to_jsonl(&self.dev))?;
        write_text(dir.join("kg.tsv"), &self.kg_tsv)?;
        write_text(dir.join("synth_stats.json"), &serde_json::to_string_pretty(&self.stats)?)
    }
}

/// Pronounceable words that are unique across one generation run.
struct WordMaker {
    seen: HashSet<String>,
}

impl WordMaker {
    fn make(&mut self, rng: &mut ChaCha8Rng, syllables: usize) -> String {
        const C: &[u8] = b"bdfgklmnprstvz";
        const V: &[u8] = b"aeiou";
        loop {
            let mut w = String::new();
            for _ in 0..syllables {
                w.push(C[rng.gen_range(0..C.len())] as char);
                w.push(V[rng.gen_range(0..V.len())] as char);
            }
            if self.seen.insert(w.clone()) {
                return w;
            }
        }
    }
}

struct Positive {
    text: String,
    pair: usize,
    dialogue: usize,
}

struct Dialogue {
    persona: Vec<String>,
    persona_pairs: BTreeSet<usize>,
    turns: Vec<String>,
    /// (turn index, kind) of each response turn.
    responses: Vec<(usize, PositiveKind)>,
}

fn fill(template: &str, word: &str) -> String {
    template.replace("{}", word)
}

fn small_talk(rng: &mut ChaCha8Rng, filler: &[String], n: usize) -> String {
    (0..n).map(|_| filler[rng.gen_range(0..filler.len())].as_str()).collect::<Vec<_>>().join(" ")
}

struct Generator<'a> {
    cfg: &'a SynthConfig,
    pairs: Vec<[String; 2]>,
    filler: Vec<String>,
    train_pairs: Vec<usize>,
    held_out: Vec<usize>,
}

impl Generator<'_> {
    fn dialogue(&self, rng: &mut ChaCha8Rng, dev: bool, positives: &mut Vec<Positive>, index: usize) -> Dialogue {
        let cfg = self.cfg;
        let turns = rng.gen_range(cfg.turns_min..=cfg.turns_max);
        let mut persona_pairs = BTreeSet::new();
        let mut targets = Vec::new();
        let share = if dev { cfg.dev_paraphrase_fraction } else { cfg.paraphrase_fraction };
        for _ in 0..cfg.samples_per_dialogue {
            let kind = if rng.gen_bool(share) { PositiveKind::Paraphrase } else { PositiveKind::Lexical };
            let pool: &[usize] = match (kind, dev) {
                (PositiveKind::Paraphrase, true) => &self.held_out,
                (PositiveKind::Paraphrase, false) => &self.train_pairs,
                (PositiveKind::Lexical, _) => &[],
            };
            let pair = if pool.is_empty() {
                rng.gen_range(0..self.pairs.len())
            } else {
                pool[rng.gen_range(0..pool.len())]
            };
            persona_pairs.insert(pair);
            targets.push((pair, kind));
        }
        while persona_pairs.len() < cfg.persona_size.max(targets.len()) {
            persona_pairs.insert(rng.gen_range(0..self.pairs.len()));
        }
        let mut order: Vec<usize> = persona_pairs.iter().copied().collect();
        order.shuffle(rng);
        let forms: Vec<(usize, usize)> = order.iter().map(|&p| (p, rng.gen_range(0..2))).collect();
        let persona = forms
            .iter()
            .map(|&(p, f)| fill(PERSONA_TEMPLATES[rng.gen_range(0..PERSONA_TEMPLATES.len())], &self.pairs[p][f]))
            .collect();

        let mut turn_text: Vec<String> = (0..turns).map(|_| small_talk(rng, &self.filler, cfg.words_per_turn)).collect();
        let mut responses = Vec::new();
        for (k, &(pair, kind)) in targets.iter().enumerate() {
            let t = turns - targets.len() + k;
            let form = forms.iter().find(|f| f.0 == pair).expect("target in persona").1;
            let word = match kind {
                PositiveKind::Lexical => &self.pairs[pair][form],
                PositiveKind::Paraphrase => &self.pairs[pair][1 - form],
            };
            let text = fill(RESPONSE_TEMPLATES[rng.gen_range(0..RESPONSE_TEMPLATES.len())], word);
            turn_text[t] = text.clone();
            positives.push(Positive { text, pair, dialogue: index });
            responses.push((t, kind));
        }
        Dialogue {
            persona,
            persona_pairs,
            turns: turn_text,
            responses,
        }
    }

    fn split(&self, rng: &mut ChaCha8Rng, n: usize, dev: bool) -> Result<(Vec<MrsSample>, Vec<PositiveKind>)> {
        let mut positives = Vec::new();
        let dialogues: Vec<Dialogue> = (0..n).map(|i| self.dialogue(rng, dev, &mut positives, i)).collect();
        let mut samples = Vec::new();
        let mut kinds = Vec::new();
        let mut next_positive = 0;
        for (di, d) in dialogues.iter().enumerate() {
            for &(t, kind) in &d.responses {
                let truth = &positives[next_positive];
                next_positive += 1;
                let eligible: Vec<&Positive> = positives
                    .iter()
                    .filter(|p| p.dialogue != di && !d.persona_pairs.contains(&p.pair))
                    .collect();
                if eligible.len() < self.cfg.candidates - 1 {
                    return Err(Error::Config(format!(
                        "synth: only {} distractors available, need {}",
                        eligible.len(),
                        self.cfg.candidates - 1
                    )));
                }
                let mut candidates: Vec<String> = eligible
                    .choose_multiple(rng, self.cfg.candidates - 1)
                    .map(|p| p.text.clone())
                    .collect();
                let at = rng.gen_range(0..self.cfg.candidates);
                candidates.insert(at, truth.text.clone());
                let mut labels = vec![0u8; self.cfg.candidates];
                labels[at] = 1;
                samples.push(MrsSample {
                    persona: d.persona.clone(),
                    context: d.turns[..t].to_vec(),
                    candidates,
                    labels,
                });
                kinds.push(kind);
            }
        }
        Ok((samples, kinds))
    }
}

/// Deterministic corpus for `config`.
pub fn synth_generate(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut words = WordMaker { seen: HashSet::new() };
    let pairs: Vec<[String; 2]> = (0..config.n_paraphrase_pairs)
        .map(|_| [words.make(&mut rng, 3), words.make(&mut rng, 3)])
        .collect();
    let hubs: Vec<String> = (0..config.n_hubs).map(|_| words.make(&mut rng, 3)).collect();
    let filler: Vec<String> = (0..config.filler_words).map(|_| words.make(&mut rng, 2)).collect();

    let relations: Vec<&str> = OTHER_RELATIONS[..config.n_relations - 1].to_vec();
    let mut edges: Vec<(String, String, String)> = Vec::new();
    for [a, b] in &pairs {
        edges.push((PARAPHRASE.to_string(), a.clone(), b.clone()));
    }
    if !hubs.is_empty() {
        for [a, b] in &pairs {
            let hub = &hubs[rng.gen_range(0..hubs.len())];
            let rel = relations[rng.gen_range(0..relations.len())];
            edges.push((rel.to_string(), a.clone(), hub.clone()));
            edges.push((rel.to_string(), b.clone(), hub.clone()));
        }
    }
    let all: Vec<&String> = pairs.iter().flatten().chain(&hubs).collect();
    for _ in 0..config.noise_edges {
        let h = all[rng.gen_range(0..all.len())];
        let t = all[rng.gen_range(0..all.len())];
        if h != t {
            let rel = relations[rng.gen_range(0..relations.len())];
            edges.push((rel.to_string(), h.clone(), t.clone()));
        }
    }
    let kg_tsv: String = edges.iter().map(|(r, h, t)| format!("{r}\t{h}\t{t}\n")).collect();

    let mut ids: Vec<usize> = (0..pairs.len()).collect();
    ids.shuffle(&mut rng);
    let held = config.held_out_count();
    let mut held_out = ids[..held].to_vec();
    let mut train_pairs = ids[held..].to_vec();
    held_out.sort_unstable();
    train_pairs.sort_unstable();

    let g = Generator {
        cfg: config,
        pairs: pairs.clone(),
        filler,
        train_pairs,
        held_out: held_out.clone(),
    };
    let (train, train_kinds) = g.split(&mut rng, config.n_dialogues, false)?;
    let (dev, dev_kinds) = g.split(&mut rng, config.n_dev_dialogues, true)?;
    let stats = SynthStats {
        train_samples: train.len(),
        dev_samples: dev.len(),
        concepts: all.len(),
        edges: edges.len(),
        train_kinds,
        dev_kinds,
        held_out_pairs: held_out.iter().map(|&p| (pairs[p][0].clone(), pairs[p][1].clone())).collect(),
    };
    Ok(SynthCorpus {
        train,
        dev,
        kg_tsv,
        stats,
    })
}

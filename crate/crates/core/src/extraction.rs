//! Per (sample, candidate) subgraph retrieval: link entities in the text,
//! expand their neighborhood, score every concept against the dialogue with
//! the frozen scorer, keep the best ones and attach a super node.

use std::cell::Cell;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{ConceptId, ConceptLexicon, Edge, KnowledgeGraph, RelationId};
use crate::numerics::kernels::dot;
use crate::sample::MrsSample;
use crate::text::{split_tokens, trans_a, ConceptTable, ScorerSnapshot};

/// Number of knowledge-graph touching operations performed on this thread.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AccessCounts {
    pub linking: u64,
    pub expansion: u64,
    pub scoring: u64,
}

impl AccessCounts {
    pub fn total(&self) -> u64 {
        self.linking + self.expansion + self.scoring
    }
}

thread_local! {
    static ACCESS: Cell<AccessCounts> = const { Cell::new(AccessCounts { linking: 0, expansion: 0, scoring: 0 }) };
}

/// Knowledge accesses recorded on the calling thread so far.
pub fn access_counts() -> AccessCounts {
    ACCESS.with(Cell::get)
}

fn bump(f: impl FnOnce(&mut AccessCounts)) {
    ACCESS.with(|c| {
        let mut v = c.get();
        f(&mut v);
        c.set(v);
    });
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Linked,
    Expanded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredConcept {
    pub concept: ConceptId,
    pub origin: Origin,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuperEdge {
    pub concept: ConceptId,
    pub weight: f64,
}

/// Retrieved subgraph plus the super node standing for the dialogue.
///
/// Node 0 is the super node; node `i + 1` is `concepts[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgraphSpec {
    pub sample: usize,
    pub candidate: usize,
    pub concepts: Vec<ScoredConcept>,
    pub concept_names: Vec<String>,
    pub kg_edges: Vec<Edge>,
    pub super_edges: Vec<SuperEdge>,
    /// Reserved relation id shared by all super edges; one past the graph's
    /// own relations.
    pub super_relation: RelationId,
    /// Scorer encoding of the dialogue; training replaces it with the live
    /// encoder output.
    pub super_init: Vec<f64>,
    pub concept_embeddings: Vec<Vec<f64>>,
    pub pruned_linked: usize,
    pub pruned_expanded: usize,
}

impl SubgraphSpec {
    pub fn node_count(&self) -> usize {
        self.concepts.len() + 1
    }

    pub fn num_linked(&self) -> usize {
        self.concepts.iter().filter(|c| c.origin == Origin::Linked).count()
    }

    pub fn local_index(&self, c: ConceptId) -> Option<usize> {
        self.concepts.iter().position(|s| s.concept == c).map(|i| i + 1)
    }

    /// Checks the structural contract.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Sample(format!("subgraph {}/{}: {m}", self.sample, self.candidate)));
        if self.super_edges.len() != self.concepts.len() {
            return bad("super edge count differs from concept count".into());
        }
        for (e, c) in self.super_edges.iter().zip(&self.concepts) {
            if e.concept != c.concept || e.weight.to_bits() != c.score.to_bits() {
                return bad(format!("super edge for {:?} does not carry its score", c.concept));
            }
        }
        for e in &self.kg_edges {
            if self.local_index(e.head).is_none() || self.local_index(e.tail).is_none() {
                return bad("edge endpoint outside kept concepts".into());
            }
        }
        if self.concept_embeddings.len() != self.concepts.len() || self.concept_names.len() != self.concepts.len() {
            return bad("per-concept arrays differ in length".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionConfig {
    pub hops: usize,
    pub max_nodes: usize,
    pub max_seq_len: usize,
    /// Keep linked concepts ahead of expanded ones when pruning.
    pub protect_linked: bool,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            hops: 2,
            max_nodes: 200,
            max_seq_len: 512,
            protect_linked: true,
        }
    }
}

/// Greedy left-to-right longest match of lexicon phrases over `tokens`.
/// Returns `(start, length, concept)` for each non-overlapping match.
pub fn link_tokens(tokens: &[String], lexicon: &ConceptLexicon) -> Vec<(usize, usize, ConceptId)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let longest = lexicon.max_tokens().min(tokens.len() - i);
        let hit = (1..=longest).rev().find_map(|n| lexicon.lookup(&tokens[i..i + n]).map(|c| (n, c)));
        match hit {
            Some((n, c)) => {
                out.push((i, n, c));
                i += n;
            }
            None => i += 1,
        }
    }
    out
}

/// Concepts mentioned in the persona, context and one candidate. Each
/// utterance is scanned separately so matches never span two turns.
pub fn link_entities(sample: &MrsSample, candidate: usize, lexicon: &ConceptLexicon) -> Result<BTreeSet<ConceptId>> {
    let response = sample
        .candidates
        .get(candidate)
        .ok_or_else(|| Error::Sample(format!("candidate {candidate} out of range")))?;
    bump(|c| c.linking += 1);
    let mut found = BTreeSet::new();
    for u in sample.persona.iter().chain(&sample.context).chain(std::iter::once(response)) {
        found.extend(link_tokens(&split_tokens(u), lexicon).into_iter().map(|(_, _, c)| c));
    }
    Ok(found)
}

/// Dot-product relevance of each candidate concept to the dialogue encoding.
pub fn score_concepts(h_ctx: &[f64], candidates: &[(ConceptId, Origin)], table: &ConceptTable) -> Result<Vec<ScoredConcept>> {
    if h_ctx.len() != table.dim() {
        return Err(Error::shape("score_concepts", format!("context {} vs table {}", h_ctx.len(), table.dim())));
    }
    bump(|c| c.scoring += 1);
    candidates
        .iter()
        .map(|&(concept, origin)| {
            Ok(ScoredConcept {
                concept,
                origin,
                score: dot(h_ctx, table.get(concept)?),
            })
        })
        .collect()
}

fn by_score_then_id(a: &ScoredConcept, b: &ScoredConcept) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.concept.cmp(&b.concept))
}

/// Highest scores first, ties by ascending concept id; at most `k` kept.
pub fn rank_and_prune(mut scored: Vec<ScoredConcept>, k: usize) -> Vec<ScoredConcept> {
    scored.sort_by(by_score_then_id);
    scored.truncate(k);
    scored
}

/// Pruning used by subgraph construction: with `protect_linked`, linked
/// concepts take slots before any expanded concept; the result is ordered by
/// [`rank_and_prune`]'s rule either way.
pub fn select_concepts(scored: Vec<ScoredConcept>, k: usize, protect_linked: bool) -> (Vec<ScoredConcept>, usize, usize) {
    let (n_linked, n_expanded) = count_origins(&scored);
    let kept = if protect_linked {
        let (linked, expanded): (Vec<_>, Vec<_>) = scored.into_iter().partition(|c| c.origin == Origin::Linked);
        let mut kept = rank_and_prune(linked, k);
        let room = k - kept.len();
        kept.extend(rank_and_prune(expanded, room));
        kept.sort_by(by_score_then_id);
        kept
    } else {
        rank_and_prune(scored, k)
    };
    let (kl, ke) = count_origins(&kept);
    (kept, n_linked - kl, n_expanded - ke)
}

fn count_origins(s: &[ScoredConcept]) -> (usize, usize) {
    let linked = s.iter().filter(|c| c.origin == Origin::Linked).count();
    (linked, s.len() - linked)
}

/// Graph, lexicon and precomputed concept embeddings, shared read-only by
/// every extraction.
#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    pub kg: KnowledgeGraph,
    pub lexicon: ConceptLexicon,
    pub table: ConceptTable,
}

impl KnowledgeBase {
    pub fn new(kg: KnowledgeGraph, snapshot: &ScorerSnapshot) -> Result<Self> {
        let table = ConceptTable::build(snapshot, &kg)?;
        Ok(Self::with_table(kg, table))
    }

    pub fn with_table(kg: KnowledgeGraph, table: ConceptTable) -> Self {
        let lexicon = ConceptLexicon::build(&kg);
        KnowledgeBase { kg, lexicon, table }
    }

    pub fn super_relation(&self) -> RelationId {
        RelationId(self.kg.num_relations() as u32)
    }

    /// Full pipeline for one (sample, candidate) pair: the dialogue is
    /// flattened and encoded by the frozen scorer, then handed to
    /// [`Self::build_from_context`].
    pub fn build_subgraph(
        &self,
        snapshot: &ScorerSnapshot,
        sample: &MrsSample,
        sample_index: usize,
        candidate: usize,
        config: &ExtractionConfig,
    ) -> Result<SubgraphSpec> {
        let model = snapshot.model();
        let max_len = config.max_seq_len.min(model.config().max_seq_len);
        let (seq, _) = trans_a(model.vocab(), sample, candidate, max_len)?;
        let h_ctx = snapshot.encode(&seq)?;
        self.build_from_context(sample, sample_index, candidate, &h_ctx, config)
    }

    /// Linking, expansion, scoring against `h_ctx`, pruning and edge
    /// induction.
    pub fn build_from_context(
        &self,
        sample: &MrsSample,
        sample_index: usize,
        candidate: usize,
        h_ctx: &[f64],
        config: &ExtractionConfig,
    ) -> Result<SubgraphSpec> {
        let linked = link_entities(sample, candidate, &self.lexicon)?;
        bump(|c| c.expansion += 1);
        let reach = self.kg.k_hop_neighbors(&linked, config.hops)?;
        let pool: Vec<(ConceptId, Origin)> = reach
            .iter()
            .map(|&c| (c, if linked.contains(&c) { Origin::Linked } else { Origin::Expanded }))
            .collect();
        let scored = score_concepts(h_ctx, &pool, &self.table)?;
        let (concepts, pruned_linked, pruned_expanded) = select_concepts(scored, config.max_nodes, config.protect_linked);
        if pruned_linked > 0 {
            log::debug!("sample {sample_index} candidate {candidate}: {pruned_linked} linked concepts pruned");
        }
        let kept: BTreeSet<ConceptId> = concepts.iter().map(|c| c.concept).collect();
        let kg_edges = self.kg.induced_edges(&kept);
        let super_edges = concepts
            .iter()
            .map(|c| SuperEdge {
                concept: c.concept,
                weight: c.score,
            })
            .collect();
        let concept_names = concepts
            .iter()
            .map(|c| self.kg.concept_name(c.concept).unwrap_or_default().to_string())
            .collect();
        let concept_embeddings = concepts
            .iter()
            .map(|c| self.table.get(c.concept).map(<[f64]>::to_vec))
            .collect::<Result<Vec<_>>>()?;
        Ok(SubgraphSpec {
            sample: sample_index,
            candidate,
            concepts,
            concept_names,
            kg_edges,
            super_edges,
            super_relation: self.super_relation(),
            super_init: h_ctx.to_vec(),
            concept_embeddings,
            pruned_linked,
            pruned_expanded,
        })
    }

    /// Subgraphs for every candidate of every sample, in order.
    pub fn extract_all(
        &self,
        snapshot: &ScorerSnapshot,
        samples: &[MrsSample],
        config: &ExtractionConfig,
    ) -> Result<Vec<Vec<SubgraphSpec>>> {
        samples
            .iter()
            .enumerate()
            .map(|(si, s)| (0..s.candidates.len()).map(|k| self.build_subgraph(snapshot, s, si, k, config)).collect())
            .collect()
    }
}

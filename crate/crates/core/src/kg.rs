//! Multi-relational concept graph loaded from a TSV edge list.
//!
//! Line format: `relation<TAB>head<TAB>tail[<TAB>weight]`, weight defaulting
//! to 1.0. Edges keep their file direction; neighborhood queries ignore it.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::split_tokens;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConceptId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationId(pub u32);

/// Bijective string <-> dense id table.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Interner {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Interner {
    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub head: ConceptId,
    pub relation: RelationId,
    pub tail: ConceptId,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub nodes: usize,
    pub edges: usize,
    pub relations: usize,
    pub duplicates: usize,
}

#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    concepts: Interner,
    relations: Interner,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<usize>>,
}

impl KnowledgeGraph {
    pub fn load_edge_list(path: impl AsRef<Path>) -> Result<(Self, LoadReport)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_edge_list(&text, path)
    }

    /// Parses edge-list text; `source` only labels error messages.
    pub fn parse_edge_list(text: &str, source: impl AsRef<Path>) -> Result<(Self, LoadReport)> {
        let mut kg = KnowledgeGraph::default();
        let mut seen: HashSet<(u32, u32, u32)> = HashSet::new();
        let mut duplicates = 0;
        for (lineno, line) in text.lines().enumerate() {
            let err = |msg: String| Error::Parse {
                path: source.as_ref().to_path_buf(),
                line: lineno + 1,
                msg,
            };
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if !(3..=4).contains(&fields.len()) {
                return Err(err(format!("expected 3 or 4 tab-separated fields, found {}", fields.len())));
            }
            let (rel, head, tail) = (fields[0].trim(), fields[1].trim(), fields[2].trim());
            if rel.is_empty() || head.is_empty() || tail.is_empty() {
                return Err(err("empty relation or concept field".into()));
            }
            let weight = match fields.get(3) {
                Some(w) => w.trim().parse::<f64>().map_err(|e| err(format!("bad weight {w:?}: {e}")))?,
                None => 1.0,
            };
            if !weight.is_finite() || weight < 0.0 {
                return Err(err(format!("weight {weight} must be finite and non-negative")));
            }
            let h = kg.concepts.intern(head);
            let t = kg.concepts.intern(tail);
            let r = kg.relations.intern(rel);
            if !seen.insert((h, r, t)) {
                duplicates += 1;
                continue;
            }
            kg.edges.push(Edge {
                head: ConceptId(h),
                relation: RelationId(r),
                tail: ConceptId(t),
                weight,
            });
        }
        kg.adjacency = build_adjacency(kg.concepts.len(), &kg.edges);
        let report = LoadReport {
            nodes: kg.concepts.len(),
            edges: kg.edges.len(),
            relations: kg.relations.len(),
            duplicates,
        };
        Ok((kg, report))
    }

    /// Writes the graph back out in edge-list form.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for e in &self.edges {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                self.relation_name(e.relation).unwrap_or_default(),
                self.concept_name(e.head).unwrap_or_default(),
                self.concept_name(e.tail).unwrap_or_default(),
                e.weight
            ));
        }
        out
    }

    pub fn num_concepts(&self) -> usize {
        self.concepts.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn concept_id(&self, name: &str) -> Option<ConceptId> {
        self.concepts.get(name).map(ConceptId)
    }

    pub fn concept_name(&self, id: ConceptId) -> Option<&str> {
        self.concepts.name(id.0)
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relations.get(name).map(RelationId)
    }

    pub fn relation_name(&self, id: RelationId) -> Option<&str> {
        self.relations.name(id.0)
    }

    pub fn concepts(&self) -> impl Iterator<Item = (ConceptId, &str)> {
        (0..self.concepts.len() as u32).map(|i| (ConceptId(i), self.concepts.name(i).unwrap_or_default()))
    }

    /// Indices into [`Self::edges`] touching `c` in either direction.
    pub fn incident(&self, c: ConceptId) -> &[usize] {
        self.adjacency.get(c.0 as usize).map_or(&[], Vec::as_slice)
    }

    pub fn adjacency(&self) -> &[Vec<usize>] {
        &self.adjacency
    }

    fn check(&self, c: ConceptId) -> Result<()> {
        if (c.0 as usize) < self.concepts.len() {
            Ok(())
        } else {
            Err(Error::UnknownConcept(c.0 as usize))
        }
    }

    /// Concepts within `k` undirected hops of any seed, seeds included.
    pub fn k_hop_neighbors(&self, seeds: &BTreeSet<ConceptId>, k: usize) -> Result<BTreeSet<ConceptId>> {
        for &s in seeds {
            self.check(s)?;
        }
        let mut dist: HashMap<ConceptId, usize> = seeds.iter().map(|&s| (s, 0)).collect();
        let mut queue: VecDeque<ConceptId> = seeds.iter().copied().collect();
        while let Some(c) = queue.pop_front() {
            let d = dist[&c];
            if d == k {
                continue;
            }
            for &ei in self.incident(c) {
                let e = &self.edges[ei];
                let other = if e.head == c { e.tail } else { e.head };
                if !dist.contains_key(&other) {
                    dist.insert(other, d + 1);
                    queue.push_back(other);
                }
            }
        }
        Ok(dist.into_keys().collect())
    }

    /// Edges whose endpoints are both in `nodes`, in edge-list order.
    pub fn induced_edges(&self, nodes: &BTreeSet<ConceptId>) -> Vec<Edge> {
        let mut idx: Vec<usize> = nodes
            .iter()
            .flat_map(|&c| self.incident(c).iter().copied())
            .filter(|&ei| {
                let e = &self.edges[ei];
                nodes.contains(&e.head) && nodes.contains(&e.tail)
            })
            .collect();
        idx.sort_unstable();
        idx.dedup();
        idx.into_iter().map(|i| self.edges[i]).collect()
    }
}

fn build_adjacency(n: usize, edges: &[Edge]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for (i, e) in edges.iter().enumerate() {
        adj[e.head.0 as usize].push(i);
        if e.tail != e.head {
            adj[e.tail.0 as usize].push(i);
        }
    }
    adj
}

/// Lowercase; underscores and hyphens become spaces; whitespace collapsed.
pub fn normalize_phrase(s: &str) -> String {
    s.to_lowercase()
        .replace(['_', '-'], " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Normalized concept phrase (as a token sequence) -> concept.
#[derive(Debug, Clone, Default)]
pub struct ConceptLexicon {
    phrases: HashMap<Vec<String>, ConceptId>,
    max_tokens: usize,
}

impl ConceptLexicon {
    /// When two labels normalize to the same phrase the lower id wins.
    pub fn build(kg: &KnowledgeGraph) -> Self {
        let mut lex = ConceptLexicon::default();
        for (id, name) in kg.concepts() {
            let toks = split_tokens(&normalize_phrase(name));
            if toks.is_empty() {
                continue;
            }
            lex.max_tokens = lex.max_tokens.max(toks.len());
            lex.phrases.entry(toks).or_insert(id);
        }
        lex
    }

    pub fn lookup(&self, tokens: &[String]) -> Option<ConceptId> {
        self.phrases.get(tokens).copied()
    }

    pub fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&[String], ConceptId)> {
        self.phrases.iter().map(|(k, v)| (k.as_slice(), *v))
    }
}

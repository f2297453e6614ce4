//! Runs the relational graph attention network over a hand-built subgraph
//! and shows how the super-node output moves with the concept scores.

use sinlg::extraction::{Origin, ScoredConcept, SubgraphSpec, SuperEdge};
use sinlg::gnn::{GnnConfig, GnnModel};
use sinlg::kg::{ConceptId, Edge, RelationId};

fn spec(scores: [f64; 3]) -> SubgraphSpec {
    let concepts: Vec<ScoredConcept> = [(0, Origin::Linked), (1, Origin::Linked), (2, Origin::Expanded)]
        .iter()
        .zip(scores)
        .map(|(&(concept, origin), score)| ScoredConcept { concept: ConceptId(concept), origin, score })
        .collect();
    SubgraphSpec {
        sample: 0,
        candidate: 0,
        super_edges: concepts.iter().map(|c| SuperEdge { concept: c.concept, weight: c.score }).collect(),
        concepts,
        concept_names: vec!["dog".into(), "park".into(), "pet".into()],
        kg_edges: vec![
            Edge { head: ConceptId(0), relation: RelationId(0), tail: ConceptId(2), weight: 1.0 },
            Edge { head: ConceptId(0), relation: RelationId(1), tail: ConceptId(1), weight: 0.5 },
        ],
        super_relation: RelationId(2),
        super_init: vec![0.1, -0.2, 0.3, 0.0],
        concept_embeddings: vec![vec![1.0, 0.0, 0.0, 0.5], vec![0.0, 1.0, 0.0, -0.5], vec![0.5, 0.5, 1.0, 0.0]],
        pruned_linked: 0,
        pruned_expanded: 0,
    }
}

fn main() -> sinlg::Result<()> {
    let config = GnnConfig { layers: 2, hidden: 8, ..GnnConfig::default() };
    let gnn = GnnModel::new(config, 4, 2)?;
    let h_prime = [0.2, 0.4, -0.1, 0.3];
    for scores in [[1.0, 0.5, 0.1], [0.1, 0.5, 1.0]] {
        let h_x = gnn.propagate(&spec(scores), &h_prime)?;
        let h: Vec<String> = h_x.iter().map(|v| format!("{v:+.4}")).collect();
        println!("scores {scores:?} -> h_X [{}]", h.join(", "));
    }
    Ok(())
}

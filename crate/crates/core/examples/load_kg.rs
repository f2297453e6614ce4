//! Loads a TSV edge list, then links and expands concepts for one utterance.

use std::collections::BTreeSet;

use sinlg::extraction::link_tokens;
use sinlg::kg::{ConceptLexicon, KnowledgeGraph};
use sinlg::text::split_tokens;

const EDGES: &str = "\
RelatedTo\tdog\tcat\t0.8
IsA\tdog\tpet
IsA\tcat\tpet
AtLocation\tdog\tpark
IsA\thot_dog\tfood
IsA\tpet\tanimal
";

fn main() -> sinlg::Result<()> {
    let (kg, report) = KnowledgeGraph::parse_edge_list(EDGES, "inline.tsv")?;
    println!("{}", serde_json::to_string(&report)?);

    let lexicon = ConceptLexicon::build(&kg);
    let tokens = split_tokens("I walk my dog in the park and eat a hot dog");
    let mut seeds = BTreeSet::new();
    for (start, len, c) in link_tokens(&tokens, &lexicon) {
        println!("linked {:?} -> {}", tokens[start..start + len].join(" "), kg.concept_name(c).unwrap());
        seeds.insert(c);
    }
    for hops in 0..=2 {
        let names: Vec<&str> = kg
            .k_hop_neighbors(&seeds, hops)?
            .into_iter()
            .filter_map(|c| kg.concept_name(c))
            .collect();
        println!("{hops}-hop: {}", names.join(", "));
    }
    Ok(())
}

//! Builds the pruned subgraph of one (sample, candidate) pair with a freshly
//! initialised scorer.

use sinlg::corpus::{synth_generate, SynthConfig};
use sinlg::extraction::{access_counts, ExtractionConfig, KnowledgeBase};
use sinlg::kg::KnowledgeGraph;
use sinlg::text::{EncoderConfig, EncoderModel, ScorerSnapshot};
use sinlg::training::build_vocab;

fn main() -> sinlg::Result<()> {
    let corpus = synth_generate(&SynthConfig::default())?;
    let (kg, _) = KnowledgeGraph::parse_edge_list(&corpus.kg_tsv, "synth")?;
    let vocab = build_vocab(&corpus.train, Some(&kg), 1);
    let encoder = EncoderModel::new(EncoderConfig { dim: 16, ffn_dim: 32, ..EncoderConfig::default() }, vocab)?;
    let snapshot = ScorerSnapshot::capture(&encoder);
    let kb = KnowledgeBase::new(kg, &snapshot)?;

    let config = ExtractionConfig { hops: 1, max_nodes: 8, ..ExtractionConfig::default() };
    let sample = &corpus.dev[0];
    let pos = sample.positive_index().unwrap();
    let spec = kb.build_subgraph(&snapshot, sample, 0, pos, &config)?;
    spec.validate()?;
    println!("{} nodes ({} linked), {} kg edges", spec.node_count(), spec.num_linked(), spec.kg_edges.len());
    for (c, name) in spec.concepts.iter().zip(&spec.concept_names) {
        println!("  {name:<12} {:?} score {:+.4}", c.origin, c.score);
    }
    println!("pruned {} linked, {} expanded", spec.pruned_linked, spec.pruned_expanded);
    println!("knowledge accesses: {:?}", access_counts());
    Ok(())
}

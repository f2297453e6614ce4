//! Times knowledge-free ranking against the retrieval + GNN pipeline.

use sinlg::corpus::{synth_generate, SynthConfig};
use sinlg::evaluation::latency_bench;
use sinlg::extraction::KnowledgeBase;
use sinlg::kg::KnowledgeGraph;
use sinlg::text::ScorerSnapshot;
use sinlg::training::{build_vocab, SelectionModel, TrainConfig, Variant};

fn main() -> sinlg::Result<()> {
    let corpus = synth_generate(&SynthConfig { n_dialogues: 60, n_dev_dialogues: 40, ..SynthConfig::default() })?;
    let (kg, _) = KnowledgeGraph::parse_edge_list(&corpus.kg_tsv, "synth")?;
    let mut config = TrainConfig { variant: Variant::Sinlg, ..TrainConfig::default() };
    config.encoder.dim = 16;
    config.encoder.ffn_dim = 32;
    config.extraction.max_seq_len = 64;
    config.extraction.max_nodes = 20;
    config.gnn.layers = 2;
    config.gnn.hidden = 16;
    let model = SelectionModel::new(&config, build_vocab(&corpus.train, Some(&kg), 1), kg.num_relations())?;
    let snapshot = ScorerSnapshot::capture(&model.encoder);
    let kb = KnowledgeBase::new(kg, &snapshot)?;

    let report = latency_bench(&model, &corpus.dev[..5], &kb, &snapshot, &config.extraction, 3)?;
    println!(
        "knowledge-free {:.2} ms, online {:.2} ms per instance, ratio {:.1}",
        report.qo_free.average * 1e3,
        report.online.average * 1e3,
        report.ratio
    );
    Ok(())
}

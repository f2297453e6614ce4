//! Trains one variant on a small synthetic corpus, saves the checkpoint and
//! reloads it. `cargo run --release --example train_variant -- s3`

use sinlg::corpus::{synth_generate, SynthConfig};
use sinlg::kg::KnowledgeGraph;
use sinlg::training::{train_with_log, Checkpoint, TrainConfig, TrainData, Variant};

fn main() -> sinlg::Result<()> {
    let variant: Variant = std::env::args().nth(1).as_deref().unwrap_or("sinlg").parse()?;
    let corpus = synth_generate(&SynthConfig { n_dialogues: 60, n_dev_dialogues: 40, ..SynthConfig::default() })?;
    let (kg, _) = KnowledgeGraph::parse_edge_list(&corpus.kg_tsv, "synth")?;

    let mut config = TrainConfig { variant, epochs: 3, batch_size: 16, ..TrainConfig::default() };
    config.encoder.dim = 16;
    config.encoder.ffn_dim = 32;
    config.encoder.layers = 1;
    config.extraction.hops = 1;
    config.extraction.max_nodes = 8;
    config.extraction.max_seq_len = 64;
    config.gnn.layers = 2;
    config.gnn.hidden = 16;

    let data = TrainData { train: &corpus.train, dev: Some(&corpus.dev), kg: Some(&kg) };
    let out = train_with_log(&config, data, |e| {
        println!("{}", serde_json::to_string(e)?);
        Ok(())
    })?;
    let path = std::env::temp_dir().join(format!("sinlg-{variant}.json"));
    out.checkpoint.save(&path)?;
    let back = Checkpoint::load(&path)?;
    println!("saved {} (config {}), step {}", path.display(), back.config_hash, back.step);
    Ok(())
}

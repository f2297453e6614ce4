//! Retrains SINLG for several values of alpha and prints one metrics row per
//! value. The same loop over `extraction.max_nodes` gives the node-budget
//! sweep.

use sinlg::corpus::{synth_generate, SynthConfig};
use sinlg::kg::KnowledgeGraph;
use sinlg::training::{train, TrainConfig, TrainData};

fn main() -> sinlg::Result<()> {
    let corpus = synth_generate(&SynthConfig { n_dialogues: 40, n_dev_dialogues: 40, ..SynthConfig::default() })?;
    let (kg, _) = KnowledgeGraph::parse_edge_list(&corpus.kg_tsv, "synth")?;
    let data = TrainData { train: &corpus.train, dev: Some(&corpus.dev), kg: Some(&kg) };

    let mut base = TrainConfig { epochs: 1, batch_size: 16, ..TrainConfig::default() };
    base.encoder.dim = 16;
    base.encoder.ffn_dim = 32;
    base.encoder.layers = 1;
    base.extraction.hops = 1;
    base.extraction.max_nodes = 8;
    base.extraction.max_seq_len = 64;
    base.gnn.layers = 1;
    base.gnn.hidden = 16;

    println!("alpha  R@1    MRR");
    for alpha in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let mut config = base.clone();
        config.loss.alpha = alpha;
        let out = train(&config, data)?;
        let dev = out.log.last().and_then(|l| l.dev.clone()).expect("dev metrics");
        println!("{alpha:<5}  {:.3}  {:.3}", dev.r_at_1, dev.mrr);
    }
    Ok(())
}

//! Knowledge-free ranking with an untrained PLM_ONLY model: R@k and MRR,
//! plus a check that no graph access happened.

use sinlg::corpus::{synth_generate, SynthConfig};
use sinlg::evaluation::{evaluate, mrr, r_at_k};
use sinlg::extraction::access_counts;
use sinlg::training::{build_vocab, SelectionModel, TrainConfig, Variant};

fn main() -> sinlg::Result<()> {
    let corpus = synth_generate(&SynthConfig { n_dialogues: 60, n_dev_dialogues: 40, ..SynthConfig::default() })?;
    let mut config = TrainConfig { variant: Variant::PlmOnly, ..TrainConfig::default() };
    config.encoder.dim = 16;
    config.encoder.ffn_dim = 32;
    config.extraction.max_seq_len = 64;
    let model = SelectionModel::new(&config, build_vocab(&corpus.train, None, 1), 0)?;

    let before = access_counts();
    let (results, report) = evaluate(&model, &corpus.dev)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    println!("R20@10 {:.3}  MRR {:.3}", r_at_k(&results, 20, 10)?, mrr(&results)?);
    assert_eq!(access_counts(), before);
    println!("first sample: positive ranked {}", results[0].rank);
    Ok(())
}

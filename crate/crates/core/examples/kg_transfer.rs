//! Trains PLM_ONLY and SINLG on the synthetic paraphrase corpus and compares
//! dev R20@1. Extra `key=value` arguments override the training config,
//! e.g. `cargo run --release --example kg_transfer -- epochs=4 encoder.dim=16`.

use std::time::Instant;

use sinlg::corpus::{parse_config_text, synth_generate, SynthConfig};
use sinlg::kg::KnowledgeGraph;
use sinlg::training::{train, TrainConfig, TrainData, Variant};

fn desk_config() -> TrainConfig {
    let mut c = TrainConfig::default();
    c.learning_rate = 3e-3;
    c.batch_size = 16;
    c.epochs = 6;
    c.encoder.dim = 32;
    c.encoder.heads = 2;
    c.encoder.ffn_dim = 64;
    c.encoder.layers = 1;
    c.extraction.hops = 1;
    c.extraction.max_nodes = 16;
    c.extraction.max_seq_len = 64;
    c.gnn.layers = 2;
    c.gnn.hidden = 32;
    c
}

fn main() -> sinlg::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut base = serde_json::to_value(desk_config())?;
    let seeds: Vec<u64> = match args.iter().find_map(|a| a.strip_prefix("seeds=")) {
        Some(s) => s.split(',').map(|x| x.parse().expect("seed")).collect(),
        None => vec![0, 1, 2],
    };
    let variants: Vec<Variant> = match args.iter().find_map(|a| a.strip_prefix("variants=")) {
        Some(s) => s.split(',').map(|x| x.parse().expect("variant")).collect(),
        None => vec![Variant::PlmOnly, Variant::Sinlg],
    };
    let pick = |prefix: &str, keep: bool| -> String {
        args.iter()
            .filter(|a| !a.starts_with("seeds=") && !a.starts_with("variants="))
            .filter(|a| a.starts_with(prefix) == keep)
            .map(|a| a.strip_prefix(prefix).unwrap_or(a))
            .collect::<Vec<_>>()
            .join("\n")
    };
    merge(&mut base, parse_config_text(&pick("synth.", false))?);
    let config: TrainConfig = serde_json::from_value(base)?;
    let mut synth = serde_json::to_value(SynthConfig::default())?;
    merge(&mut synth, parse_config_text(&pick("synth.", true))?);
    let synth: SynthConfig = serde_json::from_value(synth)?;

    let corpus = synth_generate(&synth)?;
    let (kg, _) = KnowledgeGraph::parse_edge_list(&corpus.kg_tsv, "synth")?;
    println!(
        "corpus: {} train, {} dev, paraphrase share {:.2}",
        corpus.train.len(),
        corpus.dev.len(),
        sinlg::corpus::SynthStats::paraphrase_share(&corpus.stats.dev_kinds)
    );
    let data = TrainData { train: &corpus.train, dev: Some(&corpus.dev), kg: Some(&kg) };
    let mut means = Vec::new();
    for &variant in &variants {
        let mut total = 0.0;
        for &seed in &seeds {
            let start = Instant::now();
            let out = train(&TrainConfig { variant, seed, ..config.clone() }, data)?;
            let r1: Vec<String> = out
                .log
                .iter()
                .map(|l| format!("{:.3}", l.dev.as_ref().map_or(f64::NAN, |d| d.r_at_1)))
                .collect();
            let last = out.log.last().and_then(|l| l.dev.as_ref()).map_or(0.0, |d| d.r_at_1);
            total += last;
            let loss = out.log.last().map_or(f64::NAN, |l| l.loss);
            println!(
                "{variant} seed {seed}: R@1 by epoch [{}] final loss {loss:.4} in {:.1}s",
                r1.join(" "),
                start.elapsed().as_secs_f64()
            );
        }
        means.push(total / seeds.len() as f64);
    }
    for (v, m) in variants.iter().zip(&means) {
        println!("{v}: mean dev R@1 {m:.4}");
    }
    Ok(())
}

fn merge(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}

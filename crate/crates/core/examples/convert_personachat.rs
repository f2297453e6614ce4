//! Converts a PERSONA-CHAT text file (ParlAI layout, e.g. `train_self_original.txt`)
//! into the JSONL dataset format read by `sinlg train`.
//!
//! `cargo run --release --example convert_personachat -- in.txt out.jsonl`

use sinlg::corpus::{parse_personachat, write_dataset};
use sinlg::Error;

fn main() -> sinlg::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [input, output] = args.as_slice() else {
        return Err(Error::Config("usage: convert_personachat <in.txt> <out.jsonl>".into()));
    };
    let text = std::fs::read_to_string(input).map_err(|e| Error::Io { path: input.into(), source: e })?;
    let samples = parse_personachat(&text, input)?;
    write_dataset(output, &samples)?;
    println!("{} samples -> {output}", samples.len());
    Ok(())
}

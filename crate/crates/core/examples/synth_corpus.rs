//! Generates the synthetic paraphrase corpus and prints one sample.
//! Pass a directory to also write train.jsonl, dev.jsonl and kg.tsv there.

use sinlg::corpus::{synth_generate, SynthConfig, SynthStats};

fn main() -> sinlg::Result<()> {
    let corpus = synth_generate(&SynthConfig::default())?;
    let st = &corpus.stats;
    println!(
        "{} train / {} dev samples, {} concepts, {} edges, dev paraphrase share {:.2}",
        st.train_samples,
        st.dev_samples,
        st.concepts,
        st.edges,
        SynthStats::paraphrase_share(&st.dev_kinds)
    );
    let s = &corpus.dev[0];
    println!("persona: {:?}", s.persona);
    println!("last turn: {:?}", s.context.last());
    println!("positive: {:?} ({:?})", s.candidates[s.positive_index().unwrap()], st.dev_kinds[0]);
    if let Some(dir) = std::env::args().nth(1) {
        corpus.write(&dir)?;
        println!("wrote {dir}");
    }
    Ok(())
}

//! Dataset files, run configuration files and the synthetic corpus.

mod config;
mod personachat;
mod synth;

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sample::MrsSample;

pub use config::{parse_config_text, read_config, TrainJob};
pub use personachat::parse_personachat;
pub use synth::{synth_generate, PositiveKind, SynthConfig, SynthCorpus, SynthStats};

/// Parses a JSONL dataset; blank lines are skipped and every sample must
/// carry exactly one positive label.
pub fn parse_dataset(text: &str, source: impl AsRef<Path>) -> Result<Vec<MrsSample>> {
    let source = source.as_ref();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: source.to_path_buf(),
            line: i + 1,
            msg,
        };
        let sample: MrsSample = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        sample.validate(true).map_err(|e| err(e.to_string()))?;
        out.push(sample);
    }
    if out.is_empty() {
        log::warn!("{}: dataset is empty", source.display());
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<MrsSample>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, path)
}

/// One JSON object per line, in order.
pub fn dataset_to_jsonl(samples: &[MrsSample]) -> String {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(s).expect("sample serializes"));
        out.push('\n');
    }
    out
}

pub fn write_dataset(path: impl AsRef<Path>, samples: &[MrsSample]) -> Result<()> {
    write_text(path, &dataset_to_jsonl(samples))
}

pub(crate) fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

//! Reader for the ParlAI PERSONA-CHAT text format:
//!
//! ```text
//! 1 your persona: i like to ski.
//! 2 hi , how are you ?\ti am great .\t\tnope|i am great .
//! ```
//!
//! Numbering restarts at 1 for each dialogue. Every dialogue line yields one
//! sample whose context is the dialogue so far plus the query.

use std::path::Path;

use crate::error::{Error, Result};
use crate::sample::MrsSample;

const PERSONA: &str = "your persona:";

struct Dialogue {
    persona: Vec<String>,
    history: Vec<String>,
}

pub fn parse_personachat(text: &str, source: impl AsRef<Path>) -> Result<Vec<MrsSample>> {
    let source = source.as_ref();
    let err = |line: usize, msg: String| Error::Parse {
        path: source.to_path_buf(),
        line,
        msg,
    };
    let mut out = Vec::new();
    let mut d = Dialogue {
        persona: Vec::new(),
        history: Vec::new(),
    };
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let (num, rest) = raw.split_once(' ').ok_or_else(|| err(line, "missing turn number".into()))?;
        let num: usize = num.parse().map_err(|_| err(line, format!("bad turn number {num:?}")))?;
        if num == 1 {
            d = Dialogue {
                persona: Vec::new(),
                history: Vec::new(),
            };
        }
        if let Some(p) = rest.strip_prefix(PERSONA) {
            d.persona.push(p.trim().to_string());
            continue;
        }
        if rest.starts_with("partner's persona:") {
            continue;
        }
        let fields: Vec<&str> = rest.split('\t').collect();
        if fields.len() < 4 {
            return Err(err(line, format!("expected query, response, reward and candidates, got {} fields", fields.len())));
        }
        let (query, response) = (fields[0].trim(), fields[1].trim());
        let candidates: Vec<String> = fields[3].split('|').map(|c| c.trim().to_string()).collect();
        let labels: Vec<u8> = candidates.iter().map(|c| u8::from(c == response)).collect();
        d.history.push(query.to_string());
        let sample = MrsSample {
            persona: d.persona.clone(),
            context: d.history.clone(),
            candidates,
            labels,
        };
        sample.validate(true).map_err(|e| err(line, e.to_string()))?;
        out.push(sample);
        d.history.push(response.to_string());
    }
    Ok(out)
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One response-selection instance: persona, dialogue context, candidate
/// responses and their 0/1 labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MrsSample {
    pub persona: Vec<String>,
    pub context: Vec<String>,
    pub candidates: Vec<String>,
    pub labels: Vec<u8>,
}

impl MrsSample {
    /// Checks the structural invariants. `require_single_positive` applies to
    /// evaluation data, which carries exactly one true response.
    pub fn validate(&self, require_single_positive: bool) -> Result<()> {
        if self.candidates.len() != self.labels.len() {
            return Err(Error::Sample(format!(
                "{} candidates but {} labels",
                self.candidates.len(),
                self.labels.len()
            )));
        }
        if self.candidates.is_empty() {
            return Err(Error::Sample("no candidates".into()));
        }
        if let Some(bad) = self.labels.iter().find(|&&l| l > 1) {
            return Err(Error::Sample(format!("label {bad} is not 0 or 1")));
        }
        let utterances = self.persona.iter().chain(&self.context).chain(&self.candidates);
        if utterances.into_iter().any(|u| u.trim().is_empty()) {
            return Err(Error::Sample("empty utterance".into()));
        }
        if require_single_positive {
            let positives = self.labels.iter().filter(|&&l| l == 1).count();
            if positives != 1 {
                return Err(Error::Sample(format!("expected exactly one positive label, found {positives}")));
            }
        }
        Ok(())
    }

    /// Index of the first positive candidate.
    pub fn positive_index(&self) -> Option<usize> {
        self.labels.iter().position(|&l| l == 1)
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(labels: Vec<u8>) -> MrsSample {
        MrsSample {
            persona: vec!["i like tea".into()],
            context: vec!["hello".into()],
            candidates: labels.iter().map(|l| format!("reply {l}")).collect(),
            labels,
        }
    }

    #[test]
    fn validation() {
        assert!(sample(vec![0, 1, 0]).validate(true).is_ok());
        assert!(sample(vec![0, 0]).validate(true).is_err());
        assert!(sample(vec![1, 1]).validate(true).is_err());
        assert!(sample(vec![1, 1]).validate(false).is_ok());
        let mut s = sample(vec![1, 0]);
        s.labels.pop();
        assert!(s.validate(false).is_err());
        let mut s = sample(vec![1, 0]);
        s.context.push("  ".into());
        assert!(s.validate(false).is_err());
    }
}

//! Flattening a sample into one encoder input:
//! `[CLS] p1 [SEP] .. pn [SEP] u1 [SEP] .. um [SEP] r [SEP]`.

use super::vocab::{TokenSequence, Vocabulary};
use crate::sample::MrsSample;
use crate::error::{Error, Result};

/// How many tokens were cut to fit the length budget.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Truncation {
    pub knowledge_dropped: usize,
    pub context_dropped: usize,
    pub persona_dropped: usize,
    pub response_dropped: usize,
}

impl Truncation {
    pub fn any(&self) -> bool {
        self.knowledge_dropped + self.context_dropped + self.persona_dropped + self.response_dropped > 0
    }
}

fn segment(vocab: &Vocabulary, utterances: &[String]) -> Vec<u32> {
    let mut out = Vec::new();
    for u in utterances {
        out.extend(vocab.ids(u));
        out.push(Vocabulary::SEP_ID);
    }
    out
}

/// Persona, context and one candidate concatenated in order.
///
/// When the result would exceed `max_len`, tokens are dropped from the
/// front of the context first (oldest turns go first), then from the front
/// of the persona. The CLS token and the candidate are kept; the candidate is
/// only cut (from its end) when it cannot fit on its own.
pub fn trans_a(vocab: &Vocabulary, sample: &MrsSample, candidate: usize, max_len: usize) -> Result<(TokenSequence, Truncation)> {
    trans_a_with_knowledge(vocab, sample, candidate, &[], max_len)
}

/// [`trans_a`] with extra knowledge phrases appended as `[SEP]`-terminated
/// segments after the candidate. Knowledge is the first thing cut, from its end.
pub fn trans_a_with_knowledge(
    vocab: &Vocabulary,
    sample: &MrsSample,
    candidate: usize,
    knowledge: &[String],
    max_len: usize,
) -> Result<(TokenSequence, Truncation)> {
    let response = sample.candidates.get(candidate).ok_or_else(|| {
        Error::Sample(format!("candidate {candidate} out of range ({} candidates)", sample.candidates.len()))
    })?;
    if max_len < 2 {
        return Err(Error::Config(format!("max_seq_len {max_len} cannot hold [CLS] and [SEP]")));
    }
    let mut persona = segment(vocab, &sample.persona);
    let mut context = segment(vocab, &sample.context);
    let mut resp = segment(vocab, std::slice::from_ref(response));
    let mut know = segment(vocab, knowledge);
    let mut cut = Truncation::default();

    let total = |p: &[u32], c: &[u32], r: &[u32], k: &[u32]| 1 + p.len() + c.len() + r.len() + k.len();
    let mut excess = total(&persona, &context, &resp, &know).saturating_sub(max_len);
    if excess > 0 {
        let n = excess.min(know.len());
        know.truncate(know.len() - n);
        cut.knowledge_dropped = n;
        excess -= n;
    }
    if excess > 0 {
        let n = excess.min(context.len());
        context.drain(..n);
        cut.context_dropped = n;
        excess -= n;
    }
    if excess > 0 {
        let n = excess.min(persona.len());
        persona.drain(..n);
        cut.persona_dropped = n;
        excess -= n;
    }
    if excess > 0 {
        // keep the closing [SEP]
        let body = resp.len() - 1;
        resp.drain(body - excess..body);
        cut.response_dropped = excess;
    }
    if cut.any() {
        log::debug!("trans_a candidate {candidate}: truncated {cut:?}");
    }

    let mut ids = Vec::with_capacity(max_len);
    ids.push(Vocabulary::CLS_ID);
    ids.extend(persona);
    ids.extend(context);
    ids.extend(resp);
    ids.extend(know);
    Ok((TokenSequence::unpadded(ids), cut))
}

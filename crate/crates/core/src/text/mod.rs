//! Text side: tokenization, sequence assembly, the trainable encoder and the
//! frozen scorer used for concept embeddings.

mod encoder;
mod snapshot;
mod trans;
mod vocab;

pub use encoder::{EncoderConfig, EncoderModel, EncoderState, ENCODER_GROUP};
pub use snapshot::{ConceptTable, ScorerSnapshot};
pub use trans::{trans_a, trans_a_with_knowledge, Truncation};
pub use vocab::{split_tokens, TokenSequence, Vocabulary, CLS, PAD, SEP, UNK};

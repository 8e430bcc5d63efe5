//! Corpus preparation: text normalization, sentence splitting and ingestion
//! of blank-line-delimited document files.

mod ingest;
mod normalize;
mod split;
pub mod synthetic;

pub use ingest::{ingest, ingest_str, read_corpus, write_corpus, IngestReport};
pub use normalize::{decode_utf8, normalize, NormalizationPolicy, UnicodeForm};
pub use split::{split_sentences, ABBREVIATIONS};

use serde::{Deserialize, Serialize};

/// A document: an id and its sentences in source order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub sentences: Vec<String>,
}

impl Document {
    /// Builds a document, dropping sentences that are blank after trimming.
    pub fn new(id: impl Into<String>, sentences: impl IntoIterator<Item = impl Into<String>>) -> Self {
        let sentences = sentences
            .into_iter()
            .map(Into::into)
            .filter(|s: &String| !s.trim().is_empty())
            .collect();
        Document { id: id.into(), sentences }
    }
}

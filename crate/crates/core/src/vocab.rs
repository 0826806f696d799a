use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::TokenizedDocument;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("empty vocabulary: no word reaches document frequency {min_doc_freq}")]
pub struct EmptyVocabulary {
    pub min_doc_freq: usize,
}

/// Lexicographically ordered word list with document frequencies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    words: Vec<String>,
    doc_freq: Vec<usize>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    /// Number of documents the frequencies were counted over.
    pub num_docs: usize,
}

impl Vocabulary {
    /// Builds from `(word, doc_freq)` pairs; words are sorted and must be unique.
    pub fn from_counts(counts: impl IntoIterator<Item = (String, usize)>, num_docs: usize) -> Self {
        let sorted: BTreeMap<String, usize> = counts.into_iter().collect();
        let (words, doc_freq): (Vec<_>, Vec<_>) = sorted.into_iter().unzip();
        let mut v = Vocabulary {
            words,
            doc_freq,
            index: HashMap::new(),
            num_docs,
        };
        v.reindex();
        v
    }

    /// Restores the lookup table after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn doc_freq(&self, id: usize) -> usize {
        self.doc_freq[id]
    }

    pub fn doc_freq_of(&self, word: &str) -> Option<usize> {
        self.id(word).map(|i| self.doc_freq[i])
    }

    /// Maps tokens to ids, dropping out-of-vocabulary tokens.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().filter_map(|t| self.id(t.as_ref())).collect()
    }
}

/// Document frequency of every token in the corpus.
pub fn document_frequencies(docs: &[TokenizedDocument]) -> HashMap<&str, usize> {
    let mut df: HashMap<&str, usize> = HashMap::new();
    for doc in docs {
        let unique: HashSet<&str> = doc.tokens.iter().map(String::as_str).collect();
        for w in unique {
            *df.entry(w).or_insert(0) += 1;
        }
    }
    df
}

/// Words appearing in at least `min_doc_freq` documents.
pub fn build_vocab(
    docs: &[TokenizedDocument],
    min_doc_freq: usize,
) -> Result<Vocabulary, EmptyVocabulary> {
    let vocab = Vocabulary::from_counts(
        document_frequencies(docs)
            .into_iter()
            .filter(|&(_, df)| df >= min_doc_freq)
            .map(|(w, df)| (w.to_string(), df)),
        docs.len(),
    );
    if vocab.is_empty() {
        return Err(EmptyVocabulary { min_doc_freq });
    }
    Ok(vocab)
}

//! Tokenization and normalization shared by every statistic.

use std::collections::BTreeSet;
use std::io::BufRead;

use rayon::prelude::*;
use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Post};

const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreprocessConfig {
    pub lowercase: bool,
    pub strip_punctuation: bool,
    pub stem: bool,
    stopwords: BTreeSet<String>,
}

impl Default for PreprocessConfig {
    /// Lowercase, strip punctuation, English stopwords, stemming on.
    fn default() -> Self {
        PreprocessConfig::new(true, true, true).with_stopwords(default_stopwords())
    }
}

impl PreprocessConfig {
    pub fn new(lowercase: bool, strip_punctuation: bool, stem: bool) -> Self {
        PreprocessConfig {
            lowercase,
            strip_punctuation,
            stem,
            stopwords: BTreeSet::new(),
        }
    }

    /// Replaces the stopword set. Entries go through the same case and punctuation
    /// rules as tokens, so `I'm` in the list matches the token `im`.
    pub fn with_stopwords<I, S>(mut self, words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        self.stopwords = words
            .into_iter()
            .filter_map(|w| self.clean(w.as_ref().trim()))
            .collect();
        self
    }

    pub fn stopwords(&self) -> &BTreeSet<String> {
        &self.stopwords
    }

    fn clean(&self, token: &str) -> Option<String> {
        let mut s = if self.lowercase {
            token.to_lowercase()
        } else {
            token.to_string()
        };
        if self.strip_punctuation {
            s.retain(char::is_alphanumeric);
        }
        (!s.is_empty()).then_some(s)
    }
}

pub fn default_stopwords() -> Vec<String> {
    parse_word_list(DEFAULT_STOPWORDS.as_bytes()).expect("bundled list is valid UTF-8")
}

/// One word per line; blank lines and `#` comments ignored.
pub fn parse_word_list<R: BufRead>(reader: R) -> std::io::Result<Vec<String>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let w = line.trim();
        if !w.is_empty() && !w.starts_with('#') {
            out.push(w.to_string());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedDocument {
    pub doc_id: String,
    pub author: String,
    pub tokens: Vec<String>,
}

impl TokenizedDocument {
    pub fn new(doc_id: impl Into<String>, author: impl Into<String>, tokens: Vec<String>) -> Self {
        TokenizedDocument {
            doc_id: doc_id.into(),
            author: author.into(),
            tokens,
        }
    }

    /// Convenience for tests and fixtures: tokens from a whitespace-separated string.
    pub fn from_words(doc_id: impl Into<String>, words: &str) -> Self {
        Self::new(doc_id, "", tokenize(words))
    }
}

/// Splits on Unicode whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

/// Lowercase, strip non-alphanumeric characters, drop empties and stopwords, then stem.
pub fn normalize<S: AsRef<str>>(tokens: &[S], config: &PreprocessConfig) -> Vec<String> {
    let stemmer = config.stem.then(|| Stemmer::create(Algorithm::English));
    tokens
        .iter()
        .filter_map(|t| config.clean(t.as_ref()))
        .filter(|t| !config.stopwords.contains(t))
        .map(|t| match &stemmer {
            Some(s) => s.stem(&t).into_owned(),
            None => t,
        })
        .collect()
}

pub fn preprocess_post(post: &Post, config: &PreprocessConfig) -> TokenizedDocument {
    TokenizedDocument {
        doc_id: post.id.clone(),
        author: post.author.clone(),
        tokens: normalize(&tokenize(&post.text()), config),
    }
}

/// Per-post documents in corpus order.
pub fn preprocess_corpus(corpus: &Corpus, config: &PreprocessConfig) -> Vec<TokenizedDocument> {
    corpus
        .posts()
        .par_iter()
        .map(|p| preprocess_post(p, config))
        .collect()
}

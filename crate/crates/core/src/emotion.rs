//! Word-emotion lexicon scoring.
//!
//! A document's count for emotion `i` is the number of its tokens that belong to
//! the lexicon set `L_i` (a token in several sets counts for each). Normalized
//! scores divide by the largest count, and the dominant emotion is the argmax,
//! with ties going to the lexicographically smallest emotion name.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;

use thiserror::Error;

use crate::preprocess::TokenizedDocument;

pub const CANONICAL_EMOTIONS: [&str; 10] = [
    "anger",
    "anticipation",
    "disgust",
    "fear",
    "joy",
    "sadness",
    "surprise",
    "trust",
    "negative",
    "positive",
];

/// Label used when no token matches any emotion.
pub const NO_EMOTION: &str = "none";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EmotionError {
    #[error("lexicon row {row}: expected `word<TAB>emotion<TAB>0|1`, got `{line}`")]
    MalformedRow { row: usize, line: String },
    #[error("lexicon row {row}: flag must be 0 or 1, got `{flag}`")]
    BadFlag { row: usize, flag: String },
    #[error("emotion name `{0}` is reserved")]
    ReservedName(String),
    #[error("no users to aggregate")]
    EmptyCohort,
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Error)]
#[error("{0}")]
pub struct IoError(String);

impl PartialEq for IoError {
    fn eq(&self, other: &Self) -> bool {
        self.0 == other.0
    }
}
impl Eq for IoError {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    emotions: Vec<String>,
    membership: BTreeMap<String, BTreeSet<String>>,
    by_word: HashMap<String, Vec<usize>>,
}

impl Lexicon {
    /// Empty lexicon over the given emotions, in the given order.
    pub fn new<S: AsRef<str>>(emotions: &[S]) -> Self {
        let mut lex = Lexicon {
            emotions: Vec::new(),
            membership: BTreeMap::new(),
            by_word: HashMap::new(),
        };
        for e in emotions {
            lex.ensure_emotion(e.as_ref());
        }
        lex
    }

    /// Empty lexicon over the ten standard emotions.
    pub fn canonical() -> Self {
        Lexicon::new(&CANONICAL_EMOTIONS)
    }

    fn ensure_emotion(&mut self, emotion: &str) -> usize {
        if let Some(i) = self.emotions.iter().position(|e| e == emotion) {
            return i;
        }
        self.emotions.push(emotion.to_string());
        self.membership.insert(emotion.to_string(), BTreeSet::new());
        self.emotions.len() - 1
    }

    pub fn insert(&mut self, word: &str, emotion: &str) {
        let i = self.ensure_emotion(emotion);
        if self
            .membership
            .get_mut(emotion)
            .unwrap()
            .insert(word.to_string())
        {
            self.by_word.entry(word.to_string()).or_default().push(i);
        }
    }

    pub fn emotions(&self) -> &[String] {
        &self.emotions
    }

    pub fn words(&self, emotion: &str) -> Option<&BTreeSet<String>> {
        self.membership.get(emotion)
    }

    pub fn contains(&self, emotion: &str, word: &str) -> bool {
        self.membership
            .get(emotion)
            .is_some_and(|s| s.contains(word))
    }

    /// Rewrites every member word through `f` (e.g. the corpus normalization), keeping
    /// the emotion order. Words mapped to `None` are dropped.
    pub fn map_words<F>(&self, f: F) -> Lexicon
    where
        F: Fn(&str) -> Option<String>,
    {
        let mut out = Lexicon::new(&self.emotions);
        for e in &self.emotions {
            for w in &self.membership[e] {
                if let Some(mapped) = f(w) {
                    out.insert(&mapped, e);
                }
            }
        }
        out
    }

    fn emotions_of(&self, word: &str) -> &[usize] {
        self.by_word.get(word).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Reads `word<TAB>emotion<TAB>flag` rows. Emotions are ordered by first appearance;
/// only rows flagged `1` add membership. Blank lines and `#` comments are skipped.
pub fn load_lexicon<R: BufRead>(reader: R) -> Result<Lexicon, EmotionError> {
    let mut lex = Lexicon::new::<&str>(&[]);
    for (idx, line) in reader.lines().enumerate() {
        let row = idx + 1;
        let line = line.map_err(|e| IoError(e.to_string()))?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 3 || fields[0].is_empty() || fields[1].is_empty() {
            return Err(EmotionError::MalformedRow {
                row,
                line: trimmed.to_string(),
            });
        }
        let (word, emotion, flag) = (fields[0].trim(), fields[1].trim(), fields[2].trim());
        if emotion == NO_EMOTION {
            return Err(EmotionError::ReservedName(emotion.to_string()));
        }
        match flag {
            "1" => lex.insert(word, emotion),
            "0" => {
                lex.ensure_emotion(emotion);
            }
            _ => {
                return Err(EmotionError::BadFlag {
                    row,
                    flag: flag.to_string(),
                })
            }
        }
    }
    Ok(lex)
}

/// Per-emotion token counts, keyed by emotion name.
pub type EmotionCounts = BTreeMap<String, u64>;

fn zero_counts(lex: &Lexicon) -> EmotionCounts {
    lex.emotions.iter().map(|e| (e.clone(), 0)).collect()
}

/// Token-occurrence counts for every lexicon emotion.
pub fn emotion_counts<S: AsRef<str>>(tokens: &[S], lex: &Lexicon) -> EmotionCounts {
    let mut raw = vec![0u64; lex.emotions.len()];
    for t in tokens {
        for &i in lex.emotions_of(t.as_ref()) {
            raw[i] += 1;
        }
    }
    lex.emotions.iter().cloned().zip(raw).collect()
}

pub fn document_counts(doc: &TokenizedDocument, lex: &Lexicon) -> EmotionCounts {
    emotion_counts(&doc.tokens, lex)
}

pub fn merge_counts(into: &mut EmotionCounts, other: &EmotionCounts) {
    for (e, n) in other {
        *into.entry(e.clone()).or_insert(0) += n;
    }
}

/// Each count divided by the largest; all zeros stay zero.
pub fn normalize_profile(counts: &EmotionCounts) -> BTreeMap<String, f64> {
    let max = counts.values().copied().max().unwrap_or(0);
    counts
        .iter()
        .map(|(e, &n)| {
            let v = if max == 0 { 0.0 } else { n as f64 / max as f64 };
            (e.clone(), v)
        })
        .collect()
}

/// Argmax of the counts; ties to the smallest name, all-zero to `none`.
pub fn dominant_emotion(counts: &EmotionCounts) -> String {
    let mut best: Option<(&String, u64)> = None;
    // BTreeMap iterates names in ascending order, so a strict `>` keeps the first tie.
    for (e, &n) in counts {
        if n > 0 && best.is_none_or(|(_, b)| n > b) {
            best = Some((e, n));
        }
    }
    best.map_or_else(|| NO_EMOTION.to_string(), |(e, _)| e.clone())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmotionProfile {
    pub counts: EmotionCounts,
    pub normalized: BTreeMap<String, f64>,
    pub dominant: String,
}

impl EmotionProfile {
    pub fn from_counts(counts: EmotionCounts) -> Self {
        let normalized = normalize_profile(&counts);
        let dominant = dominant_emotion(&counts);
        EmotionProfile {
            counts,
            normalized,
            dominant,
        }
    }
}

/// Aggregated profile for each author over all their documents.
pub fn user_profiles(
    users: &BTreeMap<String, Vec<TokenizedDocument>>,
    lex: &Lexicon,
) -> BTreeMap<String, EmotionProfile> {
    users
        .iter()
        .map(|(author, docs)| {
            let mut counts = zero_counts(lex);
            for d in docs {
                merge_counts(&mut counts, &document_counts(d, lex));
            }
            (author.clone(), EmotionProfile::from_counts(counts))
        })
        .collect()
}

/// Fraction of users whose aggregated dominant emotion is each lexicon emotion, plus
/// a `none` bucket. Fractions sum to one.
pub fn cohort_dominant_stats(
    users: &BTreeMap<String, Vec<TokenizedDocument>>,
    lex: &Lexicon,
) -> Result<BTreeMap<String, f64>, EmotionError> {
    if users.is_empty() {
        return Err(EmotionError::EmptyCohort);
    }
    let mut tally: BTreeMap<String, usize> = lex.emotions.iter().map(|e| (e.clone(), 0)).collect();
    tally.insert(NO_EMOTION.to_string(), 0);
    for profile in user_profiles(users, lex).values() {
        *tally.entry(profile.dominant.clone()).or_insert(0) += 1;
    }
    let n = users.len() as f64;
    Ok(tally.into_iter().map(|(e, c)| (e, c as f64 / n)).collect())
}

/// Most frequent lexicon member words per emotion, by descending count then word.
pub fn emotion_word_frequencies(
    docs: &[TokenizedDocument],
    lex: &Lexicon,
    top_n: usize,
) -> BTreeMap<String, Vec<(String, u64)>> {
    let mut freq: HashMap<&str, u64> = HashMap::new();
    for doc in docs {
        for t in &doc.tokens {
            if !lex.emotions_of(t).is_empty() {
                *freq.entry(t.as_str()).or_insert(0) += 1;
            }
        }
    }
    lex.emotions
        .iter()
        .map(|e| {
            let members = &lex.membership[e];
            let mut words: Vec<(String, u64)> = freq
                .iter()
                .filter(|(w, _)| members.contains(**w))
                .map(|(w, &n)| (w.to_string(), n))
                .collect();
            words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            words.truncate(top_n);
            (e.clone(), words)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lex() -> Lexicon {
        load_lexicon(
            "happy\tjoy\t1\nlove\tjoy\t1\nsad\tsadness\t1\nsad\tnegative\t1\nhappy\tsadness\t0\n"
                .as_bytes(),
        )
        .unwrap()
    }

    fn counts(pairs: &[(&str, u64)]) -> EmotionCounts {
        pairs.iter().map(|(e, n)| (e.to_string(), *n)).collect()
    }

    #[test]
    fn map_words_rekeys_members() {
        let mapped = lex().map_words(|w| (w != "love").then(|| w.to_uppercase()));
        assert_eq!(mapped.emotions(), lex().emotions());
        assert!(mapped.contains("joy", "HAPPY"));
        assert!(!mapped.contains("joy", "LOVE"));
        assert_eq!(emotion_counts(&["SAD"], &mapped)["negative"], 1);
    }

    #[test]
    fn flag_one_adds_member() {
        let l = load_lexicon("happy\tjoy\t1\n".as_bytes()).unwrap();
        assert!(l.contains("joy", "happy"));
        let l = load_lexicon("happy\tjoy\t0\n".as_bytes()).unwrap();
        assert!(!l.contains("joy", "happy"));
        assert_eq!(l.emotions(), ["joy"]);
    }

    #[test]
    fn malformed_rows() {
        assert_eq!(
            load_lexicon("happy\tjoy\t1\nhappy joy 1\n".as_bytes()),
            Err(EmotionError::MalformedRow {
                row: 2,
                line: "happy joy 1".into()
            })
        );
        assert_eq!(
            load_lexicon("happy\tjoy\tyes\n".as_bytes()),
            Err(EmotionError::BadFlag {
                row: 1,
                flag: "yes".into()
            })
        );
    }

    #[test]
    fn twelve_row_fixture_sizes() {
        // Hand tally: anger 2, fear 3, joy 1, trust 0.
        let tsv = "abandon\tanger\t0\nabandon\tfear\t1\nabandon\tjoy\t0\n\
                   rage\tanger\t1\nrage\tfear\t0\nrage\tjoy\t0\n\
                   scream\tanger\t1\nscream\tfear\t1\nscream\tjoy\t0\n\
                   panic\tfear\t1\nsmile\tjoy\t1\nsmile\ttrust\t0\n";
        let l = load_lexicon(tsv.as_bytes()).unwrap();
        assert_eq!(l.emotions(), ["anger", "fear", "joy", "trust"]);
        assert_eq!(l.words("anger").unwrap().len(), 2);
        assert_eq!(l.words("fear").unwrap().len(), 3);
        assert_eq!(l.words("joy").unwrap().len(), 1);
        assert_eq!(l.words("trust").unwrap().len(), 0);
    }

    #[test]
    fn counts_by_token_occurrence() {
        let l = lex();
        let c = emotion_counts(&["happy", "happy", "sad"], &l);
        assert_eq!(c["joy"], 2);
        assert_eq!(c["sadness"], 1);
        // `sad` is in two sets and increments both.
        assert_eq!(c["negative"], 1);
        let empty = emotion_counts::<&str>(&[], &l);
        assert!(empty.values().all(|&n| n == 0));
        assert_eq!(empty.len(), 3);
    }

    #[test]
    fn normalize_examples() {
        let n = normalize_profile(&counts(&[("joy", 2), ("sadness", 1)]));
        assert_eq!(n["joy"], 1.0);
        assert_eq!(n["sadness"], 0.5);
        let z = normalize_profile(&counts(&[("joy", 0), ("sadness", 0)]));
        assert!(z.values().all(|&v| v == 0.0));
        let s = normalize_profile(&counts(&[("fear", 0), ("joy", 7)]));
        assert_eq!((s["fear"], s["joy"]), (0.0, 1.0));
    }

    #[test]
    fn dominant_examples() {
        assert_eq!(
            dominant_emotion(&counts(&[("joy", 2), ("sadness", 1)])),
            "joy"
        );
        assert_eq!(
            dominant_emotion(&counts(&[("trust", 1), ("joy", 1)])),
            "joy"
        );
        assert_eq!(
            dominant_emotion(&counts(&[("joy", 0), ("trust", 0)])),
            "none"
        );
        assert_eq!(dominant_emotion(&EmotionCounts::new()), "none");
    }

    fn user(author: &str, docs: &[&str]) -> (String, Vec<TokenizedDocument>) {
        (
            author.to_string(),
            docs.iter()
                .enumerate()
                .map(|(i, d)| {
                    TokenizedDocument::new(
                        format!("{author}{i}"),
                        author,
                        crate::preprocess::tokenize(d),
                    )
                })
                .collect(),
        )
    }

    #[test]
    fn cohort_fractions() {
        let l = lex();
        let one: BTreeMap<_, _> = [user("u", &["happy love"])].into_iter().collect();
        let stats = cohort_dominant_stats(&one, &l).unwrap();
        assert_eq!(stats["joy"], 1.0);
        assert_eq!(stats["none"], 0.0);

        // `sad` alone ties negative/sadness; negative wins lexicographically.
        let four: BTreeMap<_, _> = [
            user("a", &["happy"]),
            user("b", &["love", "sad"]),
            user("c", &["sad"]),
            user("d", &["nothing here"]),
        ]
        .into_iter()
        .collect();
        let stats = cohort_dominant_stats(&four, &l).unwrap();
        assert_eq!(stats["joy"], 0.5);
        assert_eq!(stats["negative"], 0.25);
        assert_eq!(stats["none"], 0.25);
        assert_eq!(stats["sadness"], 0.0);

        assert_eq!(
            cohort_dominant_stats(&BTreeMap::new(), &l),
            Err(EmotionError::EmptyCohort)
        );
    }

    #[test]
    fn word_frequencies() {
        let l = lex();
        let docs = vec![TokenizedDocument::from_words("1", "happy happy sad filler")];
        let f = emotion_word_frequencies(&docs, &l, 1);
        assert_eq!(f["joy"], vec![("happy".to_string(), 2)]);
        assert_eq!(f["sadness"], vec![("sad".to_string(), 1)]);
        let none = emotion_word_frequencies(&docs, &l, 0);
        assert!(none.values().all(Vec::is_empty));
        let all = emotion_word_frequencies(&docs, &l, 10);
        assert!(all.values().flatten().all(|(w, _)| w != "filler"));
    }

    fn profile() -> impl Strategy<Value = EmotionCounts> {
        prop::collection::vec(0u64..20, 10).prop_map(|v| {
            CANONICAL_EMOTIONS
                .iter()
                .map(|e| e.to_string())
                .zip(v)
                .collect()
        })
    }

    proptest! {
        #[test]
        fn dominant_invariant_under_scaling(c in profile(), k in 1u64..50) {
            let scaled: EmotionCounts = c.iter().map(|(e, n)| (e.clone(), n * k)).collect();
            prop_assert_eq!(dominant_emotion(&scaled), dominant_emotion(&c));
            prop_assert_eq!(normalize_profile(&scaled), normalize_profile(&c));
        }

        #[test]
        fn normalized_bounds(c in profile()) {
            let n = normalize_profile(&c);
            prop_assert!(n.values().all(|v| (0.0..=1.0).contains(v)));
            if c.values().any(|&x| x > 0) {
                prop_assert!(n.values().any(|&v| v == 1.0));
                let d = dominant_emotion(&c);
                prop_assert_eq!(n[&d], 1.0);
            }
        }

        #[test]
        fn counts_are_additive(a in prop::collection::vec("(happy|love|sad|x)", 0..20),
                               b in prop::collection::vec("(happy|love|sad|x)", 0..20)) {
            let l = lex();
            let mut joined = a.clone();
            joined.extend(b.iter().cloned());
            let mut sum = emotion_counts(&a, &l);
            merge_counts(&mut sum, &emotion_counts(&b, &l));
            prop_assert_eq!(emotion_counts(&joined, &l), sum);
        }
    }
}

//! Adjacent-pair counts, document-level contingency tables, the phi coefficient,
//! thresholded correlation graphs and their export.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::TokenizedDocument;
use crate::vocab::{document_frequencies, Vocabulary};

#[derive(Debug, Error, PartialEq)]
pub enum CooccurError {
    #[error("contingency needs two distinct words, got `{0}` twice")]
    InvalidPair(String),
    #[error("phi undefined: a margin of {0:?} is zero")]
    UndefinedCorrelation(ContingencyTable),
    #[error("min_phi must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("unknown graph format `{0}` (expected dot or edge_csv)")]
    UnknownFormat(String),
    #[error("edge csv: {0}")]
    EdgeCsv(String),
}

/// Counts of ordered adjacent token pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BigramCounts {
    counts: HashMap<(String, String), usize>,
}

impl BigramCounts {
    pub fn get(&self, first: &str, second: &str) -> usize {
        self.counts
            .get(&(first.to_string(), second.to_string()))
            .copied()
            .unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, usize)> {
        self.counts
            .iter()
            .map(|((a, b), &n)| (a.as_str(), b.as_str(), n))
    }
}

impl FromIterator<((String, String), usize)> for BigramCounts {
    fn from_iter<T: IntoIterator<Item = ((String, String), usize)>>(iter: T) -> Self {
        let mut counts = HashMap::new();
        for (pair, n) in iter {
            if n > 0 {
                *counts.entry(pair).or_insert(0) += n;
            }
        }
        BigramCounts { counts }
    }
}

/// Counts adjacent pairs inside each document; pairs never span documents.
pub fn count_bigrams(docs: &[TokenizedDocument]) -> BigramCounts {
    let mut counts: HashMap<(String, String), usize> = HashMap::new();
    for doc in docs {
        for w in doc.tokens.windows(2) {
            *counts.entry((w[0].clone(), w[1].clone())).or_insert(0) += 1;
        }
    }
    BigramCounts { counts }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BigramEdge {
    pub first: String,
    pub second: String,
    pub count: usize,
}

/// Pairs with `count >= min_count`, by descending count then lexicographic pair.
pub fn filter_bigrams(counts: &BigramCounts, min_count: usize) -> Vec<BigramEdge> {
    let mut edges: Vec<BigramEdge> = counts
        .iter()
        .filter(|&(_, _, n)| n >= min_count)
        .map(|(a, b, n)| BigramEdge {
            first: a.to_string(),
            second: b.to_string(),
            count: n,
        })
        .collect();
    edges.sort_by(|x, y| {
        y.count
            .cmp(&x.count)
            .then_with(|| (&x.first, &x.second).cmp(&(&y.first, &y.second)))
    });
    edges
}

/// 2x2 document counts for a word pair: `n11` both present, `n10` only the first,
/// `n01` only the second, `n00` neither.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub n11: u64,
    pub n10: u64,
    pub n01: u64,
    pub n00: u64,
}

impl ContingencyTable {
    /// Builds the table from per-word document frequencies and their joint count.
    pub fn from_frequencies(n_docs: u64, df_x: u64, df_y: u64, both: u64) -> Self {
        debug_assert!(both <= df_x.min(df_y) && df_x + df_y - both <= n_docs);
        ContingencyTable {
            n11: both,
            n10: df_x - both,
            n01: df_y - both,
            n00: n_docs + both - df_x - df_y,
        }
    }

    pub fn total(&self) -> u64 {
        self.n11 + self.n10 + self.n01 + self.n00
    }

    /// `n1.`
    pub fn row1(&self) -> u64 {
        self.n11 + self.n10
    }

    /// `n0.`
    pub fn row0(&self) -> u64 {
        self.n01 + self.n00
    }

    /// `n.1`
    pub fn col1(&self) -> u64 {
        self.n11 + self.n01
    }

    /// `n.0`
    pub fn col0(&self) -> u64 {
        self.n10 + self.n00
    }

    pub fn transpose(&self) -> Self {
        ContingencyTable {
            n11: self.n11,
            n10: self.n01,
            n01: self.n10,
            n00: self.n00,
        }
    }
}

/// Document-presence table for `x` and `y`; repeats within a document count once.
pub fn contingency(
    docs: &[TokenizedDocument],
    x: &str,
    y: &str,
) -> Result<ContingencyTable, CooccurError> {
    if x == y {
        return Err(CooccurError::InvalidPair(x.to_string()));
    }
    let mut t = ContingencyTable {
        n11: 0,
        n10: 0,
        n01: 0,
        n00: 0,
    };
    for doc in docs {
        let has_x = doc.tokens.iter().any(|t| t == x);
        let has_y = doc.tokens.iter().any(|t| t == y);
        match (has_x, has_y) {
            (true, true) => t.n11 += 1,
            (true, false) => t.n10 += 1,
            (false, true) => t.n01 += 1,
            (false, false) => t.n00 += 1,
        }
    }
    Ok(t)
}

/// `(n11 n00 - n10 n01) / sqrt(n1. n0. n.1 n.0)`.
pub fn phi(table: &ContingencyTable) -> Result<f64, CooccurError> {
    let margins = [table.row1(), table.row0(), table.col1(), table.col0()];
    if margins.contains(&0) {
        return Err(CooccurError::UndefinedCorrelation(*table));
    }
    let num = i128::from(table.n11) * i128::from(table.n00)
        - i128::from(table.n10) * i128::from(table.n01);
    // Rounding the exact integer product once keeps small tables exact.
    let product = margins
        .iter()
        .try_fold(1u128, |acc, &m| acc.checked_mul(u128::from(m)));
    let denom = match product {
        Some(p) => (p as f64).sqrt(),
        None => {
            ((margins[0] as f64) * (margins[1] as f64)).sqrt()
                * ((margins[2] as f64) * (margins[3] as f64)).sqrt()
        }
    };
    Ok((num as f64 / denom).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiEdge {
    pub source: String,
    pub target: String,
    pub phi: f64,
}

/// Undirected word graph. Edges are stored once with `source < target`, sorted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrelationGraph {
    pub nodes: Vec<String>,
    pub edges: Vec<PhiEdge>,
}

/// Per-document sets of vocabulary ids, the input to every pairwise scan.
struct PresenceIndex {
    vocab: Vocabulary,
    docs: Vec<Vec<usize>>,
}

impl PresenceIndex {
    fn new(docs: &[TokenizedDocument], min_doc_freq: usize) -> Self {
        let vocab = Vocabulary::from_counts(
            document_frequencies(docs)
                .into_iter()
                .filter(|&(_, df)| df >= min_doc_freq.max(1))
                .map(|(w, df)| (w.to_string(), df)),
            docs.len(),
        );
        let sets = docs
            .iter()
            .map(|d| {
                let mut ids = vocab.encode(&d.tokens);
                ids.sort_unstable();
                ids.dedup();
                ids
            })
            .collect();
        PresenceIndex { vocab, docs: sets }
    }

    fn table(&self, a: usize, b: usize, both: usize) -> ContingencyTable {
        ContingencyTable::from_frequencies(
            self.docs.len() as u64,
            self.vocab.doc_freq(a) as u64,
            self.vocab.doc_freq(b) as u64,
            both as u64,
        )
    }

    /// Joint document counts for every co-occurring pair `(a, b)` with `a < b`.
    fn joint_counts(&self) -> HashMap<(usize, usize), usize> {
        self.docs
            .par_iter()
            .fold(
                HashMap::new,
                |mut acc: HashMap<(usize, usize), usize>, ids| {
                    for (i, &a) in ids.iter().enumerate() {
                        for &b in &ids[i + 1..] {
                            *acc.entry((a, b)).or_insert(0) += 1;
                        }
                    }
                    acc
                },
            )
            .reduce(HashMap::new, |mut x, y| {
                for (k, v) in y {
                    *x.entry(k).or_insert(0) += v;
                }
                x
            })
    }
}

/// Phi graph over words with document frequency `>= vocab_min_doc_freq`, keeping edges
/// with `phi >= min_phi`. Pairs with an undefined phi are skipped.
pub fn correlation_graph(
    docs: &[TokenizedDocument],
    vocab_min_doc_freq: usize,
    min_phi: f64,
) -> Result<CorrelationGraph, CooccurError> {
    if !(min_phi > 0.0 && min_phi <= 1.0) {
        return Err(CooccurError::InvalidThreshold(min_phi));
    }
    let index = PresenceIndex::new(docs, vocab_min_doc_freq);
    // A pair that never co-occurs has n11 = 0 and so phi <= 0 < min_phi; only
    // co-occurring pairs need scoring.
    let mut edges: Vec<PhiEdge> = index
        .joint_counts()
        .into_iter()
        .filter_map(|((a, b), both)| {
            let p = phi(&index.table(a, b, both)).ok()?;
            (p >= min_phi).then(|| PhiEdge {
                source: index.vocab.word(a).to_string(),
                target: index.vocab.word(b).to_string(),
                phi: p,
            })
        })
        .collect();
    edges.sort_by(|x, y| (&x.source, &x.target).cmp(&(&y.source, &y.target)));
    Ok(CorrelationGraph {
        nodes: index.vocab.words().to_vec(),
        edges,
    })
}

/// For each seed, the `top_n` words by descending phi (ties lexicographic). Candidates
/// must reach `min_doc_freq`; seeds absent from the corpus map to an empty list.
pub fn medication_neighbors<S: AsRef<str>>(
    docs: &[TokenizedDocument],
    seeds: &[S],
    top_n: usize,
    min_doc_freq: usize,
) -> BTreeMap<String, Vec<(String, f64)>> {
    let index = PresenceIndex::new(docs, 1);
    let floor = min_doc_freq.max(1);
    let mut out = BTreeMap::new();
    for seed in seeds {
        let seed = seed.as_ref();
        let Some(s) = index.vocab.id(seed) else {
            out.insert(seed.to_string(), Vec::new());
            continue;
        };
        let mut joint = vec![0usize; index.vocab.len()];
        for ids in index
            .docs
            .iter()
            .filter(|ids| ids.binary_search(&s).is_ok())
        {
            for &w in ids {
                joint[w] += 1;
            }
        }
        let mut scored: Vec<(String, f64)> = (0..index.vocab.len())
            .filter(|&w| w != s && index.vocab.doc_freq(w) >= floor)
            .filter_map(|w| {
                let p = phi(&index.table(s, w, joint[w])).ok()?;
                Some((index.vocab.word(w).to_string(), p))
            })
            .collect();
        scored.sort_by(|x, y| {
            y.1.partial_cmp(&x.1)
                .unwrap_or(Ordering::Equal)
                .then_with(|| x.0.cmp(&y.0))
        });
        scored.truncate(top_n);
        out.insert(seed.to_string(), scored);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphFormat {
    Dot,
    EdgeCsv,
}

impl FromStr for GraphFormat {
    type Err = CooccurError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dot" => Ok(GraphFormat::Dot),
            "edge_csv" => Ok(GraphFormat::EdgeCsv),
            other => Err(CooccurError::UnknownFormat(other.to_string())),
        }
    }
}

fn dot_id(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

pub fn export_graph(graph: &CorrelationGraph, format: GraphFormat) -> String {
    match format {
        GraphFormat::Dot => {
            let mut out = String::from("graph G {\n");
            for node in &graph.nodes {
                let _ = writeln!(out, "  {};", dot_id(node));
            }
            for e in &graph.edges {
                let _ = writeln!(
                    out,
                    "  {} -- {} [weight={:.4}];",
                    dot_id(&e.source),
                    dot_id(&e.target),
                    e.phi
                );
            }
            out.push_str("}\n");
            out
        }
        GraphFormat::EdgeCsv => {
            let mut rows: Vec<&PhiEdge> = graph.edges.iter().collect();
            rows.sort_by(|x, y| (&x.source, &x.target).cmp(&(&y.source, &y.target)));
            let mut wtr = csv::Writer::from_writer(Vec::new());
            wtr.write_record(["source", "target", "phi"])
                .expect("in-memory write");
            for e in rows {
                wtr.write_record([
                    e.source.as_str(),
                    e.target.as_str(),
                    &format!("{:.4}", e.phi),
                ])
                .expect("in-memory write");
            }
            String::from_utf8(wtr.into_inner().expect("in-memory flush")).expect("utf-8 input")
        }
    }
}

pub fn parse_graph_format(s: &str) -> Result<GraphFormat, CooccurError> {
    s.parse()
}

/// Reads the `source,target,phi` CSV written by [`export_graph`].
pub fn parse_edge_csv(text: &str) -> Result<Vec<PhiEdge>, CooccurError> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| CooccurError::EdgeCsv(e.to_string()))?;
    if headers != vec!["source", "target", "phi"] {
        return Err(CooccurError::EdgeCsv(format!("bad header {headers:?}")));
    }
    rdr.records()
        .map(|r| {
            let r = r.map_err(|e| CooccurError::EdgeCsv(e.to_string()))?;
            let phi = r[2]
                .parse()
                .map_err(|_| CooccurError::EdgeCsv(format!("bad phi `{}`", &r[2])))?;
            Ok(PhiEdge {
                source: r[0].to_string(),
                target: r[1].to_string(),
                phi,
            })
        })
        .collect()
}

/// Edge pairs of a graph, for subset checks.
pub fn edge_pairs(graph: &CorrelationGraph) -> HashSet<(String, String)> {
    graph
        .edges
        .iter()
        .map(|e| (e.source.clone(), e.target.clone()))
        .collect()
}

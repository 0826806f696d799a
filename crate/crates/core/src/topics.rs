//! LDA via collapsed Gibbs sampling, keyword extraction, and topic-count
//! selection by mean pairwise Jensen-Shannon divergence between topics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::TokenizedDocument;
use crate::vocab::Vocabulary;

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_K_RANGE: (usize, usize) = (4, 11);

#[derive(Debug, Error, PartialEq)]
pub enum TopicError {
    #[error("topic count must be at least {min}, got {k}")]
    TooFewTopics { k: usize, min: usize },
    #[error("iterations ({iterations}) must exceed burn-in ({burn_in})")]
    BadSchedule { iterations: usize, burn_in: usize },
    #[error("prior `{name}` must be positive and finite, got {value}")]
    BadPrior { name: &'static str, value: f64 },
    #[error("corpus has no in-vocabulary tokens")]
    NoTokens,
    #[error("empty vocabulary")]
    EmptyVocabulary,
    #[error("invalid k range [{k_min}, {k_max}]")]
    BadRange { k_min: usize, k_max: usize },
    #[error("unsupported model format version {0}")]
    Version(u32),
    #[error("model json: {0}")]
    Json(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaParams {
    pub k: usize,
    /// Symmetric document-topic prior; `None` means `50 / k`.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl LdaParams {
    pub fn new(k: usize) -> Self {
        LdaParams {
            k,
            alpha: None,
            beta: 0.01,
            iterations: 1000,
            burn_in: 200,
            seed: 0,
        }
    }

    pub fn alpha_value(&self) -> f64 {
        self.alpha.unwrap_or(50.0 / self.k as f64)
    }

    fn validate(&self) -> Result<(), TopicError> {
        if self.k < 1 {
            return Err(TopicError::TooFewTopics { k: self.k, min: 1 });
        }
        if self.iterations <= self.burn_in {
            return Err(TopicError::BadSchedule {
                iterations: self.iterations,
                burn_in: self.burn_in,
            });
        }
        for (name, value) in [("alpha", self.alpha_value()), ("beta", self.beta)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(TopicError::BadPrior { name, value });
            }
        }
        Ok(())
    }
}

/// Count state of one collapsed Gibbs chain.
pub struct GibbsSampler {
    k: usize,
    v: usize,
    alpha: f64,
    beta: f64,
    docs: Vec<Vec<usize>>,
    assignments: Vec<Vec<usize>>,
    /// D x k, row-major.
    doc_topic: Vec<u32>,
    /// k x V, row-major.
    topic_word: Vec<u32>,
    topic_total: Vec<u32>,
    weights: Vec<f64>,
    rng: ChaCha8Rng,
}

impl GibbsSampler {
    /// Random initial assignment of every token.
    pub fn new(
        docs: Vec<Vec<usize>>,
        v: usize,
        k: usize,
        alpha: f64,
        beta: f64,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut doc_topic = vec![0u32; docs.len() * k];
        let mut topic_word = vec![0u32; k * v];
        let mut topic_total = vec![0u32; k];
        let assignments = docs
            .iter()
            .enumerate()
            .map(|(d, words)| {
                words
                    .iter()
                    .map(|&w| {
                        let t = rng.gen_range(0..k);
                        doc_topic[d * k + t] += 1;
                        topic_word[t * v + w] += 1;
                        topic_total[t] += 1;
                        t
                    })
                    .collect()
            })
            .collect();
        GibbsSampler {
            k,
            v,
            alpha,
            beta,
            docs,
            assignments,
            doc_topic,
            topic_word,
            topic_total,
            weights: vec![0.0; k],
            rng,
        }
    }

    /// One full pass resampling every token's topic from its collapsed conditional.
    pub fn sweep(&mut self) {
        let (k, v) = (self.k, self.v);
        let vbeta = v as f64 * self.beta;
        for d in 0..self.docs.len() {
            for i in 0..self.docs[d].len() {
                let w = self.docs[d][i];
                let old = self.assignments[d][i];
                self.doc_topic[d * k + old] -= 1;
                self.topic_word[old * v + w] -= 1;
                self.topic_total[old] -= 1;

                let mut total = 0.0;
                for t in 0..k {
                    let p = (f64::from(self.doc_topic[d * k + t]) + self.alpha)
                        * (f64::from(self.topic_word[t * v + w]) + self.beta)
                        / (f64::from(self.topic_total[t]) + vbeta);
                    total += p;
                    self.weights[t] = total;
                }
                let u = self.rng.gen::<f64>() * total;
                let new = self.weights.iter().position(|&c| u < c).unwrap_or(k - 1);

                self.assignments[d][i] = new;
                self.doc_topic[d * k + new] += 1;
                self.topic_word[new * v + w] += 1;
                self.topic_total[new] += 1;
            }
        }
    }

    pub fn total_tokens(&self) -> usize {
        self.docs.iter().map(Vec::len).sum()
    }

    pub fn topic_totals(&self) -> &[u32] {
        &self.topic_total
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.assignments
    }

    /// Recounts from the assignments and compares against the incremental tables.
    pub fn check_conservation(&self) -> Result<(), String> {
        let total: u64 = self.topic_total.iter().map(|&n| u64::from(n)).sum();
        if total as usize != self.total_tokens() {
            return Err(format!(
                "topic totals {total} != tokens {}",
                self.total_tokens()
            ));
        }
        let mut tw = vec![0u32; self.k * self.v];
        for (d, (words, zs)) in self.docs.iter().zip(&self.assignments).enumerate() {
            let row = &self.doc_topic[d * self.k..(d + 1) * self.k];
            let row_sum: u32 = row.iter().sum();
            if row_sum as usize != words.len() {
                return Err(format!(
                    "doc {d}: topic counts sum {row_sum} != length {}",
                    words.len()
                ));
            }
            let mut recount = vec![0u32; self.k];
            for (&w, &t) in words.iter().zip(zs) {
                recount[t] += 1;
                tw[t * self.v + w] += 1;
            }
            if recount != row {
                return Err(format!("doc {d}: topic counts disagree with assignments"));
            }
        }
        if tw != self.topic_word {
            return Err("topic-word counts disagree with assignments".into());
        }
        for t in 0..self.k {
            let row: u32 = self.topic_word[t * self.v..(t + 1) * self.v].iter().sum();
            if row != self.topic_total[t] {
                return Err(format!(
                    "topic {t}: word counts {row} != total {}",
                    self.topic_total[t]
                ));
            }
        }
        Ok(())
    }

    /// Smoothed point estimates from the current state: `(topic_word, doc_topic)`.
    pub fn estimate(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let vbeta = self.v as f64 * self.beta;
        let topic_word = (0..self.k)
            .map(|t| {
                let denom = f64::from(self.topic_total[t]) + vbeta;
                (0..self.v)
                    .map(|w| (f64::from(self.topic_word[t * self.v + w]) + self.beta) / denom)
                    .collect()
            })
            .collect();
        let kalpha = self.k as f64 * self.alpha;
        let doc_topic = self
            .docs
            .iter()
            .enumerate()
            .map(|(d, words)| {
                let denom = words.len() as f64 + kalpha;
                (0..self.k)
                    .map(|t| (f64::from(self.doc_topic[d * self.k + t]) + self.alpha) / denom)
                    .collect()
            })
            .collect();
        (topic_word, doc_topic)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    pub version: u32,
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub vocab: Vocabulary,
    pub doc_ids: Vec<String>,
    /// k rows over the vocabulary.
    pub topic_word: Vec<Vec<f64>>,
    /// One row of k topic probabilities per document.
    pub doc_topic: Vec<Vec<f64>>,
    /// Topic of each in-vocabulary token, per document.
    pub assignments: Vec<Vec<usize>>,
}

impl TopicModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model is serializable")
    }

    pub fn from_json(text: &str) -> Result<Self, TopicError> {
        let mut m: TopicModel =
            serde_json::from_str(text).map_err(|e| TopicError::Json(e.to_string()))?;
        if m.version != MODEL_FORMAT_VERSION {
            return Err(TopicError::Version(m.version));
        }
        m.vocab.reindex();
        Ok(m)
    }
}

pub fn fit_lda(
    docs: &[TokenizedDocument],
    vocab: &Vocabulary,
    params: &LdaParams,
) -> Result<TopicModel, TopicError> {
    fit_lda_observed(docs, vocab, params, |_, _| {})
}

/// As [`fit_lda`], calling `observe(sweep_index, sampler)` after every sweep.
pub fn fit_lda_observed<F>(
    docs: &[TokenizedDocument],
    vocab: &Vocabulary,
    params: &LdaParams,
    mut observe: F,
) -> Result<TopicModel, TopicError>
where
    F: FnMut(usize, &GibbsSampler),
{
    params.validate()?;
    if vocab.is_empty() {
        return Err(TopicError::EmptyVocabulary);
    }
    let encoded: Vec<Vec<usize>> = docs.iter().map(|d| vocab.encode(&d.tokens)).collect();
    if encoded.iter().all(Vec::is_empty) {
        return Err(TopicError::NoTokens);
    }
    let alpha = params.alpha_value();
    let mut sampler = GibbsSampler::new(
        encoded,
        vocab.len(),
        params.k,
        alpha,
        params.beta,
        params.seed,
    );
    for it in 0..params.iterations {
        sampler.sweep();
        observe(it, &sampler);
    }
    let (topic_word, doc_topic) = sampler.estimate();
    Ok(TopicModel {
        version: MODEL_FORMAT_VERSION,
        k: params.k,
        alpha,
        beta: params.beta,
        iterations: params.iterations,
        burn_in: params.burn_in,
        seed: params.seed,
        vocab: vocab.clone(),
        doc_ids: docs.iter().map(|d| d.doc_id.clone()).collect(),
        topic_word,
        doc_topic,
        assignments: sampler.assignments,
    })
}

/// The `n` most probable words of each topic, descending then lexicographic.
pub fn top_keywords(model: &TopicModel, n: usize) -> Vec<Vec<(String, f64)>> {
    model
        .topic_word
        .iter()
        .map(|row| {
            let mut ids: Vec<usize> = (0..row.len()).collect();
            ids.sort_by(|&a, &b| {
                row[b]
                    .total_cmp(&row[a])
                    .then_with(|| model.vocab.word(a).cmp(model.vocab.word(b)))
            });
            ids.into_iter()
                .take(n)
                .map(|w| (model.vocab.word(w).to_string(), row[w]))
                .collect()
        })
        .collect()
}

/// Jensen-Shannon divergence in bits.
pub fn jensen_shannon(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "distributions over different supports");
    let kl_half = |a: f64, m: f64| if a > 0.0 { a * (a / m).log2() } else { 0.0 };
    let mut js = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        js += 0.5 * kl_half(a, m) + 0.5 * kl_half(b, m);
    }
    js.clamp(0.0, 1.0)
}

/// Mean Jensen-Shannon divergence over all unordered topic pairs.
pub fn deveaud_score(model: &TopicModel) -> Result<f64, TopicError> {
    if model.k < 2 {
        return Err(TopicError::TooFewTopics { k: model.k, min: 2 });
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..model.k {
        for j in i + 1..model.k {
            sum += jensen_shannon(&model.topic_word[i], &model.topic_word[j]);
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KSelection {
    pub best_k: usize,
    /// `(k, score)` in increasing k.
    pub scores: Vec<(usize, f64)>,
}

/// Fits one model per k in `[k_min, k_max]` and returns the k with the largest
/// mean pairwise divergence; ties go to the smaller k. `base.k` is ignored.
pub fn select_k(
    docs: &[TokenizedDocument],
    vocab: &Vocabulary,
    k_min: usize,
    k_max: usize,
    base: &LdaParams,
) -> Result<KSelection, TopicError> {
    if k_min < 2 || k_max < k_min {
        return Err(TopicError::BadRange { k_min, k_max });
    }
    let scores = (k_min..=k_max)
        .into_par_iter()
        .map(|k| {
            let params = LdaParams { k, ..base.clone() };
            let model = fit_lda(docs, vocab, &params)?;
            Ok((k, deveaud_score(&model)?))
        })
        .collect::<Result<Vec<_>, TopicError>>()?;
    let mut best = scores[0];
    for &(k, s) in &scores[1..] {
        if s > best.1 {
            best = (k, s);
        }
    }
    Ok(KSelection {
        best_k: best.0,
        scores,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocInference {
    pub probs: Vec<f64>,
    pub in_vocab_tokens: usize,
}

/// Topic mixture of an unseen document, sampling its assignments against the
/// frozen topic-word distributions.
pub fn infer_doc<S: AsRef<str>>(
    model: &TopicModel,
    tokens: &[S],
    iterations: usize,
    seed: u64,
) -> DocInference {
    let k = model.k;
    let words = model.vocab.encode(tokens);
    if words.is_empty() {
        log::warn!("document has no in-vocabulary tokens; returning uniform topic mixture");
        return DocInference {
            probs: vec![1.0 / k as f64; k],
            in_vocab_tokens: 0,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0u32; k];
    let mut z: Vec<usize> = words
        .iter()
        .map(|_| {
            let t = rng.gen_range(0..k);
            counts[t] += 1;
            t
        })
        .collect();
    let mut cumulative = vec![0.0; k];
    for _ in 0..iterations.max(1) {
        for (i, &w) in words.iter().enumerate() {
            counts[z[i]] -= 1;
            let mut total = 0.0;
            for t in 0..k {
                total += (f64::from(counts[t]) + model.alpha) * model.topic_word[t][w];
                cumulative[t] = total;
            }
            let u = rng.gen::<f64>() * total;
            let t = cumulative.iter().position(|&c| u < c).unwrap_or(k - 1);
            z[i] = t;
            counts[t] += 1;
        }
    }
    let denom = words.len() as f64 + k as f64 * model.alpha;
    DocInference {
        probs: counts
            .iter()
            .map(|&c| (f64::from(c) + model.alpha) / denom)
            .collect(),
        in_vocab_tokens: words.len(),
    }
}

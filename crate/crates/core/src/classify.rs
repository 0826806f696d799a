//! Author classification: term features, linear models (logistic regression and a
//! Pegasos-trained linear SVM), cosine KNN, evaluation, and the two-stage cascade
//! that first separates OUD authors and then finds the recovering ones among them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::AuthorLabels;
use crate::preprocess::TokenizedDocument;
use crate::vocab::{build_vocab, Vocabulary};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ClassifyError {
    #[error("training set needs at least one example of each class")]
    SingleClass,
    #[error("class `{class}` has {count} member(s); at least 2 are needed to split")]
    ClassTooSmall { class: bool, count: usize },
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    BadFraction(f64),
    #[error("training diverged at epoch {epoch}: objective {value}")]
    Diverged { epoch: usize, value: f64 },
    #[error("invalid hyperparameter: {0}")]
    BadParam(String),
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("empty test set")]
    EmptyTestSet,
    #[error("author `{0}` is labeled oud in stage-1 training but has no recovering/non_recovering label")]
    MissingStage2Label(String),
    #[error("no labeled authors for stage {0}")]
    NoStageData(u8),
    #[error("vocabulary: {0}")]
    Vocabulary(String),
    #[error("unknown {kind} `{token}`")]
    UnknownToken { kind: &'static str, token: String },
    #[error("unsupported model format version {0}")]
    Version(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureScheme {
    Binary,
    Tf,
    Tfidf,
}

impl FromStr for FeatureScheme {
    type Err = ClassifyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "binary" => Ok(FeatureScheme::Binary),
            "tf" => Ok(FeatureScheme::Tf),
            "tfidf" => Ok(FeatureScheme::Tfidf),
            _ => Err(ClassifyError::UnknownToken {
                kind: "feature scheme",
                token: s.to_string(),
            }),
        }
    }
}

/// Sparse term vector, ids ascending.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub entries: Vec<(usize, f64)>,
    pub norm: f64,
}

impl FeatureVector {
    pub fn from_entries(mut entries: Vec<(usize, f64)>) -> Self {
        entries.sort_by_key(|e| e.0);
        let norm = entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
        FeatureVector { entries, norm }
    }

    pub fn dot(&self, other: &FeatureVector) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < self.entries.len() && j < other.entries.len() {
            let (a, b) = (self.entries[i], other.entries[j]);
            match a.0.cmp(&b.0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a.1 * b.1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    pub fn dot_dense(&self, w: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, x)| w[i] * x).sum()
    }
}

/// Maps each document to an L2-normalized term vector. tf-idf uses
/// `ln((1 + D) / (1 + df)) + 1` with `D` and `df` taken from the vocabulary.
pub fn featurize(
    docs: &[TokenizedDocument],
    vocab: &Vocabulary,
    scheme: FeatureScheme,
) -> Vec<FeatureVector> {
    docs.iter()
        .map(|d| featurize_tokens(&d.tokens, vocab, scheme))
        .collect()
}

pub fn featurize_tokens<S: AsRef<str>>(
    tokens: &[S],
    vocab: &Vocabulary,
    scheme: FeatureScheme,
) -> FeatureVector {
    let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
    for id in vocab.encode(tokens) {
        *counts.entry(id).or_insert(0.0) += 1.0;
    }
    let n_docs = vocab.num_docs as f64;
    let mut entries: Vec<(usize, f64)> = counts
        .into_iter()
        .map(|(id, tf)| {
            let w = match scheme {
                FeatureScheme::Binary => 1.0,
                FeatureScheme::Tf => tf,
                FeatureScheme::Tfidf => {
                    tf * (((1.0 + n_docs) / (1.0 + vocab.doc_freq(id) as f64)).ln() + 1.0)
                }
            };
            (id, w)
        })
        .collect();
    let norm = entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
    if norm > 0.0 {
        for e in &mut entries {
            e.1 /= norm;
        }
    }
    FeatureVector::from_entries(entries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub features: FeatureVector,
    pub label: bool,
}

fn sign(label: bool) -> f64 {
    if label {
        1.0
    } else {
        -1.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split: each class contributes `round(train_fraction * n_class)` members
/// (kept within `1..n_class`) to the training side. Indices are returned ascending.
pub fn split(labels: &[bool], train_fraction: f64, seed: u64) -> Result<Split, ClassifyError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(ClassifyError::BadFraction(train_fraction));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [false, true] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < 2 {
            return Err(ClassifyError::ClassTooSmall {
                class,
                count: members.len(),
            });
        }
        members.shuffle(&mut rng);
        let n_train =
            ((train_fraction * members.len() as f64).round() as usize).clamp(1, members.len() - 1);
        train.extend_from_slice(&members[..n_train]);
        test.extend_from_slice(&members[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Logreg,
    Svm,
    Knn,
}

impl ModelKind {
    pub const TABLE_ORDER: [ModelKind; 3] = [ModelKind::Logreg, ModelKind::Knn, ModelKind::Svm];

    /// Row label used in metric tables.
    pub fn row_label(self) -> &'static str {
        match self {
            ModelKind::Logreg => "LG",
            ModelKind::Knn => "KNN",
            ModelKind::Svm => "SVM",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Logreg => "logreg",
            ModelKind::Svm => "svm",
            ModelKind::Knn => "knn",
        })
    }
}

impl FromStr for ModelKind {
    type Err = ClassifyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logreg" => Ok(ModelKind::Logreg),
            "svm" => Ok(ModelKind::Svm),
            "knn" => Ok(ModelKind::Knn),
            _ => Err(ClassifyError::UnknownToken {
                kind: "model",
                token: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    pub l2: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Stop once the gradient norm drops below this.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            l2: 1e-3,
            epochs: 500,
            learning_rate: 1.0,
            tolerance: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            lambda: 1e-3,
            epochs: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub final_objective: f64,
    pub final_grad_norm: Option<f64>,
    /// Objective after each epoch.
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrainConfig {
    Logreg(LogRegConfig),
    Svm(SvmConfig),
}

/// Weights over the feature space followed by the bias term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub config: TrainConfig,
    pub report: TrainReport,
}

impl LinearModel {
    pub fn dim(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn bias(&self) -> f64 {
        self.weights[self.dim()]
    }

    pub fn decision(&self, x: &FeatureVector) -> f64 {
        score(&self.weights, x)
    }

    pub fn predict(&self, x: &FeatureVector) -> bool {
        self.decision(x) > 0.0
    }
}

fn score(w: &[f64], x: &FeatureVector) -> f64 {
    x.dot_dense(w) + w[w.len() - 1]
}

fn check_two_classes(train: &[Example]) -> Result<(), ClassifyError> {
    if train.is_empty() {
        return Err(ClassifyError::EmptyTrainingSet);
    }
    let pos = train.iter().filter(|e| e.label).count();
    if pos == 0 || pos == train.len() {
        return Err(ClassifyError::SingleClass);
    }
    Ok(())
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean logistic loss plus `(l2 / 2) * |w|^2` (bias unpenalized), and its gradient.
pub fn logistic_objective(weights: &[f64], data: &[Example], l2: f64) -> (f64, Vec<f64>) {
    let dim = weights.len() - 1;
    let n = data.len() as f64;
    let mut grad = vec![0.0; weights.len()];
    let mut loss = 0.0;
    for ex in data {
        let y = sign(ex.label);
        let margin = y * score(weights, &ex.features);
        loss += softplus(-margin);
        let g = -y * sigmoid(-margin) / n;
        for &(i, x) in &ex.features.entries {
            grad[i] += g * x;
        }
        grad[dim] += g;
    }
    loss /= n;
    let mut penalty = 0.0;
    for i in 0..dim {
        penalty += weights[i] * weights[i];
        grad[i] += l2 * weights[i];
    }
    (loss + 0.5 * l2 * penalty, grad)
}

/// Full-batch gradient descent on [`logistic_objective`].
pub fn train_logreg(
    train: &[Example],
    dim: usize,
    cfg: &LogRegConfig,
) -> Result<LinearModel, ClassifyError> {
    check_two_classes(train)?;
    if !(cfg.l2 >= 0.0 && cfg.learning_rate > 0.0 && cfg.epochs > 0) {
        return Err(ClassifyError::BadParam(format!("{cfg:?}")));
    }
    let mut w = vec![0.0; dim + 1];
    let mut trace = Vec::new();
    let (mut obj, mut grad) = logistic_objective(&w, train, cfg.l2);
    let mut grad_norm = l2_norm(&grad);
    let mut epochs_run = 0;
    for epoch in 1..=cfg.epochs {
        if grad_norm < cfg.tolerance {
            break;
        }
        for (wi, gi) in w.iter_mut().zip(&grad) {
            *wi -= cfg.learning_rate * gi;
        }
        (obj, grad) = logistic_objective(&w, train, cfg.l2);
        if !obj.is_finite() {
            return Err(ClassifyError::Diverged { epoch, value: obj });
        }
        grad_norm = l2_norm(&grad);
        trace.push(obj);
        epochs_run = epoch;
    }
    Ok(LinearModel {
        weights: w,
        config: TrainConfig::Logreg(cfg.clone()),
        report: TrainReport {
            epochs_run,
            final_objective: obj,
            final_grad_norm: Some(grad_norm),
            objective_trace: trace,
        },
    })
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `(lambda / 2) * |w|^2 + mean hinge loss`, with the bias treated as the weight of a
/// constant unit feature and penalized like the others.
pub fn svm_objective(weights: &[f64], data: &[Example], lambda: f64) -> f64 {
    let hinge: f64 = data
        .iter()
        .map(|ex| (1.0 - sign(ex.label) * score(weights, &ex.features)).max(0.0))
        .sum::<f64>()
        / data.len() as f64;
    0.5 * lambda * weights.iter().map(|w| w * w).sum::<f64>() + hinge
}

/// Pegasos stochastic subgradient descent with step `1 / (lambda t)` and projection
/// onto the ball of radius `1 / sqrt(lambda)`. Each epoch visits the examples in a
/// fresh seeded permutation. The returned weights average the end-of-epoch iterates
/// over the second half of training; the trace records that running average.
pub fn train_svm(
    train: &[Example],
    dim: usize,
    cfg: &SvmConfig,
) -> Result<LinearModel, ClassifyError> {
    check_two_classes(train)?;
    if !(cfg.lambda > 0.0 && cfg.lambda.is_finite() && cfg.epochs > 0) {
        return Err(ClassifyError::BadParam(format!("{cfg:?}")));
    }
    let lambda = cfg.lambda;
    let radius = 1.0 / lambda.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // w = scale * v, so the shrink step is O(1) and updates touch only nonzeros.
    let mut v = vec![0.0; dim + 1];
    let mut scale = 1.0;
    let mut sq_norm = 0.0; // |w|^2
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut t: u64 = 0;

    let mut avg = vec![0.0; dim + 1];
    let mut avg_count = 0usize;
    let avg_start = cfg.epochs / 2;
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let ex = &train[i];
            let y = sign(ex.label);
            let margin = y * scale * (ex.features.dot_dense(&v) + v[dim]);

            let shrink = 1.0 - eta * lambda;
            if shrink <= 0.0 {
                v.iter_mut().for_each(|x| *x = 0.0);
                scale = 1.0;
                sq_norm = 0.0;
            } else {
                scale *= shrink;
                sq_norm *= shrink * shrink;
            }
            if margin < 1.0 {
                let step = eta * y / scale;
                for &(j, x) in ex
                    .features
                    .entries
                    .iter()
                    .chain(std::iter::once(&(dim, 1.0)))
                {
                    let old = v[j];
                    v[j] += step * x;
                    sq_norm += scale * scale * (v[j] * v[j] - old * old);
                }
            }
            let norm = sq_norm.max(0.0).sqrt();
            if norm > radius {
                scale *= radius / norm;
                sq_norm = radius * radius;
            }
            if scale < 1e-100 {
                v.iter_mut().for_each(|x| *x *= scale);
                scale = 1.0;
            }
        }
        if !scale.is_finite() || v.iter().any(|x| !x.is_finite()) {
            return Err(ClassifyError::Diverged {
                epoch: epoch + 1,
                value: f64::NAN,
            });
        }
        if epoch >= avg_start {
            avg_count += 1;
            let inv = 1.0 / avg_count as f64;
            for (a, x) in avg.iter_mut().zip(&v) {
                *a += (scale * x - *a) * inv;
            }
            trace.push(svm_objective(&avg, train, lambda));
        } else {
            let w: Vec<f64> = v.iter().map(|x| scale * x).collect();
            trace.push(svm_objective(&w, train, lambda));
        }
    }
    let final_objective = *trace.last().expect("epochs > 0");
    Ok(LinearModel {
        weights: avg,
        config: TrainConfig::Svm(cfg.clone()),
        report: TrainReport {
            epochs_run: cfg.epochs,
            final_objective,
            final_grad_norm: None,
            objective_trace: trace,
        },
    })
}

/// `1 - cos(a, b)`; a zero vector is at distance 1 from everything.
pub fn cosine_distance(a: &FeatureVector, b: &FeatureVector) -> f64 {
    if a.norm == 0.0 || b.norm == 0.0 {
        return 1.0;
    }
    1.0 - a.dot(b) / (a.norm * b.norm)
}

/// Majority label of the `k` nearest training examples by cosine distance (ties in
/// distance by training order). A tied vote goes to the single nearest neighbor.
pub fn knn_predict(
    train: &[Example],
    query: &FeatureVector,
    k: usize,
) -> Result<bool, ClassifyError> {
    if train.is_empty() {
        return Err(ClassifyError::EmptyTrainingSet);
    }
    if k == 0 || k > train.len() {
        return Err(ClassifyError::BadParam(format!(
            "k = {k} with {} training examples",
            train.len()
        )));
    }
    let mut dist: Vec<(f64, usize)> = train
        .iter()
        .enumerate()
        .map(|(i, ex)| (cosine_distance(&ex.features, query), i))
        .collect();
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let pos = dist[..k].iter().filter(|&&(_, i)| train[i].label).count();
    Ok(match (2 * pos).cmp(&k) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => train[dist[0].1].label,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub train: Vec<Example>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Classifier {
    Logreg(LinearModel),
    Svm(LinearModel),
    Knn(KnnModel),
}

impl Classifier {
    pub fn kind(&self) -> ModelKind {
        match self {
            Classifier::Logreg(_) => ModelKind::Logreg,
            Classifier::Svm(_) => ModelKind::Svm,
            Classifier::Knn(_) => ModelKind::Knn,
        }
    }

    pub fn predict(&self, x: &FeatureVector) -> bool {
        match self {
            Classifier::Logreg(m) | Classifier::Svm(m) => m.predict(x),
            Classifier::Knn(m) => {
                knn_predict(&m.train, x, m.k.min(m.train.len())).expect("validated at training")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub logreg: LogRegConfig,
    pub svm: SvmConfig,
    pub knn_k: usize,
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        ModelSpec {
            kind,
            logreg: LogRegConfig::default(),
            svm: SvmConfig::default(),
            knn_k: 5,
        }
    }
}

pub fn train_classifier(
    train: &[Example],
    dim: usize,
    spec: &ModelSpec,
) -> Result<Classifier, ClassifyError> {
    Ok(match spec.kind {
        ModelKind::Logreg => Classifier::Logreg(train_logreg(train, dim, &spec.logreg)?),
        ModelKind::Svm => Classifier::Svm(train_svm(train, dim, &spec.svm)?),
        ModelKind::Knn => {
            check_two_classes(train)?;
            if spec.knn_k == 0 {
                return Err(ClassifyError::BadParam("knn k must be at least 1".into()));
            }
            Classifier::Knn(KnnModel {
                k: spec.knn_k.min(train.len()),
                train: train.to_vec(),
            })
        }
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
    /// Set when `tp + fp = 0`; precision is then reported as 0.
    pub precision_undefined: bool,
    /// Set when `tp + fn = 0`; recall is then reported as 0.
    pub recall_undefined: bool,
}

impl Metrics {
    pub fn from_confusion(c: Confusion) -> Self {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Metrics {
            accuracy: ratio(c.tp + c.tn, c.total()),
            precision,
            recall,
            f1,
            confusion: c,
            precision_undefined: c.tp + c.fp == 0,
            recall_undefined: c.tp + c.fn_ == 0,
        }
    }
}

/// Confusion counts with `true` as the positive class.
pub fn confusion(predicted: &[bool], truth: &[bool]) -> Confusion {
    assert_eq!(predicted.len(), truth.len());
    let mut c = Confusion::default();
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

pub fn evaluate(model: &Classifier, test: &[Example]) -> Result<Metrics, ClassifyError> {
    if test.is_empty() {
        return Err(ClassifyError::EmptyTestSet);
    }
    let predicted: Vec<bool> = test.iter().map(|ex| model.predict(&ex.features)).collect();
    let truth: Vec<bool> = test.iter().map(|ex| ex.label).collect();
    Ok(Metrics::from_confusion(confusion(&predicted, &truth)))
}

pub fn fmt4(x: f64) -> String {
    format!("{x:.4}")
}

/// `model,acc,rec,prec,f1` rows.
pub fn metrics_csv(rows: &[(ModelKind, Metrics)]) -> String {
    let mut out = String::from("model,acc,rec,prec,f1\n");
    for (kind, m) in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            kind.row_label(),
            fmt4(m.accuracy),
            fmt4(m.recall),
            fmt4(m.precision),
            fmt4(m.f1)
        ));
    }
    out
}

/// Two-block table: OUD classifier metrics then recovering classifier metrics per row.
pub fn cascade_metrics_csv(rows: &[(ModelKind, Metrics, Metrics)]) -> String {
    let mut out = String::from(
        "model,oud_acc,oud_rec,oud_prec,oud_f1,recovering_acc,recovering_rec,recovering_prec,recovering_f1\n",
    );
    for (kind, a, b) in rows {
        let cells: Vec<String> = [a, b]
            .iter()
            .flat_map(|m| [m.accuracy, m.recall, m.precision, m.f1])
            .map(fmt4)
            .collect();
        out.push_str(&format!("{},{}\n", kind.row_label(), cells.join(",")));
    }
    out
}

/// Feature space plus classifier, the on-disk model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub version: u32,
    pub scheme: FeatureScheme,
    pub vocab: Vocabulary,
    pub classifier: Classifier,
}

impl SavedModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model is serializable")
    }

    pub fn from_json(text: &str) -> Result<Self, ClassifyError> {
        let mut m: SavedModel = serde_json::from_str(text)
            .map_err(|e| ClassifyError::BadParam(format!("model json: {e}")))?;
        if m.version != MODEL_FORMAT_VERSION {
            return Err(ClassifyError::Version(m.version));
        }
        m.vocab.reindex();
        Ok(m)
    }

    pub fn predict_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> bool {
        self.classifier
            .predict(&featurize_tokens(tokens, &self.vocab, self.scheme))
    }
}

/// Concatenates each author's documents, in order, into one instance.
pub fn concat_by_author(docs: &[TokenizedDocument]) -> BTreeMap<String, TokenizedDocument> {
    let mut out: BTreeMap<String, TokenizedDocument> = BTreeMap::new();
    for d in docs {
        out.entry(d.author.clone())
            .or_insert_with(|| {
                TokenizedDocument::new(d.author.clone(), d.author.clone(), Vec::new())
            })
            .tokens
            .extend(d.tokens.iter().cloned());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub scheme: FeatureScheme,
    pub min_doc_freq: usize,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            scheme: FeatureScheme::Binary,
            min_doc_freq: 2,
            train_fraction: 0.7,
            seed: 0,
        }
    }
}

/// A trained stage with its held-out evaluation.
#[derive(Debug, Clone)]
pub struct TrainedStage {
    pub model: SavedModel,
    pub metrics: Metrics,
    pub train_authors: Vec<String>,
    pub test_authors: Vec<String>,
}

/// Splits the labeled instances, builds the vocabulary on the training side only,
/// trains, and evaluates on the held-out side.
pub fn train_stage(
    instances: &[(&TokenizedDocument, bool)],
    spec: &ModelSpec,
    cfg: &StageConfig,
) -> Result<TrainedStage, ClassifyError> {
    let labels: Vec<bool> = instances.iter().map(|(_, l)| *l).collect();
    let parts = split(&labels, cfg.train_fraction, cfg.seed)?;
    let train_docs: Vec<TokenizedDocument> = parts
        .train
        .iter()
        .map(|&i| instances[i].0.clone())
        .collect();
    let vocab = build_vocab(&train_docs, cfg.min_doc_freq)
        .map_err(|e| ClassifyError::Vocabulary(e.to_string()))?;
    let to_examples = |idx: &[usize]| -> Vec<Example> {
        idx.iter()
            .map(|&i| Example {
                features: featurize_tokens(&instances[i].0.tokens, &vocab, cfg.scheme),
                label: instances[i].1,
            })
            .collect()
    };
    let train = to_examples(&parts.train);
    let test = to_examples(&parts.test);
    let classifier = train_classifier(&train, vocab.len(), spec)?;
    let metrics = evaluate(&classifier, &test)?;
    Ok(TrainedStage {
        model: SavedModel {
            version: MODEL_FORMAT_VERSION,
            scheme: cfg.scheme,
            vocab,
            classifier,
        },
        metrics,
        train_authors: parts
            .train
            .iter()
            .map(|&i| instances[i].0.author.clone())
            .collect(),
        test_authors: parts
            .test
            .iter()
            .map(|&i| instances[i].0.author.clone())
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cohort {
    NonOud,
    OudNonRecovering,
    OudRecovering,
}

impl Cohort {
    pub fn as_str(self) -> &'static str {
        match self {
            Cohort::NonOud => "non_oud",
            Cohort::OudNonRecovering => "oud_non_recovering",
            Cohort::OudRecovering => "oud_recovering",
        }
    }
}

pub type CohortAssignment = BTreeMap<String, Cohort>;

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeConfig {
    pub stage1: ModelSpec,
    pub stage2: ModelSpec,
    pub stage: StageConfig,
}

#[derive(Debug, Clone)]
pub struct CascadeResult {
    pub assignment: CohortAssignment,
    pub stage1: TrainedStage,
    pub stage2: TrainedStage,
}

/// Trains the OUD classifier on authors with an oud/non_oud label and the
/// recovering classifier on authors labeled oud with a recovering/non_recovering
/// label, then routes every author through both: authors predicted non-OUD never
/// reach the second stage.
pub fn cascade(
    authors: &BTreeMap<String, TokenizedDocument>,
    labels: &BTreeMap<String, AuthorLabels>,
    config: &CascadeConfig,
) -> Result<CascadeResult, ClassifyError> {
    let stage1_data: Vec<(&TokenizedDocument, bool)> = authors
        .iter()
        .filter_map(|(a, d)| labels.get(a).and_then(|l| l.oud).map(|y| (d, y)))
        .collect();
    if stage1_data.is_empty() {
        return Err(ClassifyError::NoStageData(1));
    }
    let stage1 = train_stage(&stage1_data, &config.stage1, &config.stage)?;

    for author in &stage1.train_authors {
        let l = labels[author];
        if l.oud == Some(true) && l.recovering.is_none() {
            return Err(ClassifyError::MissingStage2Label(author.clone()));
        }
    }
    let stage2_data: Vec<(&TokenizedDocument, bool)> = authors
        .iter()
        .filter_map(|(a, d)| {
            let l = labels.get(a)?;
            (l.oud == Some(true)).then_some(())?;
            l.recovering.map(|y| (d, y))
        })
        .collect();
    if stage2_data.is_empty() {
        return Err(ClassifyError::NoStageData(2));
    }
    let stage2_cfg = StageConfig {
        seed: config.stage.seed.wrapping_add(1),
        ..config.stage.clone()
    };
    let stage2 = train_stage(&stage2_data, &config.stage2, &stage2_cfg)?;

    let assignment = authors
        .iter()
        .map(|(a, d)| {
            let cohort = if !stage1.model.predict_tokens(&d.tokens) {
                Cohort::NonOud
            } else if stage2.model.predict_tokens(&d.tokens) {
                Cohort::OudRecovering
            } else {
                Cohort::OudNonRecovering
            };
            (a.clone(), cohort)
        })
        .collect();
    Ok(CascadeResult {
        assignment,
        stage1,
        stage2,
    })
}

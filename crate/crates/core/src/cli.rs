//! Batch command-line front end.
//!
//! Every subcommand resolves its settings as defaults, then the `--config` file,
//! then explicit flags. All inputs are read and all artifacts computed before the
//! output directory is touched, so a failing run leaves nothing behind.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::classify::{
    self, cascade, cascade_metrics_csv, concat_by_author, confusion, metrics_csv, train_stage,
    CascadeConfig, FeatureScheme, Metrics, ModelKind, ModelSpec, SavedModel, StageConfig,
};
use crate::cooccur::{
    correlation_graph, count_bigrams, export_graph, filter_bigrams, medication_neighbors,
    GraphFormat,
};
use crate::corpus::{
    fetch_subreddit, load_labels, merge_labels, parse_corpus, serialize_corpus, AuthorLabels,
    Corpus, FetchConfig, LabelMap, ReqwestTransport, MAX_LISTING_POSTS,
};
use crate::emotion::{
    cohort_dominant_stats, document_counts, emotion_word_frequencies, load_lexicon, user_profiles,
    EmotionProfile, Lexicon,
};
use crate::preprocess::{
    default_stopwords, normalize, parse_word_list, preprocess_corpus, PreprocessConfig,
    TokenizedDocument,
};
use crate::relapse::{
    breakdown_csv, cohort_breakdown, label_authors, load_events, render_breakdown,
    DEFAULT_WINDOW_DAYS, SECONDS_PER_DAY,
};
use crate::topics::{fit_lda, select_k, top_keywords, LdaParams, DEFAULT_K_RANGE};
use crate::vocab::build_vocab;

// ---------------------------------------------------------------------------
// Configuration file

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: InputSection,
    pub output: OutputSection,
    pub preprocess: PreprocessSection,
    pub fetch: FetchSection,
    pub cooccur: CooccurSection,
    pub emotions: EmotionSection,
    pub topics: TopicSection,
    pub classify: ClassifySection,
    pub relapse: RelapseSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputSection {
    pub corpus: Vec<PathBuf>,
    pub labels: Vec<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub events: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSection {
    pub stopwords: Option<PathBuf>,
    pub lowercase: bool,
    pub stem: bool,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        PreprocessSection {
            stopwords: None,
            lowercase: true,
            stem: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FetchSection {
    pub base_url: String,
    pub subreddit: Option<String>,
    pub max_posts: usize,
    pub requests_per_minute: u32,
    pub user_agent: Option<String>,
}

impl Default for FetchSection {
    fn default() -> Self {
        FetchSection {
            base_url: "https://www.reddit.com".to_string(),
            subreddit: None,
            max_posts: MAX_LISTING_POSTS,
            requests_per_minute: 60,
            user_agent: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CooccurSection {
    pub min_count: usize,
    pub min_phi: f64,
    pub min_doc_freq: usize,
    pub seeds: Vec<String>,
    pub top_n: usize,
    pub format: String,
}

impl Default for CooccurSection {
    fn default() -> Self {
        CooccurSection {
            min_count: 150,
            min_phi: 0.2,
            min_doc_freq: 5,
            seeds: Vec::new(),
            top_n: 6,
            format: "edge_csv".to_string(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmotionSection {
    pub per_user: bool,
    pub top_n: usize,
    pub window_days: Option<u32>,
}

impl Default for EmotionSection {
    fn default() -> Self {
        EmotionSection {
            per_user: false,
            top_n: 10,
            window_days: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopicSection {
    pub k: usize,
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub min_doc_freq: usize,
    pub top_n: usize,
    pub k_min: usize,
    pub k_max: usize,
}

impl Default for TopicSection {
    fn default() -> Self {
        let p = LdaParams::new(8);
        TopicSection {
            k: p.k,
            alpha: p.alpha,
            beta: p.beta,
            iterations: p.iterations,
            burn_in: p.burn_in,
            seed: p.seed,
            min_doc_freq: 2,
            top_n: 8,
            k_min: DEFAULT_K_RANGE.0,
            k_max: DEFAULT_K_RANGE.1,
        }
    }
}

impl TopicSection {
    fn params(&self, k: usize) -> LdaParams {
        LdaParams {
            k,
            alpha: self.alpha,
            beta: self.beta,
            iterations: self.iterations,
            burn_in: self.burn_in,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifySection {
    pub model: String,
    pub scheme: String,
    pub train_fraction: f64,
    pub seed: u64,
    pub min_doc_freq: usize,
    pub knn_k: usize,
    pub logreg_l2: f64,
    pub logreg_epochs: usize,
    pub logreg_learning_rate: f64,
    pub svm_lambda: f64,
    pub svm_epochs: usize,
    pub stage1: String,
    pub stage2: String,
}

impl Default for ClassifySection {
    fn default() -> Self {
        let spec = ModelSpec::new(ModelKind::Svm);
        let stage = StageConfig::default();
        ClassifySection {
            model: "svm".to_string(),
            scheme: "binary".to_string(),
            train_fraction: stage.train_fraction,
            seed: stage.seed,
            min_doc_freq: stage.min_doc_freq,
            knn_k: spec.knn_k,
            logreg_l2: spec.logreg.l2,
            logreg_epochs: spec.logreg.epochs,
            logreg_learning_rate: spec.logreg.learning_rate,
            svm_lambda: spec.svm.lambda,
            svm_epochs: spec.svm.epochs,
            stage1: "svm".to_string(),
            stage2: "svm".to_string(),
        }
    }
}

impl ClassifySection {
    fn spec(&self, kind: ModelKind) -> ModelSpec {
        let mut spec = ModelSpec::new(kind);
        spec.knn_k = self.knn_k;
        spec.logreg.l2 = self.logreg_l2;
        spec.logreg.epochs = self.logreg_epochs;
        spec.logreg.learning_rate = self.logreg_learning_rate;
        spec.logreg.seed = self.seed;
        spec.svm.lambda = self.svm_lambda;
        spec.svm.epochs = self.svm_epochs;
        spec.svm.seed = self.seed;
        spec
    }

    fn stage(&self) -> Result<StageConfig> {
        ensure!(
            self.train_fraction > 0.0 && self.train_fraction < 1.0,
            "train fraction must be in (0, 1), got {}",
            self.train_fraction
        );
        Ok(StageConfig {
            scheme: self.scheme.parse::<FeatureScheme>()?,
            min_doc_freq: self.min_doc_freq,
            train_fraction: self.train_fraction,
            seed: self.seed,
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelapseSection {
    pub window_days: u32,
}

impl Default for RelapseSection {
    fn default() -> Self {
        RelapseSection {
            window_days: DEFAULT_WINDOW_DAYS,
        }
    }
}

impl PipelineConfig {
    /// Parses a TOML config; relative paths are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: PipelineConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.input.corpus.iter_mut().for_each(rebase);
        cfg.input.labels.iter_mut().for_each(rebase);
        cfg.input.lexicon.iter_mut().for_each(rebase);
        cfg.input.events.iter_mut().for_each(rebase);
        cfg.output.dir.iter_mut().for_each(rebase);
        cfg.preprocess.stopwords.iter_mut().for_each(rebase);
        Ok(cfg)
    }
}

// ---------------------------------------------------------------------------
// Command line

#[derive(Debug, Parser)]
#[command(
    name = "oudlens",
    version,
    about = "Text mining for opioid-use community corpora"
)]
#[command(arg_required_else_help = true)]
pub struct Cli {
    /// TOML pipeline config; explicit flags take precedence over it.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate and merge corpus and label files.
    Ingest(IngestArgs),
    /// Download the newest posts of a subreddit.
    Fetch(FetchArgs),
    /// Tokenize and normalize a corpus.
    Preprocess(PreprocessArgs),
    /// Bigram counts, phi correlation graph, and medication neighbors.
    Cooccur(CooccurArgs),
    /// Lexicon emotion profiles.
    Emotions(EmotionArgs),
    /// LDA topic models.
    #[command(subcommand)]
    Topics(TopicsCommand),
    /// Train one classifier stage with a held-out split.
    Train(TrainArgs),
    /// Score saved models against labeled authors.
    Evaluate(EvaluateArgs),
    /// Two-stage OUD then recovering classification.
    Cascade(CascadeArgs),
    /// Relapse labels and cohort percentages.
    Relapse(RelapseArgs),
    /// Run the whole pipeline from a config file.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Corpus file (newline-delimited JSON); repeatable.
    #[arg(long = "corpus", value_name = "PATH")]
    corpus: Vec<PathBuf>,
    /// Labels CSV (`author,label`); repeatable.
    #[arg(long = "labels", value_name = "PATH")]
    labels: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct TextArgs {
    /// Stopword list, one word per line.
    #[arg(long, value_name = "PATH")]
    stopwords: Option<PathBuf>,
    #[arg(long)]
    no_stem: bool,
    #[arg(long)]
    keep_case: bool,
}

#[derive(Debug, Args)]
struct OutArgs {
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct FetchArgs {
    #[arg(long)]
    subreddit: Option<String>,
    #[arg(long, value_name = "URL")]
    base_url: Option<String>,
    #[arg(long)]
    max_posts: Option<usize>,
    #[arg(long)]
    requests_per_minute: Option<u32>,
    #[arg(long)]
    user_agent: Option<String>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    text: TextArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct CooccurArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    text: TextArgs,
    /// Minimum bigram count.
    #[arg(long)]
    min_count: Option<usize>,
    /// Minimum phi for correlation edges.
    #[arg(long)]
    min_phi: Option<f64>,
    /// Document-frequency floor for the phi scan.
    #[arg(long)]
    min_doc_freq: Option<usize>,
    /// Seed words for neighbor lists, comma separated.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<String>>,
    #[arg(long)]
    top_n: Option<usize>,
    /// `dot` or `edge_csv`.
    #[arg(long)]
    format: Option<String>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct EmotionArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    text: TextArgs,
    /// Word-emotion lexicon TSV.
    #[arg(long, value_name = "PATH")]
    lexicon: Option<PathBuf>,
    /// One row per author instead of per post.
    #[arg(long)]
    per_user: bool,
    #[arg(long)]
    top_n: Option<usize>,
    /// Only use each author's posts from this many days before their latest post.
    #[arg(long)]
    window_days: Option<u32>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Subcommand)]
enum TopicsCommand {
    /// Fit one model.
    Fit(TopicFitArgs),
    /// Pick the topic count by mean pairwise topic divergence.
    Select(TopicSelectArgs),
}

#[derive(Debug, Args)]
struct TopicParamArgs {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    min_doc_freq: Option<usize>,
}

#[derive(Debug, Args)]
struct TopicFitArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    text: TextArgs,
    #[arg(long)]
    k: Option<usize>,
    #[command(flatten)]
    params: TopicParamArgs,
    /// Keywords per topic.
    #[arg(long)]
    top_n: Option<usize>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct TopicSelectArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    text: TextArgs,
    #[arg(long)]
    k_min: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    #[command(flatten)]
    params: TopicParamArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Stage {
    Oud,
    Recovering,
}

#[derive(Debug, Args)]
struct ClassifierArgs {
    /// `binary`, `tf` or `tfidf`.
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    train_frac: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    min_doc_freq: Option<usize>,
    #[arg(long)]
    knn_k: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    text: TextArgs,
    /// `logreg`, `svm` or `knn`.
    #[arg(long)]
    model: Option<String>,
    /// Which label axis to learn.
    #[arg(long, value_enum, default_value = "oud")]
    stage: Stage,
    #[command(flatten)]
    classifier: ClassifierArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Csv,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    text: TextArgs,
    /// Saved model JSON; repeatable, one metrics row each.
    #[arg(long = "model-file", value_name = "PATH", required = true)]
    model_files: Vec<PathBuf>,
    /// Split file written by `train`; only its test authors are scored.
    #[arg(long, value_name = "PATH")]
    split: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "oud")]
    stage: Stage,
    #[arg(long, value_enum, default_value = "csv")]
    report: ReportFormat,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct CascadeArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    text: TextArgs,
    /// OUD classifier: `logreg`, `svm` or `knn`.
    #[arg(long)]
    stage1: Option<String>,
    /// Recovering classifier: `logreg`, `svm` or `knn`.
    #[arg(long)]
    stage2: Option<String>,
    #[command(flatten)]
    classifier: ClassifierArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct RelapseArgs {
    /// Labels CSV; repeatable.
    #[arg(long = "labels", value_name = "PATH")]
    labels: Vec<PathBuf>,
    /// Events CSV (`author,timestamp,kind`).
    #[arg(long, value_name = "PATH")]
    events: Option<PathBuf>,
    #[arg(long)]
    window_days: Option<u32>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[command(flatten)]
    out: OutArgs,
}

/// Parses `args` (program name first) and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    match cli.command {
        Command::Ingest(a) => {
            apply_input(&mut cfg, &a.input);
            apply_out(&mut cfg, &a.out);
            ingest(&cfg)
        }
        Command::Fetch(a) => {
            let f = &mut cfg.fetch;
            set(&mut f.subreddit, a.subreddit.map(Some));
            set(&mut f.base_url, a.base_url);
            set(&mut f.max_posts, a.max_posts);
            set(&mut f.requests_per_minute, a.requests_per_minute);
            set(&mut f.user_agent, a.user_agent.map(Some));
            apply_out(&mut cfg, &a.out);
            fetch(&cfg)
        }
        Command::Preprocess(a) => {
            apply_input(&mut cfg, &a.input);
            apply_text(&mut cfg, &a.text);
            apply_out(&mut cfg, &a.out);
            preprocess(&cfg)
        }
        Command::Cooccur(a) => {
            apply_input(&mut cfg, &a.input);
            apply_text(&mut cfg, &a.text);
            apply_out(&mut cfg, &a.out);
            let c = &mut cfg.cooccur;
            set(&mut c.min_count, a.min_count);
            set(&mut c.min_phi, a.min_phi);
            set(&mut c.min_doc_freq, a.min_doc_freq);
            set(&mut c.seeds, a.seeds);
            set(&mut c.top_n, a.top_n);
            set(&mut c.format, a.format);
            cooccur(&cfg)
        }
        Command::Emotions(a) => {
            apply_input(&mut cfg, &a.input);
            apply_text(&mut cfg, &a.text);
            apply_out(&mut cfg, &a.out);
            set(&mut cfg.input.lexicon, a.lexicon.map(Some));
            let e = &mut cfg.emotions;
            e.per_user |= a.per_user;
            set(&mut e.top_n, a.top_n);
            set(&mut e.window_days, a.window_days.map(Some));
            emotions(&cfg)
        }
        Command::Topics(TopicsCommand::Fit(a)) => {
            apply_input(&mut cfg, &a.input);
            apply_text(&mut cfg, &a.text);
            apply_out(&mut cfg, &a.out);
            apply_topic_params(&mut cfg, &a.params);
            set(&mut cfg.topics.k, a.k);
            set(&mut cfg.topics.top_n, a.top_n);
            topics_fit(&cfg)
        }
        Command::Topics(TopicsCommand::Select(a)) => {
            apply_input(&mut cfg, &a.input);
            apply_text(&mut cfg, &a.text);
            apply_out(&mut cfg, &a.out);
            apply_topic_params(&mut cfg, &a.params);
            set(&mut cfg.topics.k_min, a.k_min);
            set(&mut cfg.topics.k_max, a.k_max);
            topics_select(&cfg)
        }
        Command::Train(a) => {
            apply_input(&mut cfg, &a.input);
            apply_text(&mut cfg, &a.text);
            apply_out(&mut cfg, &a.out);
            apply_classifier(&mut cfg, &a.classifier);
            set(&mut cfg.classify.model, a.model);
            train(&cfg, a.stage)
        }
        Command::Evaluate(a) => {
            apply_input(&mut cfg, &a.input);
            apply_text(&mut cfg, &a.text);
            apply_out(&mut cfg, &a.out);
            let ReportFormat::Csv = a.report;
            evaluate(&cfg, &a.model_files, a.split.as_deref(), a.stage)
        }
        Command::Cascade(a) => {
            apply_input(&mut cfg, &a.input);
            apply_text(&mut cfg, &a.text);
            apply_out(&mut cfg, &a.out);
            apply_classifier(&mut cfg, &a.classifier);
            set(&mut cfg.classify.stage1, a.stage1);
            set(&mut cfg.classify.stage2, a.stage2);
            run_cascade(&cfg)
        }
        Command::Relapse(a) => {
            if !a.labels.is_empty() {
                cfg.input.labels = a.labels;
            }
            set(&mut cfg.input.events, a.events.map(Some));
            set(&mut cfg.relapse.window_days, a.window_days);
            apply_out(&mut cfg, &a.out);
            relapse(&cfg)
        }
        Command::Report(a) => {
            ensure!(cli.config.is_some(), "report needs --config");
            apply_out(&mut cfg, &a.out);
            report(&cfg)
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn apply_input(cfg: &mut PipelineConfig, a: &InputArgs) {
    if !a.corpus.is_empty() {
        cfg.input.corpus = a.corpus.clone();
    }
    if !a.labels.is_empty() {
        cfg.input.labels = a.labels.clone();
    }
}

fn apply_text(cfg: &mut PipelineConfig, a: &TextArgs) {
    set(&mut cfg.preprocess.stopwords, a.stopwords.clone().map(Some));
    cfg.preprocess.stem &= !a.no_stem;
    cfg.preprocess.lowercase &= !a.keep_case;
}

fn apply_out(cfg: &mut PipelineConfig, a: &OutArgs) {
    set(&mut cfg.output.dir, a.out.clone().map(Some));
}

fn apply_topic_params(cfg: &mut PipelineConfig, a: &TopicParamArgs) {
    let t = &mut cfg.topics;
    set(&mut t.alpha, a.alpha.map(Some));
    set(&mut t.beta, a.beta);
    set(&mut t.iterations, a.iters);
    set(&mut t.burn_in, a.burn_in);
    set(&mut t.seed, a.seed);
    set(&mut t.min_doc_freq, a.min_doc_freq);
}

fn apply_classifier(cfg: &mut PipelineConfig, a: &ClassifierArgs) {
    let c = &mut cfg.classify;
    set(&mut c.scheme, a.scheme.clone());
    set(&mut c.train_fraction, a.train_frac);
    set(&mut c.seed, a.seed);
    set(&mut c.min_doc_freq, a.min_doc_freq);
    set(&mut c.knn_k, a.knn_k);
}

// ---------------------------------------------------------------------------
// Loading and writing

type Artifacts = Vec<(&'static str, String)>;

fn out_dir(cfg: &PipelineConfig) -> Result<&Path> {
    cfg.output
        .dir
        .as_deref()
        .context("no output directory: pass --out or set `dir` under [output]")
}

fn write_artifacts(dir: &Path, artifacts: &Artifacts) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (name, text) in artifacts {
        let path = dir.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn load_corpus(cfg: &PipelineConfig) -> Result<Corpus> {
    ensure!(
        !cfg.input.corpus.is_empty(),
        "no corpus: pass --corpus or set `corpus` under [input]"
    );
    let mut merged = Corpus::new();
    for path in &cfg.input.corpus {
        let part = parse_corpus(open(path)?).with_context(|| format!("in {}", path.display()))?;
        for post in part.posts() {
            merged
                .push(post.clone())
                .with_context(|| format!("in {}", path.display()))?;
        }
    }
    Ok(merged)
}

fn load_label_maps(cfg: &PipelineConfig) -> Result<Vec<LabelMap>> {
    cfg.input
        .labels
        .iter()
        .map(|p| load_labels(open(p)?).with_context(|| format!("in {}", p.display())))
        .collect()
}

fn load_merged_labels(cfg: &PipelineConfig) -> Result<BTreeMap<String, AuthorLabels>> {
    ensure!(
        !cfg.input.labels.is_empty(),
        "no labels: pass --labels or set `labels` under [input]"
    );
    Ok(merge_labels(&load_label_maps(cfg)?)?)
}

fn preprocess_config(cfg: &PipelineConfig) -> Result<PreprocessConfig> {
    let p = &cfg.preprocess;
    let words = match &p.stopwords {
        Some(path) => {
            parse_word_list(open(path)?).with_context(|| format!("reading {}", path.display()))?
        }
        None => default_stopwords(),
    };
    Ok(PreprocessConfig::new(p.lowercase, true, p.stem).with_stopwords(words))
}

fn load_docs(cfg: &PipelineConfig) -> Result<(Corpus, Vec<TokenizedDocument>)> {
    let corpus = load_corpus(cfg)?;
    let pre = preprocess_config(cfg)?;
    let docs = preprocess_corpus(&corpus, &pre);
    Ok((corpus, docs))
}

/// Lexicon with member words passed through the corpus normalization, so that
/// stemmed, lowercased tokens match.
fn load_normalized_lexicon(cfg: &PipelineConfig) -> Result<Lexicon> {
    let path = cfg
        .input
        .lexicon
        .as_deref()
        .context("no lexicon: pass --lexicon or set `lexicon` under [input]")?;
    let raw = load_lexicon(open(path)?).with_context(|| format!("in {}", path.display()))?;
    let pre = preprocess_config(cfg)?;
    Ok(raw.map_words(|w| normalize(&[w], &pre).into_iter().next()))
}

fn f4(x: f64) -> String {
    format!("{x:.4}")
}

// ---------------------------------------------------------------------------
// Subcommands

fn ingest(cfg: &PipelineConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let corpus = load_corpus(cfg)?;
    let labels = if cfg.input.labels.is_empty() {
        BTreeMap::new()
    } else {
        load_merged_labels(cfg)?
    };
    let by_author = corpus.by_author();
    let mut authors = String::from("author,posts,oud,recovering,relapsed\n");
    let names: BTreeSet<&str> = by_author
        .keys()
        .copied()
        .chain(labels.keys().map(String::as_str))
        .collect();
    let cell = |v: Option<bool>| v.map_or(String::new(), |b| b.to_string());
    for name in names {
        let l = labels.get(name).copied().unwrap_or_default();
        let _ = writeln!(
            authors,
            "{name},{},{},{},{}",
            by_author.get(name).map_or(0, Vec::len),
            cell(l.oud),
            cell(l.recovering),
            cell(l.relapsed)
        );
    }
    write_artifacts(
        dir,
        &vec![
            ("corpus.jsonl", serialize_corpus(&corpus)),
            ("authors.csv", authors),
        ],
    )?;
    println!(
        "{} posts from {} authors, {} labeled",
        corpus.len(),
        by_author.len(),
        labels.len()
    );
    Ok(())
}

fn fetch(cfg: &PipelineConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let f = &cfg.fetch;
    let subreddit = f
        .subreddit
        .clone()
        .context("no subreddit: pass --subreddit or set `subreddit` under [fetch]")?;
    let mut fc = FetchConfig::new(f.base_url.clone(), subreddit);
    fc.max_posts = f.max_posts;
    fc.requests_per_minute = f.requests_per_minute;
    if let Some(ua) = &f.user_agent {
        fc.user_agent = ua.clone();
    }
    fc.validate()?;
    let posts = fetch_subreddit(&fc, &ReqwestTransport::new()?)?;
    let corpus = Corpus::from_posts(posts)?;
    write_artifacts(dir, &vec![("corpus.jsonl", serialize_corpus(&corpus))])?;
    println!("fetched {} posts", corpus.len());
    Ok(())
}

fn preprocess(cfg: &PipelineConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let (_, docs) = load_docs(cfg)?;
    let mut text = String::new();
    for d in &docs {
        text.push_str(&serde_json::to_string(d)?);
        text.push('\n');
    }
    write_artifacts(dir, &vec![("tokens.jsonl", text)])
}

fn cooccur_artifacts(
    cfg: &PipelineConfig,
    docs: &[TokenizedDocument],
    formats: &[GraphFormat],
) -> Result<Artifacts> {
    let c = &cfg.cooccur;
    ensure!(c.min_count >= 1, "min count must be at least 1");
    ensure!(c.top_n >= 1, "top-n must be at least 1");
    let graph = correlation_graph(docs, c.min_doc_freq, c.min_phi)?;
    let mut out = Artifacts::new();

    let mut bigrams = String::from("first,second,count\n");
    for e in filter_bigrams(&count_bigrams(docs), c.min_count) {
        let _ = writeln!(bigrams, "{},{},{}", e.first, e.second, e.count);
    }
    out.push(("bigrams.csv", bigrams));
    for &format in formats {
        let name = match format {
            GraphFormat::Dot => "graph.dot",
            GraphFormat::EdgeCsv => "phi_edges.csv",
        };
        out.push((name, export_graph(&graph, format)));
    }
    if !c.seeds.is_empty() {
        let pre = preprocess_config(cfg)?;
        let seeds: Vec<String> = c
            .seeds
            .iter()
            .filter_map(|s| normalize(&[s.as_str()], &pre).into_iter().next())
            .collect();
        let mut text = String::from("seed,rank,word,phi\n");
        for (seed, words) in medication_neighbors(docs, &seeds, c.top_n, c.min_doc_freq) {
            for (rank, (w, p)) in words.iter().enumerate() {
                let _ = writeln!(text, "{seed},{},{w},{}", rank + 1, f4(*p));
            }
        }
        out.push(("neighbors.csv", text));
    }
    Ok(out)
}

fn cooccur(cfg: &PipelineConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let format: GraphFormat = cfg.cooccur.format.parse()?;
    let (_, docs) = load_docs(cfg)?;
    let artifacts = cooccur_artifacts(cfg, &docs, &[format])?;
    write_artifacts(dir, &artifacts)
}

/// Drops each author's posts older than `days` before that author's latest post.
fn window_docs(
    corpus: &Corpus,
    docs: Vec<TokenizedDocument>,
    days: Option<u32>,
) -> Vec<TokenizedDocument> {
    let Some(days) = days else { return docs };
    let mut latest: BTreeMap<&str, i64> = BTreeMap::new();
    for p in corpus.posts() {
        let t = latest.entry(p.author.as_str()).or_insert(p.created_utc);
        *t = (*t).max(p.created_utc);
    }
    corpus
        .posts()
        .iter()
        .zip(docs)
        .filter(|(p, _)| {
            p.created_utc >= latest[p.author.as_str()] - i64::from(days) * SECONDS_PER_DAY
        })
        .map(|(_, d)| d)
        .collect()
}

fn profile_row(out: &mut String, key: &str, p: &EmotionProfile, lex: &Lexicon) {
    out.push_str(key);
    out.push(',');
    out.push_str(&p.dominant);
    for e in lex.emotions() {
        out.push(',');
        out.push_str(&f4(p.normalized[e]));
    }
    out.push('\n');
}

fn emotion_artifacts(
    cfg: &PipelineConfig,
    corpus: &Corpus,
    docs: Vec<TokenizedDocument>,
) -> Result<Artifacts> {
    let e = &cfg.emotions;
    let lex = load_normalized_lexicon(cfg)?;
    ensure!(!lex.emotions().is_empty(), "lexicon defines no emotions");
    let docs = window_docs(corpus, docs, e.window_days);
    let columns = lex.emotions().join(",");
    let mut out = Artifacts::new();

    if e.per_user {
        let mut users: BTreeMap<String, Vec<TokenizedDocument>> = BTreeMap::new();
        for d in &docs {
            users.entry(d.author.clone()).or_default().push(d.clone());
        }
        let mut table = format!("author,dominant,{columns}\n");
        for (author, p) in user_profiles(&users, &lex) {
            profile_row(&mut table, &author, &p, &lex);
        }
        out.push(("emotions.csv", table));
        let mut cohort = String::from("emotion,fraction\n");
        for (emotion, frac) in cohort_dominant_stats(&users, &lex)? {
            let _ = writeln!(cohort, "{emotion},{}", f4(frac));
        }
        out.push(("emotion_cohort.csv", cohort));
    } else {
        let mut table = format!("author,doc_id,dominant,{columns}\n");
        for d in &docs {
            let p = EmotionProfile::from_counts(document_counts(d, &lex));
            profile_row(&mut table, &format!("{},{}", d.author, d.doc_id), &p, &lex);
        }
        out.push(("emotions.csv", table));
    }

    let mut words = String::from("emotion,rank,word,count\n");
    let freq = emotion_word_frequencies(&docs, &lex, e.top_n);
    for emotion in lex.emotions() {
        for (rank, (w, n)) in freq[emotion].iter().enumerate() {
            let _ = writeln!(words, "{emotion},{},{w},{n}", rank + 1);
        }
    }
    out.push(("emotion_words.csv", words));
    Ok(out)
}

fn emotions(cfg: &PipelineConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let (corpus, docs) = load_docs(cfg)?;
    let artifacts = emotion_artifacts(cfg, &corpus, docs)?;
    write_artifacts(dir, &artifacts)
}

fn topic_artifacts(cfg: &PipelineConfig, docs: &[TokenizedDocument]) -> Result<Artifacts> {
    let t = &cfg.topics;
    ensure!(t.top_n >= 1, "top-n must be at least 1");
    let vocab = build_vocab(docs, t.min_doc_freq)?;
    let model = fit_lda(docs, &vocab, &t.params(t.k))?;
    let mut csv = String::from("topic,rank,word,probability\n");
    for (topic, words) in top_keywords(&model, t.top_n.min(vocab.len()))
        .iter()
        .enumerate()
    {
        for (rank, (w, p)) in words.iter().enumerate() {
            let _ = writeln!(csv, "{topic},{},{w},{p:.6}", rank + 1);
        }
    }
    Ok(vec![
        ("topic_model.json", model.to_json()),
        ("topics.csv", csv),
    ])
}

fn topics_fit(cfg: &PipelineConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let (_, docs) = load_docs(cfg)?;
    let artifacts = topic_artifacts(cfg, &docs)?;
    write_artifacts(dir, &artifacts)
}

fn topics_select(cfg: &PipelineConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let t = &cfg.topics;
    let (_, docs) = load_docs(cfg)?;
    let vocab = build_vocab(&docs, t.min_doc_freq)?;
    let sel = select_k(&docs, &vocab, t.k_min, t.k_max, &t.params(t.k_min))?;
    let mut csv = String::from("k,score,selected\n");
    for (k, s) in &sel.scores {
        let _ = writeln!(csv, "{k},{s:.6},{}", u8::from(*k == sel.best_k));
    }
    write_artifacts(dir, &vec![("k_scores.csv", csv)])?;
    println!("best k = {}", sel.best_k);
    Ok(())
}

fn stage_instances<'a>(
    authors: &'a BTreeMap<String, TokenizedDocument>,
    labels: &BTreeMap<String, AuthorLabels>,
    stage: Stage,
) -> Vec<(&'a TokenizedDocument, bool)> {
    authors
        .iter()
        .filter_map(|(a, d)| {
            let l = labels.get(a)?;
            let y = match stage {
                Stage::Oud => l.oud?,
                Stage::Recovering => {
                    (l.oud == Some(true)).then_some(())?;
                    l.recovering?
                }
            };
            Some((d, y))
        })
        .collect()
}

fn train(cfg: &PipelineConfig, stage: Stage) -> Result<()> {
    let dir = out_dir(cfg)?;
    let c = &cfg.classify;
    let kind: ModelKind = c.model.parse()?;
    let stage_cfg = c.stage()?;
    let labels = load_merged_labels(cfg)?;
    let (_, docs) = load_docs(cfg)?;
    let authors = concat_by_author(&docs);
    let instances = stage_instances(&authors, &labels, stage);
    ensure!(!instances.is_empty(), "no labeled authors for this stage");
    let trained = train_stage(&instances, &c.spec(kind), &stage_cfg)?;

    let label_of: BTreeMap<&str, bool> = instances
        .iter()
        .map(|(d, y)| (d.author.as_str(), *y))
        .collect();
    let mut split = String::from("author,set,label\n");
    let mut rows: Vec<(&str, &str)> = trained
        .train_authors
        .iter()
        .map(|a| (a.as_str(), "train"))
        .collect();
    rows.extend(trained.test_authors.iter().map(|a| (a.as_str(), "test")));
    rows.sort();
    for (a, set) in rows {
        let _ = writeln!(split, "{a},{set},{}", label_of[a]);
    }
    write_artifacts(
        dir,
        &vec![
            ("model.json", trained.model.to_json()),
            ("split.csv", split),
            ("metrics.csv", metrics_csv(&[(kind, trained.metrics)])),
        ],
    )
}

fn test_authors(path: &Path) -> Result<BTreeSet<String>> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let mut out = BTreeSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("{} row {}", path.display(), i + 2))?;
        ensure!(
            rec.len() == 3,
            "{} row {}: expected author,set,label",
            path.display(),
            i + 2
        );
        if &rec[1] == "test" {
            out.insert(rec[0].to_string());
        }
    }
    Ok(out)
}

fn evaluate(
    cfg: &PipelineConfig,
    model_files: &[PathBuf],
    split: Option<&Path>,
    stage: Stage,
) -> Result<()> {
    let dir = out_dir(cfg)?;
    let models = model_files
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            SavedModel::from_json(&text).with_context(|| format!("in {}", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let keep = split.map(test_authors).transpose()?;
    let labels = load_merged_labels(cfg)?;
    let (_, docs) = load_docs(cfg)?;
    let authors = concat_by_author(&docs);
    let instances: Vec<_> = stage_instances(&authors, &labels, stage)
        .into_iter()
        .filter(|(d, _)| keep.as_ref().is_none_or(|k| k.contains(&d.author)))
        .collect();
    ensure!(!instances.is_empty(), "no labeled authors to evaluate");

    let truth: Vec<bool> = instances.iter().map(|(_, y)| *y).collect();
    let mut rows: Vec<(ModelKind, Metrics)> = models
        .iter()
        .map(|m| {
            let predicted: Vec<bool> = instances
                .iter()
                .map(|(d, _)| m.predict_tokens(&d.tokens))
                .collect();
            (
                m.classifier.kind(),
                Metrics::from_confusion(confusion(&predicted, &truth)),
            )
        })
        .collect();
    rows.sort_by_key(|(k, _)| ModelKind::TABLE_ORDER.iter().position(|t| t == k));
    write_artifacts(dir, &vec![("metrics.csv", metrics_csv(&rows))])
}

fn cascade_config(
    c: &ClassifySection,
    stage1: ModelKind,
    stage2: ModelKind,
) -> Result<CascadeConfig> {
    Ok(CascadeConfig {
        stage1: c.spec(stage1),
        stage2: c.spec(stage2),
        stage: c.stage()?,
    })
}

fn run_cascade(cfg: &PipelineConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let c = &cfg.classify;
    let (k1, k2): (ModelKind, ModelKind) = (c.stage1.parse()?, c.stage2.parse()?);
    let cascade_cfg = cascade_config(c, k1, k2)?;
    let labels = load_merged_labels(cfg)?;
    let (_, docs) = load_docs(cfg)?;
    let result = cascade(&concat_by_author(&docs), &labels, &cascade_cfg)?;

    let mut cohorts = String::from("author,cohort\n");
    for (a, cohort) in &result.assignment {
        let _ = writeln!(cohorts, "{a},{}", cohort.as_str());
    }
    let mut metrics = String::from("stage,model,acc,rec,prec,f1\n");
    for (stage, kind, m) in [
        ("oud", k1, &result.stage1.metrics),
        ("recovering", k2, &result.stage2.metrics),
    ] {
        let _ = writeln!(
            metrics,
            "{stage},{},{},{},{},{}",
            kind.row_label(),
            classify::fmt4(m.accuracy),
            classify::fmt4(m.recall),
            classify::fmt4(m.precision),
            classify::fmt4(m.f1)
        );
    }
    write_artifacts(
        dir,
        &vec![
            ("cohorts.csv", cohorts),
            ("metrics.csv", metrics),
            ("stage1_model.json", result.stage1.model.to_json()),
            ("stage2_model.json", result.stage2.model.to_json()),
        ],
    )
}

/// Merged labels plus relapse labels derived from the events file, if any.
fn relapse_labels(
    cfg: &PipelineConfig,
) -> Result<(BTreeMap<String, AuthorLabels>, Option<LabelMap>)> {
    let mut maps = load_label_maps(cfg)?;
    let merged = merge_labels(&maps)?;
    let Some(path) = &cfg.input.events else {
        return Ok((merged, None));
    };
    let events = load_events(open(path)?).with_context(|| format!("in {}", path.display()))?;
    let recovering: Vec<&str> = if merged.values().any(|l| l.recovering.is_some()) {
        merged
            .iter()
            .filter(|(_, l)| l.recovering == Some(true))
            .map(|(a, _)| a.as_str())
            .collect()
    } else {
        events
            .iter()
            .map(|e| e.author.as_str())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    };
    let derived = label_authors(&events, recovering, cfg.relapse.window_days)?;
    maps.push(derived.clone());
    Ok((merge_labels(&maps)?, Some(derived)))
}

fn cohort_artifacts(cfg: &PipelineConfig) -> Result<Artifacts> {
    let (labels, derived) = relapse_labels(cfg)?;
    let b = cohort_breakdown(&labels)?;
    let mut out = vec![
        ("cohort.txt", render_breakdown(&b)),
        ("cohort.csv", breakdown_csv(&b)),
    ];
    if let Some(derived) = derived {
        let mut text = String::from("author,label\n");
        for (a, l) in &derived {
            let _ = writeln!(text, "{a},{l}");
        }
        out.push(("relapse_labels.csv", text));
    }
    Ok(out)
}

fn relapse(cfg: &PipelineConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    ensure!(
        !cfg.input.labels.is_empty() || cfg.input.events.is_some(),
        "nothing to label: pass --labels and/or --events"
    );
    let artifacts = cohort_artifacts(cfg)?;
    write_artifacts(dir, &artifacts)
}

fn report(cfg: &PipelineConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let labels = load_merged_labels(cfg)?;
    let (corpus, docs) = load_docs(cfg)?;
    let mut artifacts = Artifacts::new();

    artifacts.extend(cooccur_artifacts(
        cfg,
        &docs,
        &[GraphFormat::EdgeCsv, GraphFormat::Dot],
    )?);
    let mut per_user = cfg.clone();
    per_user.emotions.per_user = true;
    artifacts.extend(emotion_artifacts(&per_user, &corpus, docs.clone())?);
    artifacts.extend(topic_artifacts(cfg, &docs)?);

    let authors = concat_by_author(&docs);
    let mut rows = Vec::new();
    for kind in ModelKind::TABLE_ORDER {
        let result = cascade(
            &authors,
            &labels,
            &cascade_config(&cfg.classify, kind, kind)?,
        )?;
        rows.push((kind, result.stage1.metrics, result.stage2.metrics));
    }
    artifacts.push(("metrics.csv", cascade_metrics_csv(&rows)));
    artifacts.extend(cohort_artifacts(cfg)?);
    write_artifacts(dir, &artifacts)
}

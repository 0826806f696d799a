//! Posts, corpora and author labels: the record types every other stage
//! consumes, their flat-file formats, and a paginated listing client.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound on posts returned for one listing; mirrors the public API ceiling.
pub const MAX_LISTING_POSTS: usize = 1000;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate post id `{0}`")]
    DuplicateId(String),
    #[error("invalid post `{id}`: {message}")]
    InvalidPost { id: String, message: String },
    #[error("labels row {row}: unknown label `{token}`")]
    UnknownLabel { row: usize, token: String },
    #[error("author `{author}` has conflicting labels `{first}` and `{second}`")]
    ConflictingLabel {
        author: String,
        first: Label,
        second: Label,
    },
    #[error("labels row {row}: {message}")]
    LabelFormat { row: usize, message: String },
    #[error("invalid fetch config: {0}")]
    InvalidConfig(String),
    #[error("HTTP status {status} from {url}")]
    HttpStatus { status: u16, url: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("listing schema mismatch at `{field}`: {message}")]
    Schema { field: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CorpusError {
    /// Whether repeating the request later may succeed.
    pub fn is_retryable(&self) -> bool {
        match self {
            CorpusError::HttpStatus { status, .. } => {
                *status == 429 || *status == 408 || (500..600).contains(status)
            }
            CorpusError::Transport(_) => true,
            _ => false,
        }
    }
}

/// One post or comment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub id: String,
    pub author: String,
    pub subreddit: String,
    pub created_utc: i64,
    pub parent_id: Option<String>,
    pub title: Option<String>,
    pub body: String,
}

impl Post {
    /// Text used for analysis: title and body joined by a newline.
    pub fn text(&self) -> String {
        match &self.title {
            Some(title) if !title.is_empty() => format!("{}\n{}", title, self.body),
            _ => self.body.clone(),
        }
    }

    fn validate(&self) -> Result<(), CorpusError> {
        if self.id.is_empty() {
            return Err(CorpusError::InvalidPost {
                id: String::new(),
                message: "empty id".into(),
            });
        }
        if self.created_utc < 0 {
            return Err(CorpusError::InvalidPost {
                id: self.id.clone(),
                message: format!("negative created_utc {}", self.created_utc),
            });
        }
        Ok(())
    }
}

// Every field is required on the wire, including the optional ones (as null).
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PostRecord {
    id: String,
    author: String,
    subreddit: String,
    created_utc: i64,
    #[serde(deserialize_with = "required_option")]
    parent_id: Option<String>,
    #[serde(deserialize_with = "required_option")]
    title: Option<String>,
    body: String,
}

fn required_option<'de, D>(de: D) -> Result<Option<String>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    Option::<String>::deserialize(de)
}

impl From<PostRecord> for Post {
    fn from(r: PostRecord) -> Self {
        Post {
            id: r.id,
            author: r.author,
            subreddit: r.subreddit,
            created_utc: r.created_utc,
            parent_id: r.parent_id,
            title: r.title,
            body: r.body,
        }
    }
}

/// An ordered, id-unique collection of posts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    posts: Vec<Post>,
    ids: HashSet<String>,
    pub source_tags: Vec<String>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_posts(posts: impl IntoIterator<Item = Post>) -> Result<Self, CorpusError> {
        let mut corpus = Corpus::new();
        for post in posts {
            corpus.push(post)?;
        }
        Ok(corpus)
    }

    /// Appends a post, rejecting duplicate ids.
    pub fn push(&mut self, post: Post) -> Result<(), CorpusError> {
        post.validate()?;
        if !self.ids.insert(post.id.clone()) {
            return Err(CorpusError::DuplicateId(post.id));
        }
        if !self.source_tags.contains(&post.subreddit) {
            self.source_tags.push(post.subreddit.clone());
        }
        self.posts.push(post);
        Ok(())
    }

    pub fn posts(&self) -> &[Post] {
        &self.posts
    }

    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Post> {
        self.posts.iter()
    }

    /// Posts grouped by author, authors in lexicographic order, posts in corpus order.
    pub fn by_author(&self) -> BTreeMap<&str, Vec<&Post>> {
        let mut out: BTreeMap<&str, Vec<&Post>> = BTreeMap::new();
        for post in &self.posts {
            out.entry(post.author.as_str()).or_default().push(post);
        }
        out
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a Post;
    type IntoIter = std::slice::Iter<'a, Post>;

    fn into_iter(self) -> Self::IntoIter {
        self.posts.iter()
    }
}

/// Reads newline-delimited JSON posts. Blank lines are skipped; line numbers are 1-based.
pub fn parse_corpus<R: BufRead>(reader: R) -> Result<Corpus, CorpusError> {
    let mut corpus = Corpus::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: PostRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let post = Post::from(record);
        post.validate().map_err(|e| CorpusError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        corpus.push(post)?;
    }
    Ok(corpus)
}

/// Writes the corpus in the format read by [`parse_corpus`].
pub fn write_corpus<W: Write>(corpus: &Corpus, mut writer: W) -> Result<(), CorpusError> {
    for post in corpus {
        serde_json::to_writer(&mut writer, post).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn serialize_corpus(corpus: &Corpus) -> String {
    let mut buf = Vec::new();
    write_corpus(corpus, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// Annotation assigned to an author. Each labels file carries one axis of the taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Oud,
    NonOud,
    Recovering,
    NonRecovering,
    Relapsed,
    Clean,
}

impl Label {
    pub const ALL: [Label; 6] = [
        Label::Oud,
        Label::NonOud,
        Label::Recovering,
        Label::NonRecovering,
        Label::Relapsed,
        Label::Clean,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Oud => "oud",
            Label::NonOud => "non_oud",
            Label::Recovering => "recovering",
            Label::NonRecovering => "non_recovering",
            Label::Relapsed => "relapsed",
            Label::Clean => "clean",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Label::ALL
            .iter()
            .copied()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UserLabel {
    pub label: Label,
}

pub type LabelMap = BTreeMap<String, Label>;

/// Reads an `author,label` CSV. Repeating an identical row is tolerated; a second,
/// different label for the same author is a conflict.
pub fn load_labels<R: std::io::Read>(reader: R) -> Result<LabelMap, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| CorpusError::LabelFormat {
        row: 1,
        message: e.to_string(),
    })?;
    if headers.len() != 2 || &headers[0] != "author" || &headers[1] != "label" {
        return Err(CorpusError::LabelFormat {
            row: 1,
            message: format!(
                "expected header `author,label`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut out = LabelMap::new();
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 2;
        let record = record.map_err(|e| CorpusError::LabelFormat {
            row,
            message: e.to_string(),
        })?;
        let author = record[0].to_string();
        if author.is_empty() {
            return Err(CorpusError::LabelFormat {
                row,
                message: "empty author".into(),
            });
        }
        let label: Label = record[1]
            .parse()
            .map_err(|token| CorpusError::UnknownLabel { row, token })?;
        match out.get(&author) {
            Some(&prev) if prev != label => {
                return Err(CorpusError::ConflictingLabel {
                    author,
                    first: prev,
                    second: label,
                })
            }
            Some(_) => {}
            None => {
                out.insert(author, label);
            }
        }
    }
    Ok(out)
}

pub fn write_labels<W: Write>(labels: &LabelMap, writer: W) -> Result<(), CorpusError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["author", "label"]).map_err(csv_io)?;
    for (author, label) in labels {
        wtr.write_record([author.as_str(), label.as_str()])
            .map_err(csv_io)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Every label axis known for one author, merged from one or more label files.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorLabels {
    pub oud: Option<bool>,
    pub recovering: Option<bool>,
    pub relapsed: Option<bool>,
}

impl AuthorLabels {
    fn set(&mut self, author: &str, label: Label) -> Result<(), CorpusError> {
        let (slot, value) = match label {
            Label::Oud => (&mut self.oud, true),
            Label::NonOud => (&mut self.oud, false),
            Label::Recovering => (&mut self.recovering, true),
            Label::NonRecovering => (&mut self.recovering, false),
            Label::Relapsed => (&mut self.relapsed, true),
            Label::Clean => (&mut self.relapsed, false),
        };
        match *slot {
            Some(prev) if prev != value => Err(CorpusError::ConflictingLabel {
                author: author.to_string(),
                first: label_for(label, prev),
                second: label,
            }),
            _ => {
                *slot = Some(value);
                Ok(())
            }
        }
    }
}

fn label_for(axis: Label, value: bool) -> Label {
    match (axis, value) {
        (Label::Oud | Label::NonOud, true) => Label::Oud,
        (Label::Oud | Label::NonOud, false) => Label::NonOud,
        (Label::Recovering | Label::NonRecovering, true) => Label::Recovering,
        (Label::Recovering | Label::NonRecovering, false) => Label::NonRecovering,
        (_, true) => Label::Relapsed,
        (_, false) => Label::Clean,
    }
}

/// Merges label files, one axis each. A `recovering`/`non_recovering` label implies
/// `oud`; consistency of the relapse axis is checked by the cohort breakdown.
pub fn merge_labels(maps: &[LabelMap]) -> Result<BTreeMap<String, AuthorLabels>, CorpusError> {
    let mut out: BTreeMap<String, AuthorLabels> = BTreeMap::new();
    for map in maps {
        for (author, &label) in map {
            let entry = out.entry(author.clone()).or_default();
            entry.set(author, label)?;
            if matches!(label, Label::Recovering | Label::NonRecovering) {
                entry.set(author, Label::Oud)?;
            }
        }
    }
    Ok(out)
}

fn csv_io(e: csv::Error) -> CorpusError {
    CorpusError::Io(std::io::Error::other(e))
}

// ---------------------------------------------------------------------------
// Listing client

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchConfig {
    pub base_url: String,
    pub subreddit: String,
    pub max_posts: usize,
    pub requests_per_minute: u32,
    pub user_agent: String,
}

impl FetchConfig {
    pub fn new(base_url: impl Into<String>, subreddit: impl Into<String>) -> Self {
        FetchConfig {
            base_url: base_url.into(),
            subreddit: subreddit.into(),
            max_posts: MAX_LISTING_POSTS,
            requests_per_minute: 60,
            user_agent: concat!("oudlens/", env!("CARGO_PKG_VERSION")).to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.max_posts == 0 || self.max_posts > MAX_LISTING_POSTS {
            return Err(CorpusError::InvalidConfig(format!(
                "max_posts must be in 1..={MAX_LISTING_POSTS}, got {}",
                self.max_posts
            )));
        }
        if self.requests_per_minute == 0 {
            return Err(CorpusError::InvalidConfig(
                "requests_per_minute must be positive".into(),
            ));
        }
        if self.subreddit.is_empty() {
            return Err(CorpusError::InvalidConfig("empty subreddit".into()));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(CorpusError::InvalidConfig(format!(
                "base_url must be http(s): `{}`",
                self.base_url
            )));
        }
        Ok(())
    }

    fn min_interval(&self) -> Duration {
        Duration::from_secs_f64(60.0 / f64::from(self.requests_per_minute))
    }
}

#[derive(Debug, Clone)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// Blocking GET transport. Implemented over `reqwest` for real use and by mocks in tests.
pub trait HttpTransport {
    fn get(&self, url: &str, user_agent: &str) -> Result<HttpResponse, CorpusError>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new() -> Result<Self, CorpusError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| CorpusError::Transport(e.to_string()))?;
        Ok(Self { client })
    }
}

impl HttpTransport for ReqwestTransport {
    fn get(&self, url: &str, user_agent: &str) -> Result<HttpResponse, CorpusError> {
        let resp = self
            .client
            .get(url)
            .header(reqwest::header::USER_AGENT, user_agent)
            .send()
            .map_err(|e| CorpusError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .text()
            .map_err(|e| CorpusError::Transport(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

/// Spaces consecutive calls at least `interval` apart.
struct Pacer {
    interval: Duration,
    last: Option<Instant>,
}

impl Pacer {
    fn wait(&mut self) {
        if let Some(last) = self.last {
            let elapsed = last.elapsed();
            if elapsed < self.interval {
                thread::sleep(self.interval - elapsed);
            }
        }
        self.last = Some(Instant::now());
    }
}

const PAGE_LIMIT: usize = 100;

/// Fetches the newest posts of a subreddit, following `after` cursors until the
/// listing is exhausted or `max_posts` is reached.
pub fn fetch_subreddit(
    config: &FetchConfig,
    http: &dyn HttpTransport,
) -> Result<Vec<Post>, CorpusError> {
    config.validate()?;
    let base = config.base_url.trim_end_matches('/');
    let mut pacer = Pacer {
        interval: config.min_interval(),
        last: None,
    };
    let mut posts = Vec::new();
    let mut after: Option<String> = None;
    loop {
        let remaining = config.max_posts - posts.len();
        let limit = remaining.min(PAGE_LIMIT);
        let mut url = format!("{base}/r/{}/new.json?limit={limit}", config.subreddit);
        if let Some(cursor) = &after {
            url.push_str("&after=");
            url.push_str(cursor);
        }
        pacer.wait();
        let resp = http.get(&url, &config.user_agent)?;
        if !(200..300).contains(&resp.status) {
            return Err(CorpusError::HttpStatus {
                status: resp.status,
                url,
            });
        }
        let page = parse_listing(&resp.body)?;
        let got = page.posts.len();
        for post in page.posts {
            if posts.len() == config.max_posts {
                break;
            }
            posts.push(post);
        }
        if posts.len() >= config.max_posts || got == 0 {
            break;
        }
        match page.after {
            Some(cursor) => after = Some(cursor),
            None => break,
        }
    }
    Ok(posts)
}

#[derive(Debug)]
pub struct ListingPage {
    pub posts: Vec<Post>,
    pub after: Option<String>,
}

fn schema(field: &str, message: impl Into<String>) -> CorpusError {
    CorpusError::Schema {
        field: field.to_string(),
        message: message.into(),
    }
}

/// Maps one page of the public listing JSON (`{"data": {"children": [{"data": {...}}], "after": ..}}`).
pub fn parse_listing(body: &str) -> Result<ListingPage, CorpusError> {
    use serde_json::Value;

    let root: Value = serde_json::from_str(body).map_err(|e| schema("$", e.to_string()))?;
    let data = root
        .get("data")
        .and_then(Value::as_object)
        .ok_or_else(|| schema("data", "missing object"))?;
    let children = data
        .get("children")
        .and_then(Value::as_array)
        .ok_or_else(|| schema("data.children", "missing array"))?;
    let after = match data.get("after") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(schema("data.after", "expected string or null")),
    };

    let mut posts = Vec::with_capacity(children.len());
    for (i, child) in children.iter().enumerate() {
        let item = child
            .get("data")
            .and_then(Value::as_object)
            .ok_or_else(|| schema(&format!("data.children[{i}].data"), "missing object"))?;
        let field = |name: &str| format!("data.children[{i}].data.{name}");
        let string = |name: &str| -> Result<String, CorpusError> {
            item.get(name)
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| schema(&field(name), "expected string"))
        };
        let opt_string = |name: &str| -> Result<Option<String>, CorpusError> {
            match item.get(name) {
                None | Some(Value::Null) => Ok(None),
                Some(Value::String(s)) => Ok(Some(s.clone())),
                Some(_) => Err(schema(&field(name), "expected string or null")),
            }
        };
        let id = string("id")?;
        let author = string("author")?;
        let subreddit = string("subreddit")?;
        let created_utc = item
            .get("created_utc")
            .and_then(Value::as_f64)
            .filter(|t| t.is_finite() && *t >= 0.0)
            .ok_or_else(|| schema(&field("created_utc"), "expected non-negative number"))?
            as i64;
        let parent_id = opt_string("parent_id")?;
        // Submissions carry `title` + `selftext`; comments carry `body`.
        let title = opt_string("title")?;
        let body = match opt_string("selftext")? {
            Some(s) => s,
            None => opt_string("body")?.unwrap_or_default(),
        };
        posts.push(Post {
            id,
            author,
            subreddit,
            created_utc,
            parent_id,
            title,
            body,
        });
    }
    Ok(ListingPage { posts, after })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::RefCell;

    fn post(id: &str) -> Post {
        Post {
            id: id.into(),
            author: "a1".into(),
            subreddit: "opiates".into(),
            created_utc: 1_500_000_000,
            parent_id: None,
            title: Some("day one".into()),
            body: "stay clean".into(),
        }
    }

    #[test]
    fn empty_stream_is_empty_corpus() {
        let c = parse_corpus("".as_bytes()).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn two_lines_keep_order() {
        let c = Corpus::from_posts([post("b"), post("a")]).unwrap();
        let text = serialize_corpus(&c);
        let back = parse_corpus(text.as_bytes()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.posts()[0].id, "b");
        assert_eq!(back.posts()[1].id, "a");
        assert_eq!(back, c);
    }

    #[test]
    fn missing_id_cites_line() {
        let good = serde_json::to_string(&post("x")).unwrap();
        let bad = good.replace("\"id\":\"x\",", "");
        let input = format!("{good}\n{bad}\n");
        match parse_corpus(input.as_bytes()) {
            Err(CorpusError::Parse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("id"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_is_named() {
        let line = serde_json::to_string(&post("dup")).unwrap();
        let input = format!("{line}\n{line}\n");
        match parse_corpus(input.as_bytes()) {
            Err(CorpusError::DuplicateId(id)) => assert_eq!(id, "dup"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn negative_timestamp_rejected() {
        let mut p = post("n");
        p.created_utc = -1;
        let line = serde_json::to_string(&p).unwrap();
        assert!(matches!(
            parse_corpus(line.as_bytes()),
            Err(CorpusError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn text_joins_title_and_body() {
        assert_eq!(post("t").text(), "day one\nstay clean");
        let mut p = post("t");
        p.title = None;
        assert_eq!(p.text(), "stay clean");
    }

    #[test]
    fn labels_basic() {
        let m = load_labels("author,label\na1,oud\n".as_bytes()).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m["a1"], Label::Oud);
    }

    #[test]
    fn labels_conflict() {
        let err = load_labels("author,label\na1,oud\na1,non_oud\n".as_bytes()).unwrap_err();
        assert!(matches!(err, CorpusError::ConflictingLabel { ref author, .. } if author == "a1"));
    }

    #[test]
    fn labels_unknown_token() {
        let err = load_labels("author,label\na1,banana\n".as_bytes()).unwrap_err();
        assert!(
            matches!(err, CorpusError::UnknownLabel { row: 2, ref token } if token == "banana")
        );
    }

    #[test]
    fn labels_bad_header() {
        assert!(load_labels("user,label\na1,oud\n".as_bytes()).is_err());
    }

    #[test]
    fn merged_labels_imply_oud() {
        let stage1 = load_labels("author,label\na,oud\nb,non_oud\n".as_bytes()).unwrap();
        let stage2 =
            load_labels("author,label\na,recovering\nc,non_recovering\n".as_bytes()).unwrap();
        let m = merge_labels(&[stage1.clone(), stage2]).unwrap();
        assert_eq!(
            m["a"],
            AuthorLabels {
                oud: Some(true),
                recovering: Some(true),
                relapsed: None
            }
        );
        assert_eq!(m["b"].oud, Some(false));
        assert_eq!(m["c"].oud, Some(true));

        let bad = load_labels("author,label\nb,recovering\n".as_bytes()).unwrap();
        assert!(matches!(
            merge_labels(&[stage1, bad]),
            Err(CorpusError::ConflictingLabel { ref author, .. }) if author == "b"
        ));
    }

    struct MockListing {
        total: usize,
        status: u16,
        calls: RefCell<Vec<(String, String)>>,
    }

    impl MockListing {
        fn page(&self, url: &str) -> String {
            let offset: usize = url
                .split("after=t3_")
                .nth(1)
                .map(|s| s.parse().unwrap())
                .unwrap_or(0);
            let limit: usize = url
                .split("limit=")
                .nth(1)
                .and_then(|s| s.split('&').next())
                .map(|s| s.parse().unwrap())
                .unwrap();
            let end = (offset + limit).min(self.total);
            let children: Vec<_> = (offset..end)
                .map(|i| {
                    serde_json::json!({"kind": "t3", "data": {
                        "id": format!("p{i}"), "author": format!("u{}", i % 7),
                        "subreddit": "opiates", "created_utc": 1.6e9 + i as f64,
                        "title": "t", "selftext": "b"}})
                })
                .collect();
            let after = if end < self.total {
                serde_json::Value::String(format!("t3_{end}"))
            } else {
                serde_json::Value::Null
            };
            serde_json::json!({"kind": "Listing", "data": {"children": children, "after": after}})
                .to_string()
        }
    }

    impl HttpTransport for MockListing {
        fn get(&self, url: &str, ua: &str) -> Result<HttpResponse, CorpusError> {
            self.calls
                .borrow_mut()
                .push((url.to_string(), ua.to_string()));
            if self.status != 200 {
                return Ok(HttpResponse {
                    status: self.status,
                    body: String::new(),
                });
            }
            Ok(HttpResponse {
                status: 200,
                body: self.page(url),
            })
        }
    }

    fn mock(total: usize, status: u16) -> MockListing {
        MockListing {
            total,
            status,
            calls: RefCell::new(Vec::new()),
        }
    }

    fn fast_config() -> FetchConfig {
        let mut cfg = FetchConfig::new("http://mock", "opiates");
        cfg.requests_per_minute = 600_000;
        cfg
    }

    #[test]
    fn fetch_fewer_than_ceiling() {
        let m = mock(3, 200);
        let posts = fetch_subreddit(&fast_config(), &m).unwrap();
        assert_eq!(posts.len(), 3);
        assert_eq!(posts[0].body, "b");
        assert_eq!(m.calls.borrow().len(), 1);
    }

    #[test]
    fn fetch_stops_at_ceiling() {
        let m = mock(1500, 200);
        let posts = fetch_subreddit(&fast_config(), &m).unwrap();
        assert_eq!(posts.len(), 1000);
        assert_eq!(m.calls.borrow().len(), 10);
        let ids: HashSet<_> = posts.iter().map(|p| p.id.clone()).collect();
        assert_eq!(ids.len(), 1000);
    }

    #[test]
    fn fetch_sends_user_agent() {
        let m = mock(1, 200);
        let mut cfg = fast_config();
        cfg.user_agent = "research-bot/0.1".into();
        fetch_subreddit(&cfg, &m).unwrap();
        assert_eq!(m.calls.borrow()[0].1, "research-bot/0.1");
        assert!(m.calls.borrow()[0]
            .0
            .starts_with("http://mock/r/opiates/new.json"));
    }

    #[test]
    fn fetch_rate_limited_is_retryable() {
        let m = mock(10, 429);
        let err = fetch_subreddit(&fast_config(), &m).unwrap_err();
        assert!(matches!(err, CorpusError::HttpStatus { status: 429, .. }));
        assert!(err.is_retryable());
    }

    #[test]
    fn fetch_rejects_bad_config() {
        let m = mock(1, 200);
        let mut cfg = fast_config();
        cfg.max_posts = 1001;
        assert!(matches!(
            fetch_subreddit(&cfg, &m),
            Err(CorpusError::InvalidConfig(_))
        ));
    }

    #[test]
    fn fetch_spaces_requests() {
        let m = mock(250, 200);
        let mut cfg = fast_config();
        cfg.requests_per_minute = 3000; // 20 ms
        let start = Instant::now();
        fetch_subreddit(&cfg, &m).unwrap();
        assert_eq!(m.calls.borrow().len(), 3);
        assert!(start.elapsed() >= Duration::from_millis(40));
    }

    #[test]
    fn listing_schema_mismatch_names_field() {
        let body = r#"{"data":{"children":[{"data":{"id":"x","author":"a","subreddit":"s","created_utc":"soon"}}],"after":null}}"#;
        match parse_listing(body) {
            Err(CorpusError::Schema { field, .. }) => {
                assert_eq!(field, "data.children[0].data.created_utc")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn listing_comment_uses_body() {
        let body = r#"{"data":{"children":[{"data":{"id":"c1","author":"a","subreddit":"s","created_utc":5,"parent_id":"t3_x","body":"reply"}}],"after":null}}"#;
        let page = parse_listing(body).unwrap();
        assert_eq!(page.posts[0].body, "reply");
        assert_eq!(page.posts[0].parent_id.as_deref(), Some("t3_x"));
        assert_eq!(page.posts[0].title, None);
    }
}

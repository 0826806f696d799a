//! Seeded synthetic community corpus with known cohorts, for fixtures and tests.
//!
//! Every author belongs to one cohort. Posts mix shared background words with
//! cohort signal words: OUD authors use opioid vocabulary and non-OUD authors
//! hobby vocabulary (the stage-1 signal); among OUD authors, recovering and
//! non-recovering ones differ in a second word pool (the stage-2 signal).

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classify::Cohort;
use crate::corpus::{Corpus, Label, LabelMap, Post};
use crate::relapse::{EventKind, TimelineEvent, SECONDS_PER_DAY};

const BACKGROUND: &[&str] = &[
    "today", "work", "family", "house", "music", "weather", "dinner", "friend", "phone", "car",
    "movie", "coffee", "week", "night", "sleep", "talk", "think", "year", "time", "game",
];
const OUD: &[&str] = &[
    "oxy",
    "opiates",
    "withdrawal",
    "dope",
    "suboxone",
    "methadone",
    "fentanyl",
    "heroin",
    "pills",
    "dose",
];
const NON_OUD: &[&str] = &[
    "gym", "garden", "recipe", "hiking", "camera", "guitar", "painting", "travel",
];
const RECOVERING: &[&str] = &[
    "clean",
    "sober",
    "meeting",
    "sponsor",
    "recovery",
    "counselor",
    "program",
];
const NON_RECOVERING: &[&str] = &["nod", "score", "plug", "dealer", "rig", "stash", "using"];
const UPBEAT: &[&str] = &["happy", "love", "hope", "grateful", "trust", "good"];
const DOWNBEAT: &[&str] = &[
    "sad", "lonely", "afraid", "scared", "pain", "sick", "angry", "hate",
];
const MEDICATIONS: &[(&str, &str)] =
    &[("suboxone", "dose"), ("methadone", "clinic"), ("oxy", "mg")];

/// Word-emotion rows matching the synthetic vocabulary, in the lexicon TSV format.
pub const DEMO_LEXICON: &str = include_str!("../data/demo_lexicon.tsv");

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub authors: usize,
    pub posts_per_author: usize,
    pub oud_fraction: f64,
    pub recovering_fraction: f64,
    pub relapse_fraction: f64,
    /// Chance that a post borrows one signal word from the opposite pool.
    pub noise: f64,
    pub subreddit: String,
    pub start_utc: i64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            authors: 150,
            posts_per_author: 4,
            oud_fraction: 0.65,
            recovering_fraction: 0.5,
            relapse_fraction: 0.6,
            noise: 0.15,
            subreddit: "opiates".to_string(),
            start_utc: 1_500_000_000,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub corpus: Corpus,
    /// `oud` / `non_oud` for every author.
    pub oud_labels: LabelMap,
    /// `recovering` / `non_recovering` for every OUD author.
    pub recovery_labels: LabelMap,
    pub events: Vec<TimelineEvent>,
    pub cohorts: BTreeMap<String, Cohort>,
    /// Planted relapse outcome of each recovering author.
    pub relapsed: BTreeMap<String, bool>,
}

fn pick<'a, R: Rng>(rng: &mut R, pool: &[&'a str]) -> &'a str {
    pool.choose(rng).expect("pools are non-empty")
}

fn sentence<R: Rng>(rng: &mut R, cohort: Cohort, noise: f64) -> String {
    let (own, other): (&[&str], &[&str]) = match cohort {
        Cohort::NonOud => (NON_OUD, OUD),
        _ => (OUD, NON_OUD),
    };
    let mut words: Vec<String> = (0..rng.gen_range(6..12))
        .map(|_| pick(rng, BACKGROUND).to_string())
        .collect();
    for _ in 0..rng.gen_range(2..4) {
        words.push(pick(rng, own).to_string());
    }
    if cohort != Cohort::NonOud {
        let (second, second_other) = match cohort {
            Cohort::OudRecovering => (RECOVERING, NON_RECOVERING),
            _ => (NON_RECOVERING, RECOVERING),
        };
        for _ in 0..rng.gen_range(1..3) {
            words.push(pick(rng, second).to_string());
        }
        if rng.gen_bool(noise) {
            words.push(pick(rng, second_other).to_string());
        }
        if rng.gen_bool(0.5) {
            let (a, b) = MEDICATIONS[rng.gen_range(0..MEDICATIONS.len())];
            words.push(format!("{a} {b}"));
        }
    }
    if rng.gen_bool(noise) {
        words.push(pick(rng, other).to_string());
    }
    let mood = match cohort {
        Cohort::OudNonRecovering => DOWNBEAT,
        Cohort::OudRecovering => UPBEAT,
        Cohort::NonOud => {
            if rng.gen_bool(0.5) {
                UPBEAT
            } else {
                DOWNBEAT
            }
        }
    };
    if rng.gen_bool(0.8) {
        words.push(pick(rng, mood).to_string());
    }
    words.shuffle(rng);
    let mut text = words.join(" ");
    if let Some(first) = text.get(..1) {
        text.replace_range(..1, &first.to_uppercase());
    }
    text.push('.');
    text
}

pub fn generate(cfg: &SynthConfig) -> SynthData {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut posts = Vec::new();
    let mut oud_labels = LabelMap::new();
    let mut recovery_labels = LabelMap::new();
    let mut events = Vec::new();
    let mut cohorts = BTreeMap::new();
    let mut relapsed = BTreeMap::new();

    for a in 0..cfg.authors {
        let author = format!("u{a:04}");
        let cohort = if !rng.gen_bool(cfg.oud_fraction) {
            Cohort::NonOud
        } else if rng.gen_bool(cfg.recovering_fraction) {
            Cohort::OudRecovering
        } else {
            Cohort::OudNonRecovering
        };
        cohorts.insert(author.clone(), cohort);
        oud_labels.insert(
            author.clone(),
            if cohort == Cohort::NonOud {
                Label::NonOud
            } else {
                Label::Oud
            },
        );
        match cohort {
            Cohort::OudRecovering => {
                recovery_labels.insert(author.clone(), Label::Recovering);
            }
            Cohort::OudNonRecovering => {
                recovery_labels.insert(author.clone(), Label::NonRecovering);
            }
            Cohort::NonOud => {}
        }

        let mut t = cfg.start_utc + rng.gen_range(0..30) * SECONDS_PER_DAY;
        for p in 0..cfg.posts_per_author {
            t += rng.gen_range(5..40) * SECONDS_PER_DAY + rng.gen_range(0..SECONDS_PER_DAY);
            let n_sentences = rng.gen_range(1..3);
            let body: Vec<String> = (0..n_sentences)
                .map(|_| sentence(&mut rng, cohort, cfg.noise))
                .collect();
            posts.push(Post {
                id: format!("{author}_p{p}"),
                author: author.clone(),
                subreddit: cfg.subreddit.clone(),
                created_utc: t,
                parent_id: None,
                title: (p == 0).then(|| "Day update".to_string()),
                body: body.join(" "),
            });
            events.push(TimelineEvent {
                author: author.clone(),
                timestamp: t,
                kind: EventKind::Post,
            });
        }
        if cohort == Cohort::OudRecovering {
            let latest = t;
            let did_relapse = rng.gen_bool(cfg.relapse_fraction);
            let days_back = if did_relapse {
                rng.gen_range(0..45)
            } else {
                rng.gen_range(60..120)
            };
            events.push(TimelineEvent {
                author: author.clone(),
                timestamp: latest - days_back * SECONDS_PER_DAY,
                kind: EventKind::OpioidUseSignal,
            });
            relapsed.insert(author.clone(), did_relapse);
        }
    }
    events.sort_by(|x, y| (x.timestamp, &x.author).cmp(&(y.timestamp, &y.author)));
    SynthData {
        corpus: Corpus::from_posts(posts).expect("generated ids are unique"),
        oud_labels,
        recovery_labels,
        events,
        cohorts,
        relapsed,
    }
}

/// `author,timestamp,kind` CSV text.
pub fn events_csv(events: &[TimelineEvent]) -> String {
    let mut out = String::from("author,timestamp,kind\n");
    for e in events {
        let kind = match e.kind {
            EventKind::Post => "post",
            EventKind::OpioidUseSignal => "opioid_use_signal",
            EventKind::RecoverySignal => "recovery_signal",
        };
        out.push_str(&format!("{},{},{kind}\n", e.author, e.timestamp));
    }
    out
}

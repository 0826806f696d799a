//! Relapse labeling from author timelines and nested cohort percentages.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AuthorLabels, Label, LabelMap};

pub const SECONDS_PER_DAY: i64 = 86_400;
pub const DEFAULT_WINDOW_DAYS: u32 = 50;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RelapseError {
    #[error("author `{0}` has no post events")]
    NoPosts(String),
    #[error("author `{author}`: {message}")]
    Inconsistent { author: String, message: String },
    #[error("events row {row}: {message}")]
    EventFormat { row: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Post,
    OpioidUseSignal,
    RecoverySignal,
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "post" => Ok(EventKind::Post),
            "opioid_use_signal" => Ok(EventKind::OpioidUseSignal),
            "recovery_signal" => Ok(EventKind::RecoverySignal),
            _ => Err(s.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineEvent {
    pub author: String,
    pub timestamp: i64,
    pub kind: EventKind,
}

/// Reads an `author,timestamp,kind` CSV.
pub fn load_events<R: Read>(reader: R) -> Result<Vec<TimelineEvent>, RelapseError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header_err = |message: String| RelapseError::EventFormat { row: 1, message };
    let headers = rdr.headers().map_err(|e| header_err(e.to_string()))?;
    if headers != vec!["author", "timestamp", "kind"] {
        return Err(header_err(format!(
            "expected `author,timestamp,kind`, got {headers:?}"
        )));
    }
    let mut out = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let row = idx + 2;
        let err = |message: String| RelapseError::EventFormat { row, message };
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let timestamp: i64 = rec[1]
            .parse()
            .map_err(|_| err(format!("bad timestamp `{}`", &rec[1])))?;
        if timestamp < 0 {
            return Err(err(format!("negative timestamp {timestamp}")));
        }
        let kind = rec[2]
            .parse()
            .map_err(|k| err(format!("unknown kind `{k}`")))?;
        out.push(TimelineEvent {
            author: rec[0].to_string(),
            timestamp,
            kind,
        });
    }
    Ok(out)
}

/// `relapsed` iff some use signal falls in `[latest_post - window, latest_post]`,
/// both ends inclusive.
pub fn label_relapse(events: &[TimelineEvent], window_days: u32) -> Result<Label, RelapseError> {
    let latest = events
        .iter()
        .filter(|e| e.kind == EventKind::Post)
        .map(|e| e.timestamp)
        .max()
        .ok_or_else(|| {
            RelapseError::NoPosts(events.first().map(|e| e.author.clone()).unwrap_or_default())
        })?;
    let start = latest - i64::from(window_days) * SECONDS_PER_DAY;
    let relapsed = events
        .iter()
        .any(|e| e.kind == EventKind::OpioidUseSignal && (start..=latest).contains(&e.timestamp));
    Ok(if relapsed {
        Label::Relapsed
    } else {
        Label::Clean
    })
}

/// Labels each listed author from their events.
pub fn label_authors<'a>(
    events: &[TimelineEvent],
    authors: impl IntoIterator<Item = &'a str>,
    window_days: u32,
) -> Result<LabelMap, RelapseError> {
    let mut by_author: BTreeMap<&str, Vec<TimelineEvent>> = BTreeMap::new();
    for e in events {
        by_author
            .entry(e.author.as_str())
            .or_default()
            .push(e.clone());
    }
    let mut out = LabelMap::new();
    for author in authors {
        let evs = by_author.get(author).map(Vec::as_slice).unwrap_or(&[]);
        if evs.is_empty() {
            return Err(RelapseError::NoPosts(author.to_string()));
        }
        out.insert(author.to_string(), label_relapse(evs, window_days)?);
    }
    Ok(out)
}

/// Two complementary counts at one branch of the cohort tree.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Branch {
    pub yes: usize,
    pub no: usize,
}

impl Branch {
    pub fn total(&self) -> usize {
        self.yes + self.no
    }

    /// `(yes, no)` fractions; `None` when the branch is empty.
    pub fn fractions(&self) -> Option<(f64, f64)> {
        let n = self.total();
        (n > 0).then(|| {
            let yes = self.yes as f64 / n as f64;
            (yes, 1.0 - yes)
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortBreakdown {
    pub oud: Branch,
    pub recovering: Branch,
    pub relapsed: Branch,
}

/// Counts each branch: OUD among labeled authors, recovering among OUD, relapsed
/// among recovering.
pub fn cohort_breakdown(
    labels: &BTreeMap<String, AuthorLabels>,
) -> Result<CohortBreakdown, RelapseError> {
    let mut b = CohortBreakdown::default();
    for (author, l) in labels {
        let bad = |message: &str| RelapseError::Inconsistent {
            author: author.clone(),
            message: message.to_string(),
        };
        if l.recovering.is_some() && l.oud == Some(false) {
            return Err(bad("recovery label on a non_oud author"));
        }
        if l.relapsed.is_some() && l.recovering != Some(true) {
            return Err(bad(
                "relapsed/clean label on an author not labeled recovering",
            ));
        }
        let oud = l.oud.or(l.recovering.map(|_| true));
        match oud {
            Some(true) => b.oud.yes += 1,
            Some(false) => b.oud.no += 1,
            None => {}
        }
        match l.recovering {
            Some(true) => b.recovering.yes += 1,
            Some(false) => b.recovering.no += 1,
            None => {}
        }
        match l.relapsed {
            Some(true) => b.relapsed.yes += 1,
            Some(false) => b.relapsed.no += 1,
            None => {}
        }
    }
    Ok(b)
}

pub fn percent(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

fn branch_lines(out: &mut String, indent: &str, of: &str, yes: &str, no: &str, b: &Branch) {
    match b.fractions() {
        Some((fy, fn_)) => {
            let _ = writeln!(
                out,
                "{indent}{yes}: {} of {} {of} ({})",
                b.yes,
                b.total(),
                percent(fy)
            );
            let _ = writeln!(
                out,
                "{indent}{no}: {} of {} {of} ({})",
                b.no,
                b.total(),
                percent(fn_)
            );
        }
        None => {
            let _ = writeln!(out, "{indent}{yes}: 0 of 0 {of} (n/a)");
            let _ = writeln!(out, "{indent}{no}: 0 of 0 {of} (n/a)");
        }
    }
}

/// Nested percentage report, one decimal place.
pub fn render_breakdown(b: &CohortBreakdown) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "labeled authors: {}", b.oud.total());
    branch_lines(&mut out, "", "labeled", "oud", "non_oud", &b.oud);
    branch_lines(
        &mut out,
        "  ",
        "oud",
        "recovering",
        "non_recovering",
        &b.recovering,
    );
    branch_lines(
        &mut out,
        "    ",
        "recovering",
        "relapsed",
        "clean",
        &b.relapsed,
    );
    out
}

/// `branch,yes,no,yes_fraction,no_fraction` rows.
pub fn breakdown_csv(b: &CohortBreakdown) -> String {
    let mut out = String::from("branch,yes,no,yes_fraction,no_fraction\n");
    for (name, br) in [
        ("oud", &b.oud),
        ("recovering", &b.recovering),
        ("relapsed", &b.relapsed),
    ] {
        let (fy, fno) = br
            .fractions()
            .map_or((String::new(), String::new()), |(a, c)| {
                (format!("{a:.4}"), format!("{c:.4}"))
            });
        let _ = writeln!(out, "{name},{},{},{fy},{fno}", br.yes, br.no);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const DAY: i64 = SECONDS_PER_DAY;

    fn ev(ts: i64, kind: EventKind) -> TimelineEvent {
        TimelineEvent {
            author: "r".into(),
            timestamp: ts,
            kind,
        }
    }

    #[test]
    fn day_rule_examples() {
        let relapsed = [
            ev(45 * DAY, EventKind::OpioidUseSignal),
            ev(60 * DAY, EventKind::Post),
        ];
        assert_eq!(label_relapse(&relapsed, 50), Ok(Label::Relapsed));
        let clean = [
            ev(5 * DAY, EventKind::OpioidUseSignal),
            ev(60 * DAY, EventKind::Post),
        ];
        assert_eq!(label_relapse(&clean, 50), Ok(Label::Clean));
        let none = [
            ev(60 * DAY, EventKind::Post),
            ev(30 * DAY, EventKind::RecoverySignal),
        ];
        assert_eq!(label_relapse(&none, 50), Ok(Label::Clean));
    }

    #[test]
    fn window_endpoints_inclusive() {
        let at_start = [
            ev(10 * DAY, EventKind::OpioidUseSignal),
            ev(60 * DAY, EventKind::Post),
        ];
        assert_eq!(label_relapse(&at_start, 50), Ok(Label::Relapsed));
        let before = [
            ev(10 * DAY - 1, EventKind::OpioidUseSignal),
            ev(60 * DAY, EventKind::Post),
        ];
        assert_eq!(label_relapse(&before, 50), Ok(Label::Clean));
        let after = [
            ev(60 * DAY + 1, EventKind::OpioidUseSignal),
            ev(60 * DAY, EventKind::Post),
        ];
        assert_eq!(label_relapse(&after, 50), Ok(Label::Clean));
    }

    #[test]
    fn no_posts_is_error() {
        assert_eq!(
            label_relapse(&[ev(1, EventKind::OpioidUseSignal)], 50),
            Err(RelapseError::NoPosts("r".into()))
        );
    }

    type Row<'a> = (&'a str, Option<bool>, Option<bool>, Option<bool>);

    fn labels(items: &[Row]) -> BTreeMap<String, AuthorLabels> {
        items
            .iter()
            .map(|&(a, oud, recovering, relapsed)| {
                (
                    a.to_string(),
                    AuthorLabels {
                        oud,
                        recovering,
                        relapsed,
                    },
                )
            })
            .collect()
    }

    #[test]
    fn paper_scale_breakdown() {
        let mut m = BTreeMap::new();
        for i in 0..3157 {
            m.insert(
                format!("u{i:04}"),
                AuthorLabels {
                    oud: Some(i < 2049),
                    ..Default::default()
                },
            );
        }
        let b = cohort_breakdown(&m).unwrap();
        let (yes, no) = b.oud.fractions().unwrap();
        assert_eq!(percent(yes), "64.9%");
        assert_eq!(percent(no), "35.1%");
        assert!(render_breakdown(&b).contains("oud: 2049 of 3157 labeled (64.9%)"));
    }

    #[test]
    fn degenerate_breakdowns() {
        let b = cohort_breakdown(&labels(&[
            ("a", Some(false), None, None),
            ("b", Some(false), None, None),
        ]))
        .unwrap();
        assert_eq!(b.oud.fractions(), Some((0.0, 1.0)));
        assert_eq!(b.recovering.fractions(), None);

        let b = cohort_breakdown(&labels(&[("a", Some(true), Some(true), Some(true))])).unwrap();
        assert_eq!(b.relapsed.fractions(), Some((1.0, 0.0)));
    }

    #[test]
    fn inconsistent_labels_name_author() {
        let err = cohort_breakdown(&labels(&[
            ("ok", Some(true), None, None),
            ("bad", Some(true), Some(false), Some(true)),
        ]));
        assert!(
            matches!(err, Err(RelapseError::Inconsistent { ref author, .. }) if author == "bad")
        );
    }

    #[test]
    fn events_csv() {
        let evs =
            load_events("author,timestamp,kind\na,5,post\na,3,opioid_use_signal\n".as_bytes())
                .unwrap();
        assert_eq!(evs.len(), 2);
        assert_eq!(evs[1].kind, EventKind::OpioidUseSignal);
        assert!(load_events("author,timestamp,kind\na,5,tweet\n".as_bytes()).is_err());
        assert!(load_events("author,timestamp,kind\na,-5,post\n".as_bytes()).is_err());
        let m = label_authors(&evs, ["a"], 50).unwrap();
        assert_eq!(m["a"], Label::Relapsed);
        assert!(label_authors(&evs, ["zz"], 50).is_err());
    }

    fn timeline() -> impl Strategy<Value = Vec<TimelineEvent>> {
        prop::collection::vec((0i64..200 * DAY, 0u8..3), 1..20).prop_map(|v| {
            let mut evs: Vec<_> = v
                .into_iter()
                .map(|(t, k)| {
                    ev(
                        t,
                        [
                            EventKind::Post,
                            EventKind::OpioidUseSignal,
                            EventKind::RecoverySignal,
                        ][k as usize],
                    )
                })
                .collect();
            evs.push(ev(100 * DAY, EventKind::Post));
            evs
        })
    }

    proptest! {
        #[test]
        fn widening_window_never_unrelapses(evs in timeline(), w in 0u32..100, extra in 0u32..100) {
            if label_relapse(&evs, w).unwrap() == Label::Relapsed {
                prop_assert_eq!(label_relapse(&evs, w + extra).unwrap(), Label::Relapsed);
            }
        }

        #[test]
        fn translation_invariant(evs in timeline(), shift in 0i64..1_000_000_000, w in 0u32..100) {
            let shifted: Vec<_> = evs.iter().map(|e| TimelineEvent { timestamp: e.timestamp + shift, ..e.clone() }).collect();
            prop_assert_eq!(label_relapse(&evs, w), label_relapse(&shifted, w));
        }

        #[test]
        fn branch_fractions_sum_to_one(yes in 0usize..5000, no in 0usize..5000) {
            let b = Branch { yes, no };
            if let Some((a, c)) = b.fractions() {
                prop_assert!((a + c - 1.0).abs() <= 1e-12);
            }
        }
    }
}

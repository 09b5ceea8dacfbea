//! Time-stamped corpus handling: parsing, score filtering, monthly slicing,
//! train/dev/test splits and the nested halving subset ladder.

mod parse;
mod split;

pub use parse::{parse_flat_corpus, render_flat_corpus, ParseOptions, ParseOutcome};
pub use split::{
    build_subset_ladder, load_slice, make_splits, write_slice, SliceManifest, SplitCounts,
};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: record has no timestamp header (expected `### topic=<t> ts=<secs> id=<id>`)")]
    MissingTimestamp { line: usize },
    #[error("line {line}: malformed record header: {reason}")]
    BadHeader { line: usize, reason: String },
    #[error("period {period}: {have} words is fewer than the {need} needed for dev, test and the smallest ladder rung")]
    InsufficientWords { period: String, have: usize, need: usize },
    #[error("training set has {have} words but the ladder top rung needs {need}")]
    LadderTooLarge { have: usize, need: usize },
    #[error("ladder top {top} / floor {floor} is not a power-of-two ratio")]
    LadderRatio { top: usize, floor: usize },
    #[error("invalid period id `{0}` (expected YYYY-MM)")]
    BadPeriod(String),
    #[error("timestamp {0} is out of range")]
    BadTimestamp(i64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocumentKind {
    Post,
    Comment,
}

/// One post or comment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub topic: String,
    /// UTC seconds.
    pub timestamp: i64,
    pub kind: DocumentKind,
    pub score: i64,
    pub text: String,
    pub parent_id: Option<String>,
}

impl Document {
    pub fn word_count(&self) -> usize {
        count_words(&self.text)
    }

    /// Id of the post this document belongs to (itself for posts).
    pub fn post_id(&self) -> &str {
        match self.kind {
            DocumentKind::Post => &self.id,
            DocumentKind::Comment => self.parent_id.as_deref().unwrap_or(&self.id),
        }
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.text.split_whitespace()
    }
}

/// Whitespace-delimited word count; `split_whitespace` covers Unicode spaces.
pub fn count_words(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Collapse every run of Unicode whitespace into a single ASCII space.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// A calendar month, ordered chronologically and displayed as `YYYY-MM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PeriodId {
    pub year: i32,
    pub month: u32,
}

impl PeriodId {
    pub fn new(year: i32, month: u32) -> Result<Self, CorpusError> {
        if !(1..=12).contains(&month) {
            return Err(CorpusError::BadPeriod(format!("{year}-{month}")));
        }
        Ok(Self { year, month })
    }

    pub fn from_timestamp(ts: i64) -> Result<Self, CorpusError> {
        let dt: DateTime<Utc> = Utc
            .timestamp_opt(ts, 0)
            .single()
            .ok_or(CorpusError::BadTimestamp(ts))?;
        Ok(Self {
            year: dt.year(),
            month: dt.month(),
        })
    }

    /// Months since year 0, used for period arithmetic.
    pub fn index(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    pub fn from_index(index: i64) -> Self {
        Self {
            year: index.div_euclid(12) as i32,
            month: index.rem_euclid(12) as u32 + 1,
        }
    }

    pub fn offset(self, months: i64) -> Self {
        Self::from_index(self.index() + months)
    }

    pub fn months_until(self, later: PeriodId) -> i64 {
        later.index() - self.index()
    }

    /// UTC timestamp of the first second of the month.
    pub fn start_timestamp(self) -> i64 {
        Utc.with_ymd_and_hms(self.year, self.month, 1, 0, 0, 0)
            .single()
            .map(|dt| dt.timestamp())
            .unwrap_or_default()
    }

    pub fn seconds_in_month(self) -> i64 {
        self.offset(1).start_timestamp() - self.start_timestamp()
    }

    /// Inclusive range `first..=last`.
    pub fn range_inclusive(first: PeriodId, last: PeriodId) -> Vec<PeriodId> {
        (first.index()..=last.index()).map(Self::from_index).collect()
    }

    /// Parse `2012-10..2013-10` (inclusive) or a single `2012-10`.
    pub fn parse_range(spec: &str) -> Result<Vec<PeriodId>, CorpusError> {
        match spec.split_once("..") {
            Some((a, b)) => Ok(Self::range_inclusive(a.parse()?, b.parse()?)),
            None => Ok(vec![spec.parse()?]),
        }
    }
}

impl fmt::Display for PeriodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for PeriodId {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CorpusError::BadPeriod(s.to_string());
        let (y, m) = s.trim().split_once('-').ok_or_else(bad)?;
        let year = y.parse().map_err(|_| bad())?;
        let month = m.parse().map_err(|_| bad())?;
        Self::new(year, month).map_err(|_| bad())
    }
}

impl Serialize for PeriodId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PeriodId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Keep documents with `score >= min_score`, order preserved.
pub fn filter_min_score(docs: Vec<Document>, min_score: i64) -> Vec<Document> {
    docs.into_iter().filter(|d| d.score >= min_score).collect()
}

/// Documents of one calendar month.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodBucket {
    pub docs: Vec<Document>,
    pub words: usize,
    /// Below the configured minimum; excluded from training.
    pub insufficient: bool,
}

/// Group documents into monthly buckets keyed by period.
pub fn slice_periods(
    docs: Vec<Document>,
    min_words: usize,
) -> Result<BTreeMap<PeriodId, PeriodBucket>, CorpusError> {
    let mut out: BTreeMap<PeriodId, PeriodBucket> = BTreeMap::new();
    for doc in docs {
        let period = PeriodId::from_timestamp(doc.timestamp)?;
        let bucket = out.entry(period).or_insert_with(|| PeriodBucket {
            docs: Vec::new(),
            words: 0,
            insufficient: false,
        });
        bucket.words += doc.word_count();
        bucket.docs.push(doc);
    }
    for bucket in out.values_mut() {
        bucket.insufficient = bucket.words < min_words;
    }
    Ok(out)
}

/// Group by topic first, then by month.
pub fn slice_by_topic(
    docs: Vec<Document>,
    min_words: usize,
) -> Result<BTreeMap<String, BTreeMap<PeriodId, PeriodBucket>>, CorpusError> {
    let mut by_topic: BTreeMap<String, Vec<Document>> = BTreeMap::new();
    for doc in docs {
        by_topic.entry(doc.topic.clone()).or_default().push(doc);
    }
    by_topic
        .into_iter()
        .map(|(topic, docs)| Ok((topic, slice_periods(docs, min_words)?)))
        .collect()
}

/// Train/dev/test token streams of one (topic, period).
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodSlice {
    pub topic: String,
    pub period: PeriodId,
    pub seed: u64,
    pub train_full: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
    pub train_posts: Vec<String>,
    pub dev_posts: Vec<String>,
    pub test_posts: Vec<String>,
}

impl PeriodSlice {
    pub fn counts(&self) -> SplitCounts {
        SplitCounts {
            train: self.train_full.len(),
            dev: self.dev.len(),
            test: self.test.len(),
        }
    }
}

/// Sizes of nested training subsets; rung `k + 1` is the first half of rung `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetLadder {
    pub period: PeriodId,
    /// Descending word counts.
    pub sizes: Vec<usize>,
}

impl SubsetLadder {
    pub fn subset<'a>(&self, train_full: &'a [String], rung: usize) -> &'a [String] {
        &train_full[..self.sizes[rung]]
    }

    pub fn top(&self) -> usize {
        self.sizes[0]
    }

    pub fn floor(&self) -> usize {
        *self.sizes.last().expect("ladder has at least one rung")
    }
}

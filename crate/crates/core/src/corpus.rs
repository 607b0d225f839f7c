//! Rated creativity responses and per-group rating rescaling.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::numeric::round_half_up;
use crate::text::canonicalize;

pub const DEFAULT_RATING_MIN: i64 = 10;
pub const DEFAULT_RATING_MAX: i64 = 50;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CorpusError {
    #[error("unknown split label `{0}`")]
    UnknownSplit(String),
    #[error("record `{id}`: {reason}")]
    InvalidRecord { id: String, reason: String },
    #[error("duplicate record id `{0}`")]
    DuplicateId(String),
    #[error("cannot rescale an empty group")]
    EmptyGroup,
    #[error("target range is empty: min {min} >= max {max}")]
    EmptyTargetRange { min: i64, max: i64 },
    #[error("record `{0}` has neither a rating nor rater scores")]
    Unrated(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum Split {
    Train,
    Dev,
    Test,
    OodItem,
    OodLang,
    OodTask,
    #[default]
    Unassigned,
}

impl Split {
    pub const ALL: [Split; 7] =
        [Split::Train, Split::Dev, Split::Test, Split::OodItem, Split::OodLang, Split::OodTask, Split::Unassigned];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
            Split::OodItem => "ood_item",
            Split::OodLang => "ood_lang",
            Split::OodTask => "ood_task",
            Split::Unassigned => "unassigned",
        }
    }
}

impl FromStr for Split {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Split::ALL.into_iter().find(|split| split.as_str() == s).ok_or_else(|| CorpusError::UnknownSplit(s.into()))
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One human response to a creativity prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct RatedResponse {
    pub id: String,
    pub task: String,
    pub language: String,
    pub prompt: String,
    pub response: String,
    /// Raw per-rater ratings, in the source scale.
    pub rater_scores: Vec<f64>,
    /// Aggregated rating on the rescaled integer scale.
    pub rating: Option<i64>,
    pub split: Split,
    /// Unrecognized keys of the source record, as raw JSON text.
    pub extra: BTreeMap<String, String>,
}

impl RatedResponse {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let invalid = |reason: &str| CorpusError::InvalidRecord { id: self.id.clone(), reason: reason.into() };
        if self.id.trim().is_empty() {
            return Err(invalid("empty id"));
        }
        if self.prompt.trim().is_empty() {
            return Err(invalid("empty prompt"));
        }
        if self.response.trim().is_empty() {
            return Err(invalid("empty response"));
        }
        if self.rater_scores.iter().any(|s| !s.is_finite()) {
            return Err(invalid("non-finite rater score"));
        }
        if let Some(r) = self.rating {
            if !(DEFAULT_RATING_MIN..=DEFAULT_RATING_MAX).contains(&r) {
                return Err(invalid("rating outside [10, 50]"));
            }
        }
        Ok(())
    }

    /// Arithmetic mean of the rater scores, if any.
    pub fn mean_score(&self) -> Option<f64> {
        if self.rater_scores.is_empty() {
            None
        } else {
            Some(self.rater_scores.iter().sum::<f64>() / self.rater_scores.len() as f64)
        }
    }

    /// True when every rater score rounds (half up) to the same integer.
    /// Records without rater scores never agree.
    pub fn raters_agree(&self) -> bool {
        let mut rounded = self.rater_scores.iter().map(|s| round_half_up(*s));
        match rounded.next() {
            None => false,
            Some(first) => rounded.all(|r| r == first),
        }
    }
}

/// Key identifying one prompt group: task label plus canonical prompt text.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupKey {
    pub task: String,
    pub prompt: String,
}

impl GroupKey {
    pub fn of(record: &RatedResponse) -> Self {
        GroupKey { task: record.task.clone(), prompt: canonicalize(&record.prompt) }
    }
}

/// Records in insertion order plus a (task, prompt) index over them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    records: Vec<RatedResponse>,
    groups: Vec<(GroupKey, Vec<usize>)>,
    lookup: BTreeMap<GroupKey, usize>,
    ids: BTreeMap<String, usize>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: impl IntoIterator<Item = RatedResponse>) -> Result<Self, CorpusError> {
        let mut corpus = Corpus::new();
        for r in records {
            corpus.push(r)?;
        }
        Ok(corpus)
    }

    pub fn push(&mut self, record: RatedResponse) -> Result<(), CorpusError> {
        record.validate()?;
        if self.ids.contains_key(&record.id) {
            return Err(CorpusError::DuplicateId(record.id));
        }
        self.insert_unchecked(record);
        Ok(())
    }

    fn insert_unchecked(&mut self, record: RatedResponse) {
        let idx = self.records.len();
        let key = GroupKey::of(&record);
        match self.lookup.get(&key) {
            Some(&g) => self.groups[g].1.push(idx),
            None => {
                self.lookup.insert(key.clone(), self.groups.len());
                self.groups.push((key, alloc::vec![idx]));
            }
        }
        self.ids.insert(record.id.clone(), idx);
        self.records.push(record);
    }

    pub fn records(&self) -> &[RatedResponse] {
        &self.records
    }

    pub fn into_records(self) -> Vec<RatedResponse> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&RatedResponse> {
        self.ids.get(id).map(|&i| &self.records[i])
    }

    /// Prompt groups in first-appearance order.
    pub fn groups(&self) -> impl Iterator<Item = (&GroupKey, impl Iterator<Item = &RatedResponse>)> {
        self.groups.iter().map(move |(k, members)| (k, members.iter().map(move |&i| &self.records[i])))
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    /// Ids belonging to the group, in insertion order.
    pub fn group_ids(&self, key: &GroupKey) -> Option<Vec<&str>> {
        self.lookup.get(key).map(|&g| self.groups[g].1.iter().map(|&i| self.records[i].id.as_str()).collect())
    }

    /// Keeps the records for which `keep` returns true, preserving order.
    pub fn filter(&self, mut keep: impl FnMut(&RatedResponse) -> bool) -> Corpus {
        let mut out = Corpus::new();
        for r in self.records.iter().filter(|r| keep(r)) {
            out.insert_unchecked(r.clone());
        }
        out
    }

    /// Records on which every rater agrees after rounding.
    pub fn filter_full_agreement(&self) -> Corpus {
        self.filter(RatedResponse::raters_agree)
    }

    /// Fills in missing ratings by min-max rescaling mean rater scores within
    /// each rescaling group. Records that already carry a rating keep it and
    /// do not contribute to the group statistics.
    pub fn rescale(&self, grouping: RescaleGrouping, target_min: i64, target_max: i64) -> Result<Corpus, CorpusError> {
        let mut groups: BTreeMap<(String, Option<String>), Vec<usize>> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            if r.rating.is_some() {
                continue;
            }
            if r.rater_scores.is_empty() {
                return Err(CorpusError::Unrated(r.id.clone()));
            }
            let lang = match grouping {
                RescaleGrouping::Task => None,
                RescaleGrouping::TaskLanguage => Some(r.language.clone()),
            };
            groups.entry((r.task.clone(), lang)).or_default().push(i);
        }
        let mut records = self.records.clone();
        for members in groups.values() {
            let means: Vec<f64> =
                members.iter().map(|&i| self.records[i].mean_score().expect("checked non-empty")).collect();
            let ratings = rescale_ratings(&means, target_min, target_max)?;
            for (&i, rating) in members.iter().zip(ratings) {
                records[i].rating = Some(rating);
            }
        }
        // Custom target ranges may fall outside the default validation range.
        let mut out = Corpus::new();
        for r in records {
            out.insert_unchecked(r);
        }
        Ok(out)
    }
}

/// Which records share min-max statistics during rescaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RescaleGrouping {
    #[default]
    Task,
    TaskLanguage,
}

/// Min-max maps aggregated scores of one group onto integers in
/// `[target_min, target_max]`, rounding half up. A group whose scores are
/// all equal maps to the midpoint of the target range.
pub fn rescale_ratings(scores: &[f64], target_min: i64, target_max: i64) -> Result<Vec<i64>, CorpusError> {
    if target_min >= target_max {
        return Err(CorpusError::EmptyTargetRange { min: target_min, max: target_max });
    }
    if scores.is_empty() {
        return Err(CorpusError::EmptyGroup);
    }
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (tmin, tmax) = (target_min as f64, target_max as f64);
    if hi == lo {
        let mid = round_half_up((tmin + tmax) / 2.0) as i64;
        return Ok(alloc::vec![mid; scores.len()]);
    }
    Ok(scores
        .iter()
        .map(|&s| {
            let scaled = tmin + (s - lo) / (hi - lo) * (tmax - tmin);
            (round_half_up(scaled) as i64).clamp(target_min, target_max)
        })
        .collect())
}

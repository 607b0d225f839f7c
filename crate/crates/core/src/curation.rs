//! Preference-pair and SFT dataset construction.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::corpus::{Corpus, GroupKey, RatedResponse};
use crate::metrics::{composite_weight, CreativityScores, Dimension, InjectionWeights, NormalizationStats};

pub const DEFAULT_MARGIN: i64 = 5;
pub const DEFAULT_MIN_RATING: i64 = 20;
pub const DEFAULT_MAX_PAIRINGS: usize = 10;
pub const DEFAULT_SFT_THRESHOLD: i64 = 30;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CurationError {
    #[error("record `{0}` has no rating; rescale the corpus first")]
    MissingRating(String),
    #[error("pair `{0}` has no creativity scores")]
    Unscored(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairingConfig {
    pub margin_min: i64,
    pub min_rating: i64,
    /// Participation cap per response, counting both chosen and rejected roles.
    pub max_pairings_per_response: usize,
}

impl Default for PairingConfig {
    fn default() -> Self {
        PairingConfig {
            margin_min: DEFAULT_MARGIN,
            min_rating: DEFAULT_MIN_RATING,
            max_pairings_per_response: DEFAULT_MAX_PAIRINGS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    pub task: String,
    /// Canonical (NFC, trimmed) prompt shared by both responses.
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub chosen_id: String,
    pub rejected_id: String,
    pub chosen_rating: i64,
    pub rejected_rating: i64,
    pub margin: i64,
    /// Creativity scores of the chosen response, once scored.
    pub scores: Option<CreativityScores>,
    /// Raw creativity scores of the rejected response, once scored. They
    /// never enter the weight; they let a trained policy be evaluated over
    /// every candidate.
    pub rejected_scores: Option<CreativityScores>,
    /// Composite injection weight, once scored.
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SftExample {
    pub task: String,
    pub prompt: String,
    pub response: String,
    pub rating: i64,
}

fn rating_of(r: &RatedResponse) -> Result<i64, CurationError> {
    r.rating.ok_or_else(|| CurationError::MissingRating(r.id.clone()))
}

/// Builds preference pairs within each (task, prompt) group.
///
/// Eligible ordered pairs have both ratings at least `min_rating` and a
/// rating gap of at least `margin_min`. They are admitted greedily by
/// descending margin, then ascending `(chosen_id, rejected_id)`, while
/// neither response has reached the participation cap. Output is sorted by
/// group key and then admission order, so it does not depend on input order.
pub fn build_preference_pairs(corpus: &Corpus, cfg: &PairingConfig) -> Result<Vec<PreferencePair>, CurationError> {
    let mut groups: Vec<(&GroupKey, Vec<&RatedResponse>)> =
        corpus.groups().map(|(k, members)| (k, members.collect())).collect();
    groups.sort_by(|a, b| a.0.cmp(b.0));

    let mut out = Vec::new();
    for (key, members) in groups {
        let mut eligible = Vec::new();
        for a in &members {
            let ra = rating_of(a)?;
            if ra < cfg.min_rating {
                continue;
            }
            for b in &members {
                let rb = rating_of(b)?;
                if a.id == b.id || rb < cfg.min_rating {
                    continue;
                }
                let margin = ra - rb;
                if margin >= cfg.margin_min {
                    eligible.push((margin, *a, *b));
                }
            }
        }
        eligible.sort_by(|x, y| y.0.cmp(&x.0).then_with(|| x.1.id.cmp(&y.1.id)).then_with(|| x.2.id.cmp(&y.2.id)));

        let mut used: BTreeMap<&str, usize> = BTreeMap::new();
        for (margin, chosen, rejected) in eligible {
            let cap = cfg.max_pairings_per_response;
            let c = used.get(chosen.id.as_str()).copied().unwrap_or(0);
            let r = used.get(rejected.id.as_str()).copied().unwrap_or(0);
            if c >= cap || r >= cap {
                continue;
            }
            used.insert(&chosen.id, c + 1);
            used.insert(&rejected.id, r + 1);
            out.push(PreferencePair {
                task: key.task.clone(),
                prompt: key.prompt.clone(),
                chosen: chosen.response.clone(),
                rejected: rejected.response.clone(),
                chosen_id: chosen.id.clone(),
                rejected_id: rejected.id.clone(),
                chosen_rating: margin + rating_of(rejected)?,
                rejected_rating: rating_of(rejected)?,
                margin,
                scores: None,
                rejected_scores: None,
                weight: None,
            });
        }
    }
    Ok(out)
}

/// Records rated strictly above `threshold`, sorted by (task, prompt, id).
pub fn build_sft_set(corpus: &Corpus, threshold: i64) -> Result<Vec<SftExample>, CurationError> {
    let mut picked = Vec::new();
    for r in corpus.records() {
        let rating = rating_of(r)?;
        if rating > threshold {
            picked.push((GroupKey::of(r), r.id.as_str(), r, rating));
        }
    }
    picked.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));
    Ok(picked
        .into_iter()
        .map(|(key, _, r, rating)| SftExample {
            task: key.task,
            prompt: key.prompt,
            response: r.response.clone(),
            rating,
        })
        .collect())
}

impl PreferencePair {
    /// `chosen_id>rejected_id`, unique within a pair set.
    pub fn pair_id(&self) -> String {
        let mut id = self.chosen_id.clone();
        id.push('>');
        id.push_str(&self.rejected_id);
        id
    }
}

/// Where normalization statistics are fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormalizationScope {
    #[default]
    Global,
    PerTask,
}

/// Min-max statistics keyed by task; the global scope uses `None`.
pub type ScopedStats = BTreeMap<Option<String>, NormalizationStats>;

/// Fits normalization statistics over the distinct chosen responses, stores
/// the normalized scores on every pair and sets the composite weights.
pub fn weight_pairs(
    pairs: &mut [PreferencePair],
    weights: &InjectionWeights,
    scope: NormalizationScope,
) -> Result<ScopedStats, CurationError> {
    let scope_of = |p: &PreferencePair| match scope {
        NormalizationScope::Global => None,
        NormalizationScope::PerTask => Some(p.task.clone()),
    };
    let mut seen = alloc::collections::BTreeSet::new();
    let mut columns: BTreeMap<Option<String>, Vec<&CreativityScores>> = BTreeMap::new();
    for p in pairs.iter() {
        let scores = p.scores.as_ref().ok_or_else(|| CurationError::Unscored(p.pair_id()))?;
        if seen.insert(p.chosen_id.as_str()) {
            columns.entry(scope_of(p)).or_default().push(scores);
        }
    }
    let stats: ScopedStats = columns.into_iter().map(|(k, v)| (k, NormalizationStats::fit(v))).collect();
    for p in pairs.iter_mut() {
        let st = &stats[&scope_of(p)];
        if let Some(s) = p.scores.as_mut() {
            s.normalized = Some(st.normalize(s));
        }
    }
    reweight_pairs(pairs, weights)?;
    Ok(stats)
}

/// Recomputes composite weights from already normalized scores.
pub fn reweight_pairs(pairs: &mut [PreferencePair], weights: &InjectionWeights) -> Result<(), CurationError> {
    for p in pairs.iter_mut() {
        let n = p.scores.as_ref().and_then(|s| s.normalized).ok_or_else(|| CurationError::Unscored(p.pair_id()))?;
        p.weight = Some(composite_weight(&n, weights));
    }
    Ok(())
}

/// Raw score of dimension `d` for every (prompt, response) that appears in
/// `pairs`, from chosen and rejected scores alike.
pub fn candidate_values(pairs: &[PreferencePair], d: Dimension) -> BTreeMap<(String, String), f64> {
    let mut out = BTreeMap::new();
    for p in pairs {
        for (resp, scores) in [(&p.chosen, &p.scores), (&p.rejected, &p.rejected_scores)] {
            if let Some(v) = scores.as_ref().and_then(|s| s.raw(d)) {
                out.insert((p.prompt.clone(), resp.clone()), v);
            }
        }
    }
    out
}

/// Anything [`dataset_stats`] can tally.
pub trait StatItem {
    fn task(&self) -> &str;
    fn prompt(&self) -> &str;
    /// Rating of the (chosen) response.
    fn rating(&self) -> i64;
    fn rejected_rating(&self) -> Option<i64> {
        None
    }
    fn margin(&self) -> Option<i64> {
        None
    }
}

impl StatItem for PreferencePair {
    fn task(&self) -> &str {
        &self.task
    }
    fn prompt(&self) -> &str {
        &self.prompt
    }
    fn rating(&self) -> i64 {
        self.chosen_rating
    }
    fn rejected_rating(&self) -> Option<i64> {
        Some(self.rejected_rating)
    }
    fn margin(&self) -> Option<i64> {
        Some(self.margin)
    }
}

impl StatItem for SftExample {
    fn task(&self) -> &str {
        &self.task
    }
    fn prompt(&self) -> &str {
        &self.prompt
    }
    fn rating(&self) -> i64 {
        self.rating
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetStats {
    pub total: usize,
    pub per_task: BTreeMap<String, usize>,
    pub per_prompt: BTreeMap<String, usize>,
    /// Chosen ratings for pairs, example ratings for SFT sets.
    pub ratings: BTreeMap<i64, usize>,
    pub rejected_ratings: BTreeMap<i64, usize>,
    pub margins: BTreeMap<i64, usize>,
}

pub fn dataset_stats<T: StatItem>(items: &[T]) -> DatasetStats {
    let mut s = DatasetStats { total: items.len(), ..DatasetStats::default() };
    for it in items {
        *s.per_task.entry(it.task().into()).or_default() += 1;
        *s.per_prompt.entry(it.prompt().into()).or_default() += 1;
        *s.ratings.entry(it.rating()).or_default() += 1;
        if let Some(r) = it.rejected_rating() {
            *s.rejected_ratings.entry(r).or_default() += 1;
        }
        if let Some(m) = it.margin() {
            *s.margins.entry(m).or_default() += 1;
        }
    }
    s
}

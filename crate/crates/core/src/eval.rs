//! Generation-set evaluation: creativity scores per generation, equivalence
//! partitioning with `distinct_k`, patience-discounted `utility_k`, and
//! majority-vote win rates over pairwise judgments.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::metrics::{
    diversity_score, novelty_score, surprise_score, CreativityScores, DsiConfig, EmbeddingVector, MetricError,
    SurpriseNormalization, WordVectors,
};
use crate::text::canonicalize;
use crate::union_find::UnionFind;

/// Generations per model in a NoveltyBench-style evaluation.
pub const DEFAULT_K: usize = 10;
/// User patience for `utility_k`.
pub const DEFAULT_PATIENCE: f64 = 0.8;
/// Default threshold of the cosine-similarity equivalence predicate.
pub const DEFAULT_COSINE_THRESHOLD: f64 = 0.9;
/// Samples drawn per decoding setup in [`decoding_grid`].
pub const SAMPLES_PER_SETUP: usize = 4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("generation {index}: {source}")]
    Generation { index: usize, source: MetricError },
    #[error("patience must lie in (0, 1), got {0}")]
    Patience(f64),
    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    Length { what: &'static str, got: usize, expected: usize },
    #[error("empty generation set")]
    Empty,
    #[error("invalid partition: {0}")]
    Partition(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DecodeParams {
    pub temperature: f64,
    pub top_p: Option<f64>,
    pub top_k: Option<u32>,
}

/// The high-randomness decoding grid: four setups, each sampled
/// [`SAMPLES_PER_SETUP`] times, giving 16 generations per prompt.
pub fn decoding_grid() -> Vec<DecodeParams> {
    let setups = [
        DecodeParams { temperature: 0.7, top_p: Some(0.95), top_k: None },
        DecodeParams { temperature: 0.9, top_p: Some(0.99), top_k: None },
        DecodeParams { temperature: 0.7, top_p: None, top_k: Some(50) },
        DecodeParams { temperature: 0.8, top_p: Some(0.97), top_k: None },
    ];
    setups.iter().flat_map(|s| core::iter::repeat_n(*s, SAMPLES_PER_SETUP)).collect()
}

/// k responses sampled from one model for one prompt.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GenerationSet {
    pub prompt_id: String,
    pub prompt: String,
    pub model_id: String,
    pub task: Option<String>,
    pub generations: Vec<String>,
    pub decode_params: Vec<DecodeParams>,
    pub per_gen_scores: Option<Vec<CreativityScores>>,
    /// 1-based class labels aligned with `generations`.
    pub partition: Option<Vec<usize>>,
}

impl GenerationSet {
    pub fn k(&self) -> usize {
        self.generations.len()
    }

    /// Partitions the generations by the transitive closure of `equivalent`
    /// (called on index pairs `i < j`), stores the partition and returns the
    /// number of classes.
    pub fn distinct_k(&mut self, equivalent: impl FnMut(usize, usize) -> bool) -> usize {
        let labels = partition(self.k(), equivalent);
        let n = class_count(&labels);
        self.partition = Some(labels);
        n
    }
}

/// 1-based class labels (numbered by first appearance) of the transitive
/// closure of `equivalent` over `0..k`.
pub fn partition(k: usize, mut equivalent: impl FnMut(usize, usize) -> bool) -> Vec<usize> {
    let mut uf = UnionFind::new(k);
    for i in 0..k {
        for j in (i + 1)..k {
            // pairs already joined need no predicate call
            if uf.find(i) != uf.find(j) && equivalent(i, j) {
                uf.union(i, j);
            }
        }
    }
    uf.labels()
}

pub fn class_count(labels: &[usize]) -> usize {
    labels.iter().copied().max().unwrap_or(0)
}

/// Number of equivalence classes among `generations`.
pub fn distinct_k(generations: &[String], equivalent: impl FnMut(usize, usize) -> bool) -> usize {
    class_count(&partition(generations.len(), equivalent))
}

/// Equality of canonicalized (NFC, trimmed) texts.
pub fn exact_match<S: AsRef<str>>(texts: &[S]) -> impl FnMut(usize, usize) -> bool + '_ {
    let canon: Vec<String> = texts.iter().map(|t| canonicalize(t.as_ref())).collect();
    move |i, j| canon[i] == canon[j]
}

/// Cosine similarity of embeddings at or above `threshold`.
pub fn cosine_equivalence(embeddings: &[EmbeddingVector], threshold: f64) -> impl FnMut(usize, usize) -> bool + '_ {
    move |i, j| embeddings[i].cosine_similarity(&embeddings[j]).map(|c| c >= threshold).unwrap_or(false)
}

/// Patience-discounted utility of a generation sequence:
/// `(1−p)/(1−p^k) · Σ_i p^(i−1) · [c_i is a new class] · u_i`.
/// Exponents index position, so duplicates still consume patience.
pub fn utility_k(partition: &[usize], utilities: &[f64], patience: f64) -> Result<f64, EvalError> {
    if !(patience > 0.0 && patience < 1.0) {
        return Err(EvalError::Patience(patience));
    }
    if partition.len() != utilities.len() {
        return Err(EvalError::Length { what: "utilities", got: utilities.len(), expected: partition.len() });
    }
    if partition.is_empty() {
        return Err(EvalError::Empty);
    }
    let k = partition.len();
    let mut seen = alloc::collections::BTreeSet::new();
    let mut discount = 1.0;
    let mut total = 0.0;
    for (c, u) in partition.iter().zip(utilities) {
        if seen.insert(*c) {
            total += discount * u;
        }
        discount *= patience;
    }
    let norm = (1.0 - patience) / (1.0 - libm::pow(patience, k as f64));
    Ok(norm * total)
}

/// Which texts served as the novelty reference for a generation set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoveltyReference {
    /// Human preferred responses for the prompt.
    Human,
    /// The generation set itself (no human reference available).
    SelfSet,
}

impl NoveltyReference {
    pub fn as_str(self) -> &'static str {
        match self {
            NoveltyReference::Human => "human",
            NoveltyReference::SelfSet => "self",
        }
    }
}

/// Provider results for one generation set, aligned with its generations.
pub struct GenerationInputs<'a, W: WordVectors> {
    pub embeddings: &'a [EmbeddingVector],
    pub logprobs: &'a [Vec<f64>],
    pub rewards: &'a [f64],
    pub words: &'a W,
    pub reference: Option<&'a [String]>,
    pub dsi: &'a DsiConfig,
    pub surprise: SurpriseNormalization,
}

/// Per-set means of each dimension. Diversity is `None` when no generation
/// has a defined diversity (k = 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DimensionMeans {
    pub diversity: Option<f64>,
    pub novelty: f64,
    pub surprise: f64,
    pub quality: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetScores {
    pub per_gen: Vec<CreativityScores>,
    pub means: DimensionMeans,
    pub novelty_reference: NoveltyReference,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Scores every generation of `gs`: diversity against the other k−1
/// generations, novelty against the human reference when given (otherwise
/// the set itself), surprise from token log-probabilities, quality from the
/// reward.
pub fn score_generation_set<W: WordVectors>(
    gs: &GenerationSet,
    inputs: &GenerationInputs<'_, W>,
) -> Result<SetScores, EvalError> {
    let k = gs.k();
    if k == 0 {
        return Err(EvalError::Empty);
    }
    for (what, got) in [
        ("embeddings", inputs.embeddings.len()),
        ("logprobs", inputs.logprobs.len()),
        ("rewards", inputs.rewards.len()),
    ] {
        if got != k {
            return Err(EvalError::Length { what, got, expected: k });
        }
    }
    let (reference, novelty_reference): (&[String], _) = match inputs.reference {
        Some(r) if !r.is_empty() => (r, NoveltyReference::Human),
        _ => (&gs.generations, NoveltyReference::SelfSet),
    };
    let at = |index: usize| move |source| EvalError::Generation { index, source };

    let mut per_gen = Vec::with_capacity(k);
    for i in 0..k {
        let peers: Vec<&EmbeddingVector> = (0..k).filter(|&j| j != i).map(|j| &inputs.embeddings[j]).collect();
        let diversity = match diversity_score(&inputs.embeddings[i], &peers) {
            Ok(d) => Some(d),
            Err(MetricError::NoPeers) => None,
            Err(e) => return Err(at(i)(e)),
        };
        let novelty = novelty_score(&gs.generations[i], reference, inputs.words, inputs.dsi).map_err(at(i))?;
        let surprise = surprise_score(&inputs.logprobs[i], inputs.surprise).map_err(at(i))?;
        per_gen.push(CreativityScores { diversity, novelty, surprise, quality: inputs.rewards[i], normalized: None });
    }
    let means = DimensionMeans {
        diversity: mean(per_gen.iter().filter_map(|s| s.diversity)),
        novelty: mean(per_gen.iter().map(|s| s.novelty)).unwrap_or(0.0),
        surprise: mean(per_gen.iter().map(|s| s.surprise)).unwrap_or(0.0),
        quality: mean(per_gen.iter().map(|s| s.quality)).unwrap_or(0.0),
    };
    Ok(SetScores { per_gen, means, novelty_reference })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Winner {
    A,
    B,
}

/// One rater's blind pairwise preference on one prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Judgment {
    pub prompt_id: String,
    pub model_a: String,
    pub model_b: String,
    pub rater_id: String,
    pub winner: Winner,
}

impl Judgment {
    pub fn winning_model(&self) -> &str {
        match self.winner {
            Winner::A => &self.model_a,
            Winner::B => &self.model_b,
        }
    }
}

/// Majority outcome of one (prompt, model pair) item. Models are stored in
/// sorted order regardless of presentation order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemResult {
    pub prompt_id: String,
    pub first: String,
    pub second: String,
    pub first_votes: usize,
    pub second_votes: usize,
    /// `None` on a tie.
    pub winner: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WinRate {
    pub model: String,
    pub opponent: String,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// `wins / (wins + losses)`; `None` when every item tied.
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WinRateTable {
    pub items: Vec<ItemResult>,
    /// Both orders of every compared model pair.
    pub rates: Vec<WinRate>,
    /// Judgments comparing a model against itself, which are ignored.
    pub skipped: usize,
}

/// Strict-majority item outcomes and per-model-pair win rates. Tied items
/// are excluded from the rate denominator.
pub fn win_rates(judgments: &[Judgment]) -> WinRateTable {
    let mut votes: BTreeMap<(String, String, String), (usize, usize)> = BTreeMap::new();
    let mut skipped = 0;
    for j in judgments {
        if j.model_a == j.model_b {
            skipped += 1;
            continue;
        }
        let (first, second) = if j.model_a < j.model_b { (&j.model_a, &j.model_b) } else { (&j.model_b, &j.model_a) };
        let entry = votes.entry((j.prompt_id.clone(), first.clone(), second.clone())).or_default();
        if j.winning_model() == first {
            entry.0 += 1;
        } else {
            entry.1 += 1;
        }
    }

    let mut tally: BTreeMap<(String, String), (usize, usize, usize)> = BTreeMap::new();
    let mut items = Vec::with_capacity(votes.len());
    for ((prompt_id, first, second), (v1, v2)) in votes {
        let total = v1 + v2;
        let winner = if 2 * v1 > total {
            Some(first.clone())
        } else if 2 * v2 > total {
            Some(second.clone())
        } else {
            None
        };
        let t = tally.entry((first.clone(), second.clone())).or_default();
        match &winner {
            Some(w) if *w == first => t.0 += 1,
            Some(_) => t.1 += 1,
            None => t.2 += 1,
        }
        items.push(ItemResult { prompt_id, first, second, first_votes: v1, second_votes: v2, winner });
    }

    let rate = |w: usize, l: usize| (w + l > 0).then(|| w as f64 / (w + l) as f64);
    let mut rates = Vec::new();
    for ((first, second), (w, l, t)) in tally {
        rates.push(WinRate {
            model: first.clone(),
            opponent: second.clone(),
            wins: w,
            losses: l,
            ties: t,
            rate: rate(w, l),
        });
        rates.push(WinRate { model: second, opponent: first, wins: l, losses: w, ties: t, rate: rate(l, w) });
    }
    rates.sort_by(|a, b| (&a.model, &a.opponent).cmp(&(&b.model, &b.opponent)));
    WinRateTable { items, rates, skipped }
}

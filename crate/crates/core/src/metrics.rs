//! Creativity metrics: diversity, novelty (via DSI), surprise and quality,
//! plus min-max normalization and the composite injection weight.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::numeric::{exp2, sqrt, LN_2};
use crate::text::unique_words;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("embedding dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero-norm embedding")]
    ZeroVector,
    #[error("embedding is empty or has non-finite components")]
    InvalidVector,
    #[error("diversity is undefined without peers")]
    NoPeers,
    #[error("no embedding for `{0}`")]
    MissingEmbedding(String),
    #[error("no embedding for word `{0}`")]
    MissingWord(String),
    #[error("empty token list")]
    EmptyTokens,
    #[error("token {index}: log-probability {value} is not a finite value <= 0")]
    InvalidLogprob { index: usize, value: f64 },
    #[error("empty reference corpus")]
    EmptyReference,
    #[error("injection weights: {0}")]
    InvalidWeights(&'static str),
    #[error("unknown {kind} `{value}`")]
    UnknownVariant { kind: &'static str, value: String },
}

/// A text embedding with its Euclidean norm cached. Never zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    norm: f64,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, MetricError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(MetricError::InvalidVector);
        }
        let norm = sqrt(values.iter().map(|v| v * v).sum());
        if norm == 0.0 {
            return Err(MetricError::ZeroVector);
        }
        Ok(EmbeddingVector { values, norm })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn cosine_similarity(&self, other: &Self) -> Result<f64, MetricError> {
        if self.dim() != other.dim() {
            return Err(MetricError::DimensionMismatch(self.dim(), other.dim()));
        }
        let dot: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        Ok((dot / (self.norm * other.norm)).clamp(-1.0, 1.0))
    }
}

/// `1 - cos_sim(a, b)`, in `[0, 2]`.
pub fn semantic_distance(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, MetricError> {
    Ok(1.0 - a.cosine_similarity(b)?)
}

/// Mean semantic distance from `target` to each of `peers`.
pub fn diversity_score(target: &EmbeddingVector, peers: &[&EmbeddingVector]) -> Result<f64, MetricError> {
    if peers.is_empty() {
        return Err(MetricError::NoPeers);
    }
    let mut total = 0.0;
    for p in peers {
        total += semantic_distance(target, p)?;
    }
    Ok(total / peers.len() as f64)
}

/// Diversity of `target` within the preferred set `group` (which may
/// include `target` itself; it is excluded from the peers).
pub fn diversity_in_group(
    target: &str,
    group: &[&str],
    embeddings: &BTreeMap<String, EmbeddingVector>,
) -> Result<f64, MetricError> {
    let lookup = |id: &str| embeddings.get(id).ok_or_else(|| MetricError::MissingEmbedding(id.into()));
    let t = lookup(target)?;
    let peers = group.iter().filter(|id| **id != target).map(|id| lookup(id)).collect::<Result<Vec<_>, _>>()?;
    diversity_score(t, &peers)
}

/// Word-vector source for DSI.
pub trait WordVectors {
    fn word_vector(&self, word: &str) -> Option<&EmbeddingVector>;
}

impl WordVectors for BTreeMap<String, EmbeddingVector> {
    fn word_vector(&self, word: &str) -> Option<&EmbeddingVector> {
        self.get(word)
    }
}

/// Denominator used by DSI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DsiMode {
    /// Ordered-pair distance sum divided by the number of unique words.
    #[default]
    PaperLiteral,
    /// Mean over unordered word pairs.
    PairMean,
}

impl DsiMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DsiMode::PaperLiteral => "paper_literal",
            DsiMode::PairMean => "pair_mean",
        }
    }
}

impl FromStr for DsiMode {
    type Err = MetricError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper_literal" => Ok(DsiMode::PaperLiteral),
            "pair_mean" => Ok(DsiMode::PairMean),
            _ => Err(MetricError::UnknownVariant { kind: "dsi mode", value: s.into() }),
        }
    }
}

impl fmt::Display for DsiMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DsiConfig {
    pub mode: DsiMode,
    pub stopwords: Option<BTreeSet<String>>,
}

/// Sum of semantic distances over unordered pairs of `words`.
pub fn word_pair_distance_sum(words: &[String], vectors: &impl WordVectors) -> Result<f64, MetricError> {
    let vecs = words
        .iter()
        .map(|w| vectors.word_vector(w).ok_or_else(|| MetricError::MissingWord(w.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let mut sum = 0.0;
    for i in 0..vecs.len() {
        for j in (i + 1)..vecs.len() {
            sum += semantic_distance(vecs[i], vecs[j])?;
        }
    }
    Ok(sum)
}

/// DSI over an already-segmented set of unique words.
pub fn dsi_of_words(words: &[String], vectors: &impl WordVectors, mode: DsiMode) -> Result<f64, MetricError> {
    let n = words.len();
    let sum = word_pair_distance_sum(words, vectors)?;
    if n <= 1 {
        return Ok(0.0);
    }
    let n = n as f64;
    Ok(match mode {
        DsiMode::PaperLiteral => 2.0 * sum / n,
        DsiMode::PairMean => sum / (n * (n - 1.0) / 2.0),
    })
}

/// Divergent semantic integration of a text.
pub fn dsi(text: &str, vectors: &impl WordVectors, cfg: &DsiConfig) -> Result<f64, MetricError> {
    let words = unique_words(text, cfg.stopwords.as_ref());
    dsi_of_words(&words, vectors, cfg.mode)
}

/// Pools reference texts into one text for corpus-level DSI.
pub fn pooled_text<S: AsRef<str>>(texts: &[S]) -> String {
    let mut out = String::new();
    for (i, t) in texts.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(t.as_ref());
    }
    out
}

/// `|DSI(response) - DSI(pooled reference)|`.
pub fn novelty_score<S: AsRef<str>>(
    response: &str,
    reference: &[S],
    vectors: &impl WordVectors,
    cfg: &DsiConfig,
) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let own = dsi(response, vectors, cfg)?;
    let pooled = dsi(&pooled_text(reference), vectors, cfg)?;
    Ok(libm::fabs(own - pooled))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SurpriseNormalization {
    /// Base-2 perplexity: `2^(bits / n)`.
    #[default]
    PerToken,
    /// `2^bits` of the whole response.
    Total,
}

impl SurpriseNormalization {
    pub fn as_str(self) -> &'static str {
        match self {
            SurpriseNormalization::PerToken => "per_token",
            SurpriseNormalization::Total => "total",
        }
    }
}

impl FromStr for SurpriseNormalization {
    type Err = MetricError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per_token" => Ok(SurpriseNormalization::PerToken),
            "total" => Ok(SurpriseNormalization::Total),
            _ => Err(MetricError::UnknownVariant { kind: "surprise normalization", value: s.into() }),
        }
    }
}

/// Exponentiated negative log-likelihood of a response.
///
/// `token_logprobs` are natural-log probabilities; they are converted to
/// bits here and nowhere else.
pub fn surprise_score(token_logprobs: &[f64], normalization: SurpriseNormalization) -> Result<f64, MetricError> {
    if token_logprobs.is_empty() {
        return Err(MetricError::EmptyTokens);
    }
    let mut bits = 0.0;
    for (index, &lp) in token_logprobs.iter().enumerate() {
        if !lp.is_finite() || lp > 0.0 {
            return Err(MetricError::InvalidLogprob { index, value: lp });
        }
        bits += -lp / LN_2;
    }
    let exponent = match normalization {
        SurpriseNormalization::PerToken => bits / token_logprobs.len() as f64,
        SurpriseNormalization::Total => bits,
    };
    Ok(exp2(exponent))
}

/// Scalar reward for a (prompt, response) pair.
pub trait RewardModel {
    type Error;
    fn reward(&self, prompt: &str, response: &str) -> Result<f64, Self::Error>;
}

impl<F, E> RewardModel for F
where
    F: Fn(&str, &str) -> Result<f64, E>,
{
    type Error = E;
    fn reward(&self, prompt: &str, response: &str) -> Result<f64, E> {
        self(prompt, response)
    }
}

/// Reward-model score, passed through unscaled.
pub fn quality_score<R: RewardModel>(prompt: &str, response: &str, model: &R) -> Result<f64, R::Error> {
    model.reward(prompt, response)
}

/// Min-max statistics of one metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    /// `None` for an empty input.
    pub fn fit(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        Some(MinMax {
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }

    /// Maps into `[0, 1]`; a degenerate range maps everything to 0.5.
    pub fn apply(&self, x: f64) -> f64 {
        if self.max == self.min {
            0.5
        } else {
            ((x - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
        }
    }
}

pub fn normalize_scores(raw: &[f64]) -> Vec<f64> {
    match MinMax::fit(raw) {
        None => Vec::new(),
        Some(mm) => raw.iter().map(|&x| mm.apply(x)).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Dimension {
    Diversity,
    Novelty,
    Surprise,
    Quality,
}

impl Dimension {
    pub const ALL: [Dimension; 4] = [Dimension::Diversity, Dimension::Novelty, Dimension::Surprise, Dimension::Quality];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Diversity => "diversity",
            Dimension::Novelty => "novelty",
            Dimension::Surprise => "surprise",
            Dimension::Quality => "quality",
        }
    }
}

impl FromStr for Dimension {
    type Err = MetricError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Dimension::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| MetricError::UnknownVariant { kind: "dimension", value: s.into() })
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-dimension values in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedScores {
    pub diversity: f64,
    pub novelty: f64,
    pub surprise: f64,
    pub quality: f64,
}

impl NormalizedScores {
    pub fn get(&self, d: Dimension) -> f64 {
        match d {
            Dimension::Diversity => self.diversity,
            Dimension::Novelty => self.novelty,
            Dimension::Surprise => self.surprise,
            Dimension::Quality => self.quality,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CreativityScores {
    /// `None` when the response has no peers in its prompt group.
    pub diversity: Option<f64>,
    pub novelty: f64,
    pub surprise: f64,
    pub quality: f64,
    pub normalized: Option<NormalizedScores>,
}

impl CreativityScores {
    pub fn raw(&self, d: Dimension) -> Option<f64> {
        match d {
            Dimension::Diversity => self.diversity,
            Dimension::Novelty => Some(self.novelty),
            Dimension::Surprise => Some(self.surprise),
            Dimension::Quality => Some(self.quality),
        }
    }
}

/// Per-dimension min-max statistics over a score collection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationStats {
    pub diversity: Option<MinMax>,
    pub novelty: Option<MinMax>,
    pub surprise: Option<MinMax>,
    pub quality: Option<MinMax>,
}

impl NormalizationStats {
    /// Fits statistics over the defined values of each dimension.
    pub fn fit<'a>(scores: impl IntoIterator<Item = &'a CreativityScores>) -> Self {
        let mut cols: [Vec<f64>; 4] = Default::default();
        for s in scores {
            for (i, d) in Dimension::ALL.into_iter().enumerate() {
                if let Some(v) = s.raw(d) {
                    cols[i].push(v);
                }
            }
        }
        NormalizationStats {
            diversity: MinMax::fit(&cols[0]),
            novelty: MinMax::fit(&cols[1]),
            surprise: MinMax::fit(&cols[2]),
            quality: MinMax::fit(&cols[3]),
        }
    }

    pub fn get(&self, d: Dimension) -> Option<MinMax> {
        match d {
            Dimension::Diversity => self.diversity,
            Dimension::Novelty => self.novelty,
            Dimension::Surprise => self.surprise,
            Dimension::Quality => self.quality,
        }
    }

    /// Normalized scores; undefined values (absent diversity) map to 0.5.
    pub fn normalize(&self, s: &CreativityScores) -> NormalizedScores {
        let norm = |d: Dimension| match (s.raw(d), self.get(d)) {
            (Some(v), Some(mm)) => mm.apply(v),
            _ => 0.5,
        };
        NormalizedScores {
            diversity: norm(Dimension::Diversity),
            novelty: norm(Dimension::Novelty),
            surprise: norm(Dimension::Surprise),
            quality: norm(Dimension::Quality),
        }
    }
}

/// Injection weights of the creativity-weighted objective and the DPO
/// temperature. `base` is a constant offset: `base = 1` with all other
/// weights zero is plain DPO.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InjectionWeights {
    pub base: f64,
    pub diversity: f64,
    pub novelty: f64,
    pub surprise: f64,
    pub quality: f64,
    pub beta: f64,
}

pub const DEFAULT_BETA: f64 = 0.1;

impl Default for InjectionWeights {
    fn default() -> Self {
        InjectionWeights { base: 0.0, diversity: 1.0, novelty: 1.0, surprise: 1.0, quality: 1.0, beta: DEFAULT_BETA }
    }
}

impl InjectionWeights {
    pub fn zero(beta: f64) -> Self {
        InjectionWeights { base: 0.0, diversity: 0.0, novelty: 0.0, surprise: 0.0, quality: 0.0, beta }
    }

    pub fn dpo(beta: f64) -> Self {
        InjectionWeights { base: 1.0, ..Self::zero(beta) }
    }

    pub fn get(&self, d: Dimension) -> f64 {
        match d {
            Dimension::Diversity => self.diversity,
            Dimension::Novelty => self.novelty,
            Dimension::Surprise => self.surprise,
            Dimension::Quality => self.quality,
        }
    }

    pub fn set(&mut self, d: Dimension, value: f64) {
        match d {
            Dimension::Diversity => self.diversity = value,
            Dimension::Novelty => self.novelty = value,
            Dimension::Surprise => self.surprise = value,
            Dimension::Quality => self.quality = value,
        }
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        let lambdas = [self.base, self.diversity, self.novelty, self.surprise, self.quality];
        if lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(MetricError::InvalidWeights("weights must be finite and non-negative"));
        }
        if lambdas.iter().all(|l| *l == 0.0) {
            return Err(MetricError::InvalidWeights("at least one weight must be positive"));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(MetricError::InvalidWeights("beta must be positive"));
        }
        Ok(())
    }
}

/// `base + Σ λ_dim · score_dim` over normalized scores.
pub fn composite_weight(normalized: &NormalizedScores, w: &InjectionWeights) -> f64 {
    w.base
        + w.diversity * normalized.diversity
        + w.novelty * normalized.novelty
        + w.surprise * normalized.surprise
        + w.quality * normalized.quality
}

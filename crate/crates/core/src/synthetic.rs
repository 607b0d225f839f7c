//! Seeded synthetic corpora with planted creativity scores, for exercising
//! the trainer at desk scale without any provider.
//!
//! Ratings and the four raw scores are drawn independently, so a plain
//! preference objective has no reason to favour any score while a weighted
//! one should move policy mass toward responses that score high on the
//! weighted dimension.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, RatedResponse, Split};
use crate::curation::{
    build_preference_pairs, build_sft_set, weight_pairs, CurationError, NormalizationScope, PairingConfig,
    PreferencePair,
};
use crate::metrics::{CreativityScores, InjectionWeights};
use crate::policy::{fit_reference_policy, policy_tables, PolicyError, TabularPolicy};

pub const SYNTHETIC_TASK: &str = "synthetic";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticConfig {
    pub prompts: usize,
    pub candidates: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig { prompts: 20, candidates: 6, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    corpus: Corpus,
    scores: BTreeMap<String, CreativityScores>,
}

impl SyntheticDataset {
    pub fn generate(cfg: &SyntheticConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut corpus = Corpus::new();
        let mut scores = BTreeMap::new();
        for p in 0..cfg.prompts {
            let prompt = format!("Synthetic prompt {p:03}");
            for c in 0..cfg.candidates {
                let id = format!("syn-{p:03}-{c:02}");
                let rating = rng.random_range(15..=50);
                let record = RatedResponse {
                    id: id.clone(),
                    task: SYNTHETIC_TASK.into(),
                    language: "en".into(),
                    prompt: prompt.clone(),
                    response: format!("Answer {c} to prompt {p}"),
                    rater_scores: alloc::vec![rating as f64],
                    rating: Some(rating),
                    split: Split::Train,
                    extra: BTreeMap::new(),
                };
                corpus.push(record).expect("synthetic ids are unique");
                scores.insert(
                    id,
                    CreativityScores {
                        diversity: Some(rng.random_range(0.05..0.95)),
                        novelty: rng.random_range(0.0..0.4),
                        surprise: rng.random_range(2.0..80.0),
                        quality: rng.random_range(-2.0..3.0),
                        normalized: None,
                    },
                );
            }
        }
        SyntheticDataset { corpus, scores }
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    /// Planted raw scores by record id.
    pub fn scores(&self) -> &BTreeMap<String, CreativityScores> {
        &self.scores
    }

    /// Curated pairs carrying the planted scores and composite weights.
    pub fn scored_pairs(
        &self,
        pairing: &PairingConfig,
        weights: &InjectionWeights,
    ) -> Result<Vec<PreferencePair>, CurationError> {
        let mut pairs = build_preference_pairs(&self.corpus, pairing)?;
        for p in pairs.iter_mut() {
            p.scores = self.scores.get(&p.chosen_id).cloned();
            p.rejected_scores = self.scores.get(&p.rejected_id).cloned();
        }
        weight_pairs(&mut pairs, weights, NormalizationScope::Global)?;
        Ok(pairs)
    }

    /// Reference policy over every response of every prompt, fitted to the
    /// SFT subset above `threshold`.
    pub fn reference_policy(&self, threshold: i64) -> Result<TabularPolicy, PolicyError> {
        let (prompts, candidates) =
            policy_tables(self.corpus.records().iter().map(|r| (r.prompt.as_str(), r.response.as_str())));
        let sft = build_sft_set(&self.corpus, threshold).map_err(|_| PolicyError::NoPairs)?;
        fit_reference_policy(sft.iter().map(|s| (s.prompt.as_str(), s.response.as_str())), prompts, candidates)
    }

    /// Planted raw value of `d` for every (prompt, response).
    pub fn values(&self, d: crate::metrics::Dimension) -> BTreeMap<(String, String), f64> {
        self.corpus
            .records()
            .iter()
            .filter_map(|r| {
                let v = self.scores.get(&r.id)?.raw(d)?;
                Some(((r.prompt.clone(), r.response.clone()), v))
            })
            .collect()
    }
}

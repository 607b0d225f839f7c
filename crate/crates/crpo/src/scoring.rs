//! Scores preference pairs with the four creativity metrics and attaches
//! normalized scores and composite weights.
//!
//! Y_x, the preferred set of a prompt group, is the set of distinct chosen
//! responses of that group. Each chosen response is scored against Y_x
//! without itself; rejected responses are scored against all of Y_x (their
//! scores never enter the weight but let trained policies be evaluated over
//! every candidate).

use std::collections::{BTreeMap, BTreeSet};

use anyhow::Context;
use crpo_core::curation::{weight_pairs, NormalizationScope, PreferencePair, ScopedStats};
use crpo_core::metrics::{
    diversity_score, dsi, pooled_text, surprise_score, CreativityScores, Dimension, DsiConfig, EmbeddingVector,
    InjectionWeights, SurpriseNormalization,
};
use crpo_core::text::unique_words;
use rayon::prelude::*;
use serde::Serialize;

use crate::providers::ProviderClient;

pub struct Providers<'a> {
    pub embedding: &'a ProviderClient,
    pub likelihood: &'a ProviderClient,
    pub reward: &'a ProviderClient,
}

#[derive(Debug, Clone)]
pub struct ScoreSettings {
    pub dsi: DsiConfig,
    pub surprise: SurpriseNormalization,
    pub scope: NormalizationScope,
    pub weights: InjectionWeights,
}

/// Per-metric min/max of one normalization scope, for output headers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScopeStats {
    pub scope: String,
    pub min: BTreeMap<&'static str, Option<f64>>,
    pub max: BTreeMap<&'static str, Option<f64>>,
}

pub fn describe_stats(stats: &ScopedStats) -> Vec<ScopeStats> {
    stats
        .iter()
        .map(|(scope, st)| {
            let mut min = BTreeMap::new();
            let mut max = BTreeMap::new();
            for d in Dimension::ALL {
                let mm = st.get(d);
                min.insert(d.as_str(), mm.map(|m| m.min));
                max.insert(d.as_str(), mm.map(|m| m.max));
            }
            ScopeStats { scope: scope.clone().unwrap_or_else(|| "global".into()), min, max }
        })
        .collect()
}

struct Response<'a> {
    group: usize,
    prompt: &'a str,
    text: &'a str,
}

/// Scores every pair in place and returns the fitted normalization stats.
pub fn score_pairs(
    pairs: &mut [PreferencePair],
    providers: &Providers<'_>,
    settings: &ScoreSettings,
) -> anyhow::Result<ScopedStats> {
    // groups and their preferred sets, ordered by id for order independence
    let mut group_of: BTreeMap<(String, String), usize> = BTreeMap::new();
    let mut preferred: Vec<BTreeMap<String, String>> = Vec::new();
    let mut responses: BTreeMap<String, Response<'_>> = BTreeMap::new();
    for p in pairs.iter() {
        let next = group_of.len();
        let g = *group_of.entry((p.task.clone(), p.prompt.clone())).or_insert(next);
        if g == preferred.len() {
            preferred.push(BTreeMap::new());
        }
        preferred[g].insert(p.chosen_id.clone(), p.chosen.clone());
        for (id, text) in [(&p.chosen_id, &p.chosen), (&p.rejected_id, &p.rejected)] {
            responses.entry(id.clone()).or_insert(Response { group: g, prompt: &p.prompt, text });
        }
    }

    let texts: Vec<String> =
        responses.values().map(|r| r.text.to_string()).collect::<BTreeSet<_>>().into_iter().collect();
    let embeddings: BTreeMap<String, EmbeddingVector> =
        texts.iter().cloned().zip(providers.embedding.embed_batch(&texts).context("embedding responses")?).collect();

    let words: Vec<String> = texts
        .iter()
        .flat_map(|t| unique_words(t, settings.dsi.stopwords.as_ref()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let word_vectors: BTreeMap<String, EmbeddingVector> = if words.is_empty() {
        BTreeMap::new()
    } else {
        words.iter().cloned().zip(providers.embedding.embed_batch(&words).context("embedding words")?).collect()
    };

    let conditioned: Vec<(String, String)> = responses
        .values()
        .map(|r| (r.prompt.to_string(), r.text.to_string()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let logprobs: BTreeMap<(String, String), Vec<f64>> = conditioned
        .iter()
        .cloned()
        .zip(providers.likelihood.loglikelihood_batch(&conditioned).context("token log-likelihoods")?)
        .collect();
    let rewards: BTreeMap<(String, String), f64> =
        conditioned.iter().cloned().zip(providers.reward.reward_batch(&conditioned).context("rewards")?).collect();

    let pooled: Vec<f64> = preferred
        .par_iter()
        .map(|set| {
            let texts: Vec<&String> = set.values().collect();
            dsi(&pooled_text(&texts), &word_vectors, &settings.dsi)
        })
        .collect::<Result<_, _>>()
        .context("DSI of a preferred set")?;

    let ids: Vec<&String> = responses.keys().collect();
    let scored: Vec<CreativityScores> = ids
        .par_iter()
        .map(|id| -> anyhow::Result<CreativityScores> {
            let r = &responses[*id];
            let own = &embeddings[r.text];
            let peers: Vec<&EmbeddingVector> =
                preferred[r.group].iter().filter(|(pid, _)| *pid != *id).map(|(_, text)| &embeddings[text]).collect();
            let diversity = if peers.is_empty() { None } else { Some(diversity_score(own, &peers)?) };
            let novelty = (dsi(r.text, &word_vectors, &settings.dsi)? - pooled[r.group]).abs();
            let key = (r.prompt.to_string(), r.text.to_string());
            let surprise = surprise_score(&logprobs[&key], settings.surprise)?;
            Ok(CreativityScores { diversity, novelty, surprise, quality: rewards[&key], normalized: None })
        })
        .collect::<anyhow::Result<_>>()?;
    let by_id: BTreeMap<String, CreativityScores> = ids.into_iter().cloned().zip(scored).collect();

    for p in pairs.iter_mut() {
        p.scores = Some(by_id[&p.chosen_id].clone());
        p.rejected_scores = Some(by_id[&p.rejected_id].clone());
    }
    Ok(weight_pairs(pairs, &settings.weights, settings.scope)?)
}

//! Generation-set evaluation over providers, and its report files.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use anyhow::{anyhow, bail};
use crpo_core::eval::{
    class_count, cosine_equivalence, exact_match, partition, score_generation_set, utility_k, DimensionMeans,
    GenerationInputs, GenerationSet, NoveltyReference, WinRateTable,
};
use crpo_core::metrics::{CreativityScores, Dimension, DsiConfig, EmbeddingVector, SurpriseNormalization};
use crpo_core::text::{canonicalize, unique_words};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::providers::ProviderError;
use crate::records::{csv_writer, write_jsonl, Header, ScoreFields};
use crate::scoring::Providers;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Equivalence {
    #[default]
    Exact,
    Cosine,
}

/// Per-generation utility fed to `utility_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Utility {
    /// The reward-model score.
    #[default]
    Quality,
    /// Constant 1, so `utility_k` measures discounted novelty alone.
    One,
}

#[derive(Debug, Clone)]
pub struct EvalSettings {
    pub k: usize,
    pub patience: f64,
    pub equivalence: Equivalence,
    pub cosine_threshold: f64,
    pub utility: Utility,
    pub dsi: DsiConfig,
    pub surprise: SurpriseNormalization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetResult {
    pub prompt_id: String,
    pub model_id: String,
    pub task: Option<String>,
    pub k: usize,
    pub distinct_k: usize,
    pub utility_k: f64,
    pub partition: Vec<usize>,
    pub novelty_reference: String,
    pub diversity: Option<f64>,
    pub novelty: f64,
    pub surprise: f64,
    pub quality: f64,
    pub per_generation: Vec<ScoreFields>,
}

/// Human preferred responses by canonical prompt.
pub type References = BTreeMap<String, Vec<String>>;

fn locate(err: ProviderError, slots: &[(usize, usize)], sets: &[GenerationSet], what: &str) -> anyhow::Error {
    let at = |i: usize| {
        slots
            .get(i)
            .map(|&(s, g)| format!("set {}/{} generation {g}", sets[s].prompt_id, sets[s].model_id))
            .unwrap_or_else(|| format!("input {i}"))
    };
    let place = match &err {
        ProviderError::Failed { indices, .. } if !indices.is_empty() => at(indices[0]),
        ProviderError::InvalidInput { index, .. } | ProviderError::InvalidOutput { index, .. } => at(*index),
        _ => String::new(),
    };
    if place.is_empty() {
        anyhow!("{what}: {err}")
    } else {
        anyhow!("{what} ({place}): {err}")
    }
}

/// Evaluates every set, truncated to its first `k` generations.
pub fn evaluate_sets(
    mut sets: Vec<GenerationSet>,
    references: &References,
    providers: &Providers<'_>,
    settings: &EvalSettings,
) -> anyhow::Result<Vec<SetResult>> {
    if settings.k == 0 {
        bail!("k must be at least 1");
    }
    for s in sets.iter_mut() {
        s.generations.truncate(settings.k);
        s.decode_params.truncate(settings.k);
    }
    let slots: Vec<(usize, usize)> =
        sets.iter().enumerate().flat_map(|(s, set)| (0..set.k()).map(move |g| (s, g))).collect();
    let flat_texts: Vec<String> = slots.iter().map(|&(s, g)| sets[s].generations[g].clone()).collect();
    let flat_pairs: Vec<(String, String)> =
        slots.iter().map(|&(s, g)| (sets[s].prompt.clone(), sets[s].generations[g].clone())).collect();

    let embeddings =
        providers.embedding.embed_batch(&flat_texts).map_err(|e| locate(e, &slots, &sets, "embedding generations"))?;
    let mut word_set: BTreeSet<String> = BTreeSet::new();
    for t in flat_texts.iter().chain(references.values().flatten()) {
        word_set.extend(unique_words(t, settings.dsi.stopwords.as_ref()));
    }
    let words: Vec<String> = word_set.into_iter().collect();
    let word_vectors: BTreeMap<String, EmbeddingVector> = if words.is_empty() {
        BTreeMap::new()
    } else {
        words.iter().cloned().zip(providers.embedding.embed_batch(&words)?).collect()
    };
    let logprobs = providers
        .likelihood
        .loglikelihood_batch(&flat_pairs)
        .map_err(|e| locate(e, &slots, &sets, "token log-likelihoods"))?;
    let rewards = providers.reward.reward_batch(&flat_pairs).map_err(|e| locate(e, &slots, &sets, "rewards"))?;

    let mut offsets = Vec::with_capacity(sets.len());
    let mut acc = 0;
    for s in &sets {
        offsets.push(acc);
        acc += s.k();
    }

    sets.par_iter()
        .zip(offsets.par_iter())
        .map(|(set, &off)| -> anyhow::Result<SetResult> {
            let k = set.k();
            let range = off..off + k;
            let reference = references.get(&canonicalize(&set.prompt)).map(Vec::as_slice);
            let inputs = GenerationInputs {
                embeddings: &embeddings[range.clone()],
                logprobs: &logprobs[range.clone()],
                rewards: &rewards[range.clone()],
                words: &word_vectors,
                reference,
                dsi: &settings.dsi,
                surprise: settings.surprise,
            };
            let scores = score_generation_set(set, &inputs)
                .map_err(|e| anyhow!("set {}/{}: {e}", set.prompt_id, set.model_id))?;
            let labels = match settings.equivalence {
                Equivalence::Exact => partition(k, exact_match(&set.generations)),
                Equivalence::Cosine => partition(k, cosine_equivalence(inputs.embeddings, settings.cosine_threshold)),
            };
            let utilities: Vec<f64> = match settings.utility {
                Utility::Quality => inputs.rewards.to_vec(),
                Utility::One => vec![1.0; k],
            };
            let u = utility_k(&labels, &utilities, settings.patience)?;
            let DimensionMeans { diversity, novelty, surprise, quality } = scores.means;
            Ok(SetResult {
                prompt_id: set.prompt_id.clone(),
                model_id: set.model_id.clone(),
                task: set.task.clone(),
                k,
                distinct_k: class_count(&labels),
                utility_k: u,
                partition: labels,
                novelty_reference: match scores.novelty_reference {
                    NoveltyReference::Human => "human".into(),
                    NoveltyReference::SelfSet => "self".into(),
                },
                diversity,
                novelty,
                surprise,
                quality,
                per_generation: scores.per_gen.iter().map(ScoreFields::from).collect(),
            })
        })
        .collect()
}

/// Per-set mean of each column, grouped by model and task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model_id: String,
    /// `all` for the model-level row.
    pub task: String,
    pub sets: usize,
    /// Sets with a defined diversity (k ≥ 2).
    pub diversity_sets: usize,
    pub generations: usize,
    pub diversity: Option<f64>,
    pub novelty: f64,
    pub surprise: f64,
    pub quality: f64,
    pub distinct_k: f64,
    pub utility_k: f64,
}

pub const ALL_TASKS: &str = "all";
pub const NO_TASK: &str = "none";

fn summarize_group(model: &str, task: &str, results: &[&SetResult]) -> SummaryRow {
    let n = results.len() as f64;
    let mean = |f: &dyn Fn(&SetResult) -> f64| results.iter().map(|r| f(r)).sum::<f64>() / n;
    let div: Vec<f64> = results.iter().filter_map(|r| r.diversity).collect();
    SummaryRow {
        model_id: model.into(),
        task: task.into(),
        sets: results.len(),
        diversity_sets: div.len(),
        generations: results.iter().map(|r| r.k).sum(),
        diversity: (!div.is_empty()).then(|| div.iter().sum::<f64>() / div.len() as f64),
        novelty: mean(&|r| r.novelty),
        surprise: mean(&|r| r.surprise),
        quality: mean(&|r| r.quality),
        distinct_k: mean(&|r| r.distinct_k as f64),
        utility_k: mean(&|r| r.utility_k),
    }
}

/// One `all` row per model (sorted by model) followed by its per-task rows
/// (sorted by task).
pub fn summarize(results: &[SetResult]) -> Vec<SummaryRow> {
    let mut by_model: BTreeMap<&str, BTreeMap<&str, Vec<&SetResult>>> = BTreeMap::new();
    for r in results {
        by_model.entry(&r.model_id).or_default().entry(r.task.as_deref().unwrap_or(NO_TASK)).or_default().push(r);
    }
    let mut rows = Vec::new();
    for (model, tasks) in by_model {
        let all: Vec<&SetResult> = tasks.values().flatten().copied().collect();
        rows.push(summarize_group(model, ALL_TASKS, &all));
        for (task, rs) in tasks {
            rows.push(summarize_group(model, task, &rs));
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotPoint {
    pub model_id: String,
    pub x_dimension: &'static str,
    pub y_dimension: &'static str,
    pub x: Option<f64>,
    pub y: Option<f64>,
}

/// Model-level means for every pair of dimensions.
pub fn plot_points(rows: &[SummaryRow]) -> Vec<PlotPoint> {
    let value = |r: &SummaryRow, d: Dimension| match d {
        Dimension::Diversity => r.diversity,
        Dimension::Novelty => Some(r.novelty),
        Dimension::Surprise => Some(r.surprise),
        Dimension::Quality => Some(r.quality),
    };
    let mut out = Vec::new();
    for r in rows.iter().filter(|r| r.task == ALL_TASKS) {
        for (i, x) in Dimension::ALL.iter().enumerate() {
            for y in &Dimension::ALL[i + 1..] {
                out.push(PlotPoint {
                    model_id: r.model_id.clone(),
                    x_dimension: x.as_str(),
                    y_dimension: y.as_str(),
                    x: value(r, *x),
                    y: value(r, *y),
                });
            }
        }
    }
    out
}

pub fn write_set_results(path: &Path, header: &Header, results: &[SetResult]) -> anyhow::Result<()> {
    Ok(write_jsonl(path, header, results)?)
}

pub fn write_summary(path: &Path, run_digest: &str, rows: &[SummaryRow]) -> anyhow::Result<()> {
    let mut w = csv_writer(path, run_digest)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_plot_data(path: &Path, run_digest: &str, rows: &[SummaryRow]) -> anyhow::Result<()> {
    let doc = serde_json::json!({ "run_digest": run_digest, "points": plot_points(rows) });
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn write_win_rates(
    items_path: &Path,
    rates_path: &Path,
    run_digest: &str,
    table: &WinRateTable,
) -> anyhow::Result<()> {
    #[derive(Serialize)]
    struct ItemRow<'a> {
        prompt_id: &'a str,
        first: &'a str,
        second: &'a str,
        first_votes: usize,
        second_votes: usize,
        winner: &'a str,
    }
    let mut w = csv_writer(items_path, run_digest)?;
    for i in &table.items {
        w.serialize(ItemRow {
            prompt_id: &i.prompt_id,
            first: &i.first,
            second: &i.second,
            first_votes: i.first_votes,
            second_votes: i.second_votes,
            winner: i.winner.as_deref().unwrap_or("tie"),
        })?;
    }
    w.flush()?;

    #[derive(Serialize)]
    struct RateRow<'a> {
        model: &'a str,
        opponent: &'a str,
        wins: usize,
        losses: usize,
        ties: usize,
        win_rate: Option<f64>,
    }
    let mut w = csv_writer(rates_path, run_digest)?;
    for r in &table.rates {
        w.serialize(RateRow {
            model: &r.model,
            opponent: &r.opponent,
            wins: r.wins,
            losses: r.losses,
            ties: r.ties,
            win_rate: r.rate,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Re-reads per-generation scores as core score records.
pub fn generation_scores(r: &SetResult) -> Vec<CreativityScores> {
    r.per_generation.iter().map(CreativityScores::from).collect()
}

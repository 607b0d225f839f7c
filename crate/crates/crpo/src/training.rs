//! Desk-scale training from pair and SFT files, and policy checkpoints.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use anyhow::{bail, Context};
use crpo_core::curation::{candidate_values, PreferencePair, SftExample};
use crpo_core::metrics::{composite_weight, Dimension, InjectionWeights};
use crpo_core::policy::{
    expected_value, fit_reference_policy, pairs_from_preferences, train_crpo, EpochRecord, TabularPolicy, TrainConfig,
    TrainOutcome,
};
use serde::{Deserialize, Serialize};

pub const DEFAULT_LEARNING_RATE: f64 = 1.0;
pub const DEFAULT_EPOCHS: usize = 100;

/// Sets pair weights from `weights`. Pairs need normalized scores unless
/// every dimension weight is zero, in which case the weight is the base.
pub fn apply_weights(pairs: &mut [PreferencePair], weights: &InjectionWeights) -> anyhow::Result<()> {
    let base_only = Dimension::ALL.iter().all(|d| weights.get(*d) == 0.0);
    for p in pairs.iter_mut() {
        p.weight = Some(match p.scores.as_ref().and_then(|s| s.normalized) {
            Some(n) => composite_weight(&n, weights),
            None if base_only => weights.base,
            None => bail!("pair {} has no normalized scores; run `crpo score` first", p.pair_id()),
        });
    }
    Ok(())
}

/// Reference policy over the prompts of `pairs`. Candidates are every pair
/// response plus the SFT responses of those prompts; SFT examples of other
/// prompts are ignored.
pub fn reference_policy(pairs: &[PreferencePair], sft: &[SftExample]) -> anyhow::Result<TabularPolicy> {
    let mut table: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for p in pairs {
        let c = table.entry(p.prompt.as_str()).or_default();
        c.insert(&p.chosen);
        c.insert(&p.rejected);
    }
    let relevant: Vec<&SftExample> = sft.iter().filter(|s| table.contains_key(s.prompt.as_str())).collect();
    for s in &relevant {
        table.get_mut(s.prompt.as_str()).expect("filtered").insert(&s.response);
    }
    let prompts = table.keys().map(|p| p.to_string()).collect();
    let candidates = table.values().map(|c| c.iter().map(|r| r.to_string()).collect()).collect();
    Ok(fit_reference_policy(relevant.iter().map(|s| (s.prompt.as_str(), s.response.as_str())), prompts, candidates)?)
}

/// Trains on weighted pairs from the SFT reference.
pub fn train(
    pairs: &[PreferencePair],
    sft: &[SftExample],
    cfg: &TrainConfig,
) -> anyhow::Result<(TabularPolicy, TrainOutcome)> {
    if pairs.is_empty() {
        bail!("no preference pairs to train on");
    }
    let reference = reference_policy(pairs, sft)?;
    let resolved = pairs_from_preferences(&reference, pairs).context("resolving pairs against the policy")?;
    let outcome = train_crpo(&resolved, &reference, cfg)?;
    Ok((reference, outcome))
}

/// Probability-weighted mean raw score of each dimension under `policy`,
/// over the candidates whose scores appear in `pairs`.
pub fn expected_scores(policy: &TabularPolicy, pairs: &[PreferencePair]) -> BTreeMap<&'static str, Option<f64>> {
    Dimension::ALL.iter().map(|d| (d.as_str(), expected_value(policy, &candidate_values(pairs, *d)))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsRecord {
    pub base: f64,
    pub diversity: f64,
    pub novelty: f64,
    pub surprise: f64,
    pub quality: f64,
    pub beta: f64,
}

impl From<&InjectionWeights> for WeightsRecord {
    fn from(w: &InjectionWeights) -> Self {
        WeightsRecord {
            base: w.base,
            diversity: w.diversity,
            novelty: w.novelty,
            surprise: w.surprise,
            quality: w.quality,
            beta: w.beta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

impl From<&EpochRecord> for EpochRow {
    fn from(r: &EpochRecord) -> Self {
        EpochRow { epoch: r.epoch, loss: r.loss, grad_norm: r.grad_norm }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub run_digest: String,
    pub config_digest: String,
    pub weights: WeightsRecord,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub batch_size: Option<usize>,
    pub prompts: Vec<String>,
    pub candidates: Vec<Vec<String>>,
    pub logits: Vec<Vec<f64>>,
    pub reference_logits: Vec<Vec<f64>>,
    pub loss_trajectory: Vec<EpochRow>,
    pub expected_scores: BTreeMap<String, Option<f64>>,
    pub reference_expected_scores: BTreeMap<String, Option<f64>>,
}

impl Checkpoint {
    pub fn policy(&self) -> anyhow::Result<TabularPolicy> {
        let p = TabularPolicy {
            prompts: self.prompts.clone(),
            candidates: self.candidates.clone(),
            logits: self.logits.clone(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub struct CheckpointMeta<'a> {
    pub run_digest: &'a str,
    pub config_digest: &'a str,
}

pub fn checkpoint(
    meta: CheckpointMeta<'_>,
    cfg: &TrainConfig,
    reference: &TabularPolicy,
    outcome: &TrainOutcome,
    pairs: &[PreferencePair],
) -> Checkpoint {
    let owned = |m: BTreeMap<&'static str, Option<f64>>| m.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    Checkpoint {
        run_digest: meta.run_digest.into(),
        config_digest: meta.config_digest.into(),
        weights: (&cfg.weights).into(),
        learning_rate: cfg.learning_rate,
        epochs: cfg.epochs,
        seed: cfg.seed,
        batch_size: cfg.batch_size,
        prompts: outcome.policy.prompts.clone(),
        candidates: outcome.policy.candidates.clone(),
        logits: outcome.policy.logits.clone(),
        reference_logits: reference.logits.clone(),
        loss_trajectory: outcome.trajectory.iter().map(EpochRow::from).collect(),
        expected_scores: owned(expected_scores(&outcome.policy, pairs)),
        reference_expected_scores: owned(expected_scores(reference, pairs)),
    }
}

//! Tabular softmax policies and the desk-scale trainer for the weighted
//! preference objective.
//!
//! A [`TabularPolicy`] holds, for every prompt, a logit per candidate
//! response. Its log-likelihood of a response is the log-softmax entry, so
//! the pair logit `h` depends on the policy through two log-softmax
//! lookups per pair and gradients flow back through the log-softmax.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::curation::PreferencePair;
use crate::metrics::InjectionWeights;
use crate::numeric::{exp, ln, sqrt, tree_sum};
use crate::objective::{dpo_logit, pair_loss, pair_loss_grad, PairLogits};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("unknown prompt `{0}`")]
    UnknownPrompt(String),
    #[error("response is not a candidate for prompt `{prompt}`: `{response}`")]
    UnknownCandidate { prompt: String, response: String },
    #[error("policy shape mismatch: {0}")]
    Shape(&'static str),
    #[error("pair `{0}`: {1}")]
    InvalidPair(String, &'static str),
    #[error("invalid training config: {0}")]
    InvalidConfig(&'static str),
    #[error("non-finite loss at pair `{0}`")]
    NonFiniteLoss(String),
    #[error("no training pairs")]
    NoPairs,
}

/// Per-prompt categorical distribution over a finite candidate set.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    pub prompts: Vec<String>,
    pub candidates: Vec<Vec<String>>,
    pub logits: Vec<Vec<f64>>,
}

impl TabularPolicy {
    /// All-zero (uniform) logits.
    pub fn uniform(prompts: Vec<String>, candidates: Vec<Vec<String>>) -> Result<Self, PolicyError> {
        let logits = candidates.iter().map(|c| alloc::vec![0.0; c.len()]).collect();
        let p = TabularPolicy { prompts, candidates, logits };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.prompts.len() != self.candidates.len() || self.prompts.len() != self.logits.len() {
            return Err(PolicyError::Shape("prompt, candidate and logit tables differ in length"));
        }
        for (c, l) in self.candidates.iter().zip(&self.logits) {
            if c.is_empty() {
                return Err(PolicyError::Shape("prompt without candidates"));
            }
            if c.len() != l.len() {
                return Err(PolicyError::Shape("logit row length differs from candidate count"));
            }
            if l.iter().any(|x| !x.is_finite()) {
                return Err(PolicyError::Shape("non-finite logit"));
            }
        }
        Ok(())
    }

    pub fn prompt_index(&self, prompt: &str) -> Option<usize> {
        self.prompts.iter().position(|p| p == prompt)
    }

    pub fn candidate_index(&self, prompt: usize, response: &str) -> Option<usize> {
        self.candidates[prompt].iter().position(|c| c == response)
    }

    pub fn log_probs(&self, prompt: usize) -> Vec<f64> {
        log_softmax(&self.logits[prompt])
    }

    pub fn probs(&self, prompt: usize) -> Vec<f64> {
        self.log_probs(prompt).into_iter().map(exp).collect()
    }

    /// Probability-weighted mean of per-candidate `values` for one prompt.
    pub fn expected(&self, prompt: usize, values: &[f64]) -> f64 {
        self.probs(prompt).iter().zip(values).map(|(p, v)| p * v).sum()
    }

    /// Whether `other` has identical prompts and candidates.
    pub fn same_shape(&self, other: &TabularPolicy) -> bool {
        self.prompts == other.prompts && self.candidates == other.candidates
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + ln(logits.iter().map(|z| exp(z - max)).sum::<f64>());
    logits.iter().map(|z| z - lse).collect()
}

/// Maximum-likelihood reference policy from SFT responses with add-one
/// smoothing: each logit is `ln(count + 1)`. Prompts with no SFT responses
/// stay uniform.
pub fn fit_reference_policy<'a>(
    sft: impl IntoIterator<Item = (&'a str, &'a str)>,
    prompts: Vec<String>,
    candidates: Vec<Vec<String>>,
) -> Result<TabularPolicy, PolicyError> {
    let mut policy = TabularPolicy::uniform(prompts, candidates)?;
    let mut counts: Vec<Vec<u64>> = policy.candidates.iter().map(|c| alloc::vec![0; c.len()]).collect();
    for (prompt, response) in sft {
        let p = policy.prompt_index(prompt).ok_or_else(|| PolicyError::UnknownPrompt(prompt.into()))?;
        let c = policy
            .candidate_index(p, response)
            .ok_or_else(|| PolicyError::UnknownCandidate { prompt: prompt.into(), response: response.into() })?;
        counts[p][c] += 1;
    }
    for (row, count) in policy.logits.iter_mut().zip(counts) {
        for (z, n) in row.iter_mut().zip(count) {
            *z = ln(n as f64 + 1.0);
        }
    }
    Ok(policy)
}

/// A preference pair resolved to policy-table indices.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyPair {
    pub id: String,
    pub prompt: usize,
    pub chosen: usize,
    pub rejected: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub weights: InjectionWeights,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(PolicyError::InvalidConfig("learning rate must be positive"));
        }
        if self.batch_size == Some(0) {
            return Err(PolicyError::InvalidConfig("batch size must be positive"));
        }
        if !(self.weights.beta.is_finite() && self.weights.beta > 0.0) {
            return Err(PolicyError::InvalidConfig("beta must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 0 is the state before any update.
    pub epoch: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub policy: TabularPolicy,
    pub trajectory: Vec<EpochRecord>,
}

fn validate_pairs(pairs: &[PolicyPair], policy: &TabularPolicy) -> Result<(), PolicyError> {
    for p in pairs {
        let bad = |why| Err(PolicyError::InvalidPair(p.id.clone(), why));
        if p.prompt >= policy.prompts.len() {
            return bad("prompt index out of range");
        }
        let n = policy.candidates[p.prompt].len();
        if p.chosen >= n || p.rejected >= n {
            return bad("candidate index out of range");
        }
        if p.chosen == p.rejected {
            return bad("chosen and rejected are the same candidate");
        }
        if !(p.weight.is_finite() && p.weight >= 0.0) {
            return bad("weight must be finite and non-negative");
        }
    }
    Ok(())
}

/// Mean weighted loss over `batch` and its gradient with respect to every
/// logit of `policy`.
pub fn loss_and_grad(
    policy: &TabularPolicy,
    reference: &TabularPolicy,
    pairs: &[PolicyPair],
    batch: &[usize],
    beta: f64,
) -> Result<(f64, Vec<Vec<f64>>), PolicyError> {
    let lp: Vec<Vec<f64>> = (0..policy.prompts.len()).map(|p| policy.log_probs(p)).collect();
    let ref_lp: Vec<Vec<f64>> = (0..reference.prompts.len()).map(|p| reference.log_probs(p)).collect();
    let scale = 1.0 / batch.len() as f64;

    // gradient with respect to log-probabilities first
    let mut g_lp: Vec<Vec<f64>> = policy.logits.iter().map(|r| alloc::vec![0.0; r.len()]).collect();
    let mut losses = Vec::with_capacity(batch.len());
    for &i in batch {
        let pair = &pairs[i];
        let (p, c, r) = (pair.prompt, pair.chosen, pair.rejected);
        let logits = PairLogits {
            policy_chosen_lp: lp[p][c],
            policy_rejected_lp: lp[p][r],
            ref_chosen_lp: ref_lp[p][c],
            ref_rejected_lp: ref_lp[p][r],
            weight: pair.weight,
        };
        let h = dpo_logit(&logits, beta);
        let loss = pair_loss(h, pair.weight);
        if !loss.is_finite() {
            return Err(PolicyError::NonFiniteLoss(pair.id.clone()));
        }
        losses.push(loss);
        let dh = pair_loss_grad(h, pair.weight) * scale;
        g_lp[p][c] += dh * beta;
        g_lp[p][r] -= dh * beta;
    }

    // back through log-softmax: dz_j = g_j − π_j Σ_k g_k
    let grad = g_lp
        .into_iter()
        .zip(&lp)
        .map(|(g, lp_row)| {
            let total: f64 = g.iter().sum();
            g.iter().zip(lp_row).map(|(gj, lj)| gj - exp(*lj) * total).collect()
        })
        .collect();
    Ok((tree_sum(&losses) * scale, grad))
}

fn norm(grad: &[Vec<f64>]) -> f64 {
    sqrt(grad.iter().flatten().map(|g| g * g).sum())
}

fn step(policy: &mut TabularPolicy, grad: &[Vec<f64>], lr: f64) {
    for (row, g) in policy.logits.iter_mut().zip(grad) {
        for (z, gz) in row.iter_mut().zip(g) {
            *z -= lr * gz;
        }
    }
}

/// Gradient descent on the weighted preference loss, starting from the
/// reference policy.
///
/// Pair weights are taken as given (frozen before training). Full-batch
/// runs are order-independent; mini-batch runs shuffle with a ChaCha8
/// stream seeded by `cfg.seed`.
pub fn train_crpo(
    pairs: &[PolicyPair],
    reference: &TabularPolicy,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, PolicyError> {
    cfg.validate()?;
    reference.validate()?;
    if pairs.is_empty() {
        return Err(PolicyError::NoPairs);
    }
    validate_pairs(pairs, reference)?;

    let beta = cfg.weights.beta;
    let all: Vec<usize> = (0..pairs.len()).collect();
    let mut policy = reference.clone();
    let (loss, mut grad) = loss_and_grad(&policy, reference, pairs, &all, beta)?;
    let mut trajectory = alloc::vec![EpochRecord { epoch: 0, loss, grad_norm: norm(&grad) }];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = all.clone();

    for epoch in 1..=cfg.epochs {
        match cfg.batch_size {
            Some(bs) if bs < pairs.len() => {
                order.shuffle(&mut rng);
                for batch in order.chunks(bs) {
                    let (_, g) = loss_and_grad(&policy, reference, pairs, batch, beta)?;
                    step(&mut policy, &g, cfg.learning_rate);
                }
            }
            _ => step(&mut policy, &grad, cfg.learning_rate),
        }
        let (loss, g) = loss_and_grad(&policy, reference, pairs, &all, beta)?;
        grad = g;
        trajectory.push(EpochRecord { epoch, loss, grad_norm: norm(&grad) });
    }
    Ok(TrainOutcome { policy, trajectory })
}

/// Resolves (prompt, chosen, rejected) texts to indices of `policy`.
pub fn resolve_pair(
    policy: &TabularPolicy,
    id: &str,
    prompt: &str,
    chosen: &str,
    rejected: &str,
    weight: f64,
) -> Result<PolicyPair, PolicyError> {
    let p = policy.prompt_index(prompt).ok_or_else(|| PolicyError::UnknownPrompt(prompt.into()))?;
    let idx = |resp: &str| {
        policy
            .candidate_index(p, resp)
            .ok_or_else(|| PolicyError::UnknownCandidate { prompt: prompt.into(), response: resp.into() })
    };
    Ok(PolicyPair { id: id.into(), prompt: p, chosen: idx(chosen)?, rejected: idx(rejected)?, weight })
}

/// Sorted prompt list and per-prompt sorted candidate lists from
/// (prompt, response) occurrences.
pub fn policy_tables<'a>(items: impl IntoIterator<Item = (&'a str, &'a str)>) -> (Vec<String>, Vec<Vec<String>>) {
    let mut map: BTreeMap<&str, alloc::collections::BTreeSet<&str>> = BTreeMap::new();
    for (p, r) in items {
        map.entry(p).or_default().insert(r);
    }
    let prompts = map.keys().map(|p| String::from(*p)).collect();
    let candidates = map.values().map(|set| set.iter().map(|r| String::from(*r)).collect()).collect();
    (prompts, candidates)
}

/// Resolves weighted preference pairs against `policy`.
pub fn pairs_from_preferences(
    policy: &TabularPolicy,
    prefs: &[PreferencePair],
) -> Result<Vec<PolicyPair>, PolicyError> {
    prefs
        .iter()
        .map(|p| {
            let id = p.pair_id();
            let w = p.weight.ok_or_else(|| PolicyError::InvalidPair(id.clone(), "pair has no weight"))?;
            resolve_pair(policy, &id, &p.prompt, &p.chosen, &p.rejected, w)
        })
        .collect()
}

/// Mean over prompts of the policy expectation of `values`, keyed by
/// (prompt, response). Candidates without a value are dropped and the rest
/// renormalized; prompts without any valued candidate are skipped.
pub fn expected_value(policy: &TabularPolicy, values: &BTreeMap<(String, String), f64>) -> Option<f64> {
    let mut per_prompt = Vec::new();
    for (i, prompt) in policy.prompts.iter().enumerate() {
        let probs = policy.probs(i);
        let (mut mass, mut acc) = (0.0, 0.0);
        for (cand, p) in policy.candidates[i].iter().zip(probs) {
            if let Some(v) = values.get(&(prompt.clone(), cand.clone())) {
                mass += p;
                acc += p * v;
            }
        }
        if mass > 0.0 {
            per_prompt.push(acc / mass);
        }
    }
    (!per_prompt.is_empty()).then(|| tree_sum(&per_prompt) / per_prompt.len() as f64)
}

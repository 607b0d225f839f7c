//! Injection-weight sweeps: for each swept dimension and grid value λ, train
//! with weights `base + λ·dimension` over several seeds and measure the
//! policy's expected raw score on that dimension.

use std::collections::BTreeMap;

use anyhow::bail;
use crpo_core::curation::{candidate_values, PreferencePair, SftExample};
use crpo_core::metrics::{Dimension, InjectionWeights};
use crpo_core::policy::{expected_value, TabularPolicy, TrainConfig, TrainOutcome};
use rayon::prelude::*;
use serde::Serialize;

use crate::digest::sub_seed;
use crate::training::{apply_weights, train};

pub const DEFAULT_GRID: [f64; 5] = [0.0, 0.5, 1.0, 1.5, 2.0];
pub const DEFAULT_SEEDS: usize = 3;
/// Base weight during sweeps, so that λ = 0 is plain DPO.
pub const DEFAULT_SWEEP_BASE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub dimensions: Vec<Dimension>,
    pub grid: Vec<f64>,
    /// Run seeds; each run trains with a sub-seed derived from it.
    pub seeds: Vec<u64>,
    pub base: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: Option<usize>,
}

/// Parses a comma-separated grid such as `0,0.5,1`.
pub fn parse_grid(text: &str) -> anyhow::Result<Vec<f64>> {
    let grid: Vec<f64> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|e| anyhow::anyhow!("bad grid value `{s}`: {e}")))
        .collect::<anyhow::Result<_>>()?;
    validate_grid(&grid)?;
    Ok(grid)
}

pub fn validate_grid(grid: &[f64]) -> anyhow::Result<()> {
    if grid.is_empty() {
        bail!("empty λ grid");
    }
    if let Some(x) = grid.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        bail!("grid value {x} must be finite and non-negative");
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SweepRun {
    pub dimension: Dimension,
    pub lambda: f64,
    pub seed: u64,
    pub train_config: TrainConfig,
    pub metric: Option<f64>,
    pub final_loss: f64,
    pub reference: TabularPolicy,
    pub outcome: TrainOutcome,
    pub pairs: Vec<PreferencePair>,
}

pub fn sweep_weights(d: Dimension, lambda: f64, base: f64, beta: f64) -> InjectionWeights {
    let mut w = InjectionWeights { base, ..InjectionWeights::zero(beta) };
    w.set(d, lambda);
    w
}

/// Runs every (dimension, λ, seed) combination, in parallel, returning runs
/// in that nested order.
pub fn run_sweep(pairs: &[PreferencePair], sft: &[SftExample], s: &SweepSettings) -> anyhow::Result<Vec<SweepRun>> {
    validate_grid(&s.grid)?;
    if s.dimensions.is_empty() {
        bail!("no dimensions to sweep");
    }
    if s.seeds.is_empty() {
        bail!("at least one seed is needed");
    }
    let mut jobs = Vec::new();
    for d in &s.dimensions {
        for l in &s.grid {
            for seed in &s.seeds {
                jobs.push((*d, *l, *seed));
            }
        }
    }
    jobs.par_iter()
        .map(|&(d, lambda, seed)| {
            let weights = sweep_weights(d, lambda, s.base, s.beta);
            weights.validate()?;
            let mut weighted = pairs.to_vec();
            apply_weights(&mut weighted, &weights)?;
            let cfg = TrainConfig {
                weights,
                learning_rate: s.learning_rate,
                epochs: s.epochs,
                seed: sub_seed(seed, "train"),
                batch_size: s.batch_size,
            };
            let (reference, outcome) = train(&weighted, sft, &cfg)?;
            let metric = expected_value(&outcome.policy, &candidate_values(&weighted, d));
            let final_loss = outcome.trajectory.last().map(|r| r.loss).unwrap_or(f64::NAN);
            Ok(SweepRun {
                dimension: d,
                lambda,
                seed,
                train_config: cfg,
                metric,
                final_loss,
                reference,
                outcome,
                pairs: weighted,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub dimension: &'static str,
    pub lambda: f64,
    pub seeds: usize,
    /// Mean over seeds of the targeted metric.
    pub mean: Option<f64>,
    /// Population standard deviation over seeds.
    pub std: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

pub fn summarize(runs: &[SweepRun]) -> Vec<SweepSummary> {
    let mut groups: Vec<((Dimension, u64), Vec<f64>, usize)> = Vec::new();
    let mut index: BTreeMap<(usize, u64), usize> = BTreeMap::new();
    for r in runs {
        let key = (r.dimension as usize, r.lambda.to_bits());
        let i = *index.entry(key).or_insert_with(|| {
            groups.push(((r.dimension, r.lambda.to_bits()), Vec::new(), 0));
            groups.len() - 1
        });
        groups[i].2 += 1;
        if let Some(m) = r.metric {
            groups[i].1.push(m);
        }
    }
    groups
        .into_iter()
        .map(|((d, bits), values, seeds)| {
            let n = values.len() as f64;
            let mean = (!values.is_empty()).then(|| values.iter().sum::<f64>() / n);
            let std = mean.map(|m| (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt());
            SweepSummary {
                dimension: d.as_str(),
                lambda: f64::from_bits(bits),
                seeds,
                mean,
                std,
                min: values.iter().copied().reduce(f64::min),
                max: values.iter().copied().reduce(f64::max),
            }
        })
        .collect()
}

/// File-name-safe rendering of a grid value.
pub fn lambda_tag(l: f64) -> String {
    format!("{l}").replace('.', "p").replace('-', "m")
}

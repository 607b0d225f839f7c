//! TOML configuration file. Every key is optional; command-line flags take
//! precedence over the file, the file over environment variables, and
//! environment variables over built-in defaults.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::providers::{
    ProviderConfig, ProviderError, ProviderKind, DEFAULT_MAX_BATCH, DEFAULT_RETRIES, DEFAULT_TIMEOUT_MS,
};
use crate::records::Strictness;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub curate: CurateSection,
    #[serde(default)]
    pub providers: ProvidersSection,
    #[serde(default)]
    pub score: ScoreSection,
    #[serde(default)]
    pub weights: WeightsSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurateSection {
    pub margin: Option<i64>,
    pub min_rating: Option<i64>,
    pub cap: Option<usize>,
    pub sft_threshold: Option<i64>,
    pub agreement: Option<bool>,
    pub strictness: Option<Strictness>,
    /// `task` or `task_language`.
    pub rescale_grouping: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSection {
    pub endpoint: Option<String>,
    pub model_id: Option<String>,
    pub timeout_ms: Option<u64>,
    pub max_batch: Option<usize>,
    pub retries: Option<u32>,
    pub bearer_token: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProvidersSection {
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub embedding: ProviderSection,
    #[serde(default)]
    pub likelihood: ProviderSection,
    #[serde(default)]
    pub reward: ProviderSection,
}

impl ProvidersSection {
    pub fn get(&self, kind: ProviderKind) -> &ProviderSection {
        match kind {
            ProviderKind::Embedding => &self.embedding,
            ProviderKind::Likelihood => &self.likelihood,
            ProviderKind::Reward => &self.reward,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreSection {
    pub dsi_mode: Option<String>,
    pub surprise: Option<String>,
    /// `global` or `per_task`.
    pub normalization: Option<String>,
    pub stopwords: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSection {
    pub base: Option<f64>,
    pub diversity: Option<f64>,
    pub novelty: Option<f64>,
    pub surprise: Option<f64>,
    pub quality: Option<f64>,
    pub beta: Option<f64>,
}

impl WeightsSection {
    pub fn any_lambda(&self) -> bool {
        [self.base, self.diversity, self.novelty, self.surprise, self.quality].iter().any(Option::is_some)
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub k: Option<usize>,
    pub patience: Option<f64>,
    pub equivalence: Option<String>,
    pub cosine_threshold: Option<f64>,
    pub utility: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub grid: Option<Vec<f64>>,
    pub seeds: Option<usize>,
    pub dimensions: Option<Vec<String>>,
    pub lambda_base: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| anyhow::anyhow!("invalid config {}: {e}", path.display()))
    }
}

/// Flag-level overrides for one provider.
#[derive(Debug, Clone, Default)]
pub struct ProviderFlags {
    pub endpoint: Option<String>,
    pub model_id: Option<String>,
    pub timeout_ms: Option<u64>,
    pub max_batch: Option<usize>,
    pub retries: Option<u32>,
}

/// Resolves one provider: flags, then the config file, then the
/// environment, then defaults. A missing endpoint is an error naming the
/// provider.
pub fn resolve_provider(
    kind: ProviderKind,
    flags: &ProviderFlags,
    file: &ProviderSection,
    env: impl Fn(&str) -> Option<String>,
) -> Result<ProviderConfig, ProviderError> {
    let endpoint = flags
        .endpoint
        .clone()
        .or_else(|| file.endpoint.clone())
        .or_else(|| env(kind.env_var()))
        .filter(|e| !e.trim().is_empty())
        .ok_or(ProviderError::NoEndpoint { kind })?;
    let mut cfg = ProviderConfig::new(kind, endpoint);
    cfg.model_id = flags.model_id.clone().or_else(|| file.model_id.clone()).unwrap_or(cfg.model_id);
    cfg.timeout_ms = flags.timeout_ms.or(file.timeout_ms).unwrap_or(DEFAULT_TIMEOUT_MS);
    cfg.max_batch = flags.max_batch.or(file.max_batch).unwrap_or(DEFAULT_MAX_BATCH);
    cfg.retries = flags.retries.or(file.retries).unwrap_or(DEFAULT_RETRIES);
    cfg.bearer_token = file.bearer_token.clone().or_else(|| env("CRPO_BEARER_TOKEN"));
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env_with(endpoint: &'static str) -> impl Fn(&str) -> Option<String> {
        move |k| (k == "CRPO_EMBED_ENDPOINT").then(|| endpoint.to_string())
    }

    #[test]
    fn precedence_flags_file_env() {
        let kind = ProviderKind::Embedding;
        let file = ProviderSection { endpoint: Some("file".into()), max_batch: Some(4), ..Default::default() };
        let flags = ProviderFlags { endpoint: Some("flag".into()), ..Default::default() };
        assert_eq!(resolve_provider(kind, &flags, &file, env_with("env")).unwrap().endpoint, "flag");
        let none = ProviderFlags::default();
        let got = resolve_provider(kind, &none, &file, env_with("env")).unwrap();
        assert_eq!((got.endpoint.as_str(), got.max_batch), ("file", 4));
        let empty = ProviderSection::default();
        assert_eq!(resolve_provider(kind, &none, &empty, env_with("env")).unwrap().endpoint, "env");
        let err = resolve_provider(kind, &none, &empty, |_| None).unwrap_err();
        assert!(err.to_string().contains("embedding"));
    }

    #[test]
    fn parses_toml_and_rejects_unknown_keys() {
        let cfg: FileConfig =
            toml::from_str("seed = 3\n[train]\nepochs = 5\n[providers.reward]\nendpoint = \"stub:length\"\n").unwrap();
        assert_eq!(cfg.seed, Some(3));
        assert_eq!(cfg.train.epochs, Some(5));
        assert_eq!(cfg.providers.reward.endpoint.as_deref(), Some("stub:length"));
        assert!(toml::from_str::<FileConfig>("sed = 3").is_err());
    }
}

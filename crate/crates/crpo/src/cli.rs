//! The `crpo` command line.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use crpo_core::corpus::{RescaleGrouping, DEFAULT_RATING_MAX, DEFAULT_RATING_MIN};
use crpo_core::curation::{
    build_preference_pairs, build_sft_set, dataset_stats, DatasetStats, NormalizationScope, PairingConfig,
    PreferencePair, DEFAULT_MARGIN, DEFAULT_MAX_PAIRINGS, DEFAULT_MIN_RATING, DEFAULT_SFT_THRESHOLD,
};
use crpo_core::eval::{win_rates, DEFAULT_COSINE_THRESHOLD, DEFAULT_K, DEFAULT_PATIENCE};
use crpo_core::metrics::{Dimension, DsiConfig, DsiMode, InjectionWeights, SurpriseNormalization, DEFAULT_BETA};
use crpo_core::policy::TrainConfig;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{resolve_provider, FileConfig, ProviderFlags};
use crate::digest::sub_seed;
use crate::evaluate::{
    evaluate_sets, summarize, write_plot_data, write_set_results, write_summary, write_win_rates, Equivalence,
    EvalSettings, References, SetResult, Utility,
};
use crate::manifest::Run;
use crate::providers::{Counters, ProviderClient, ProviderConfig, ProviderKind};
use crate::records::{
    csv_writer, parse_rated_records, read_generations, read_jsonl_file, read_judgments, read_pairs, read_sft,
    write_corpus, write_pairs, write_sft, Header, Strictness,
};
use crate::scoring::{describe_stats, score_pairs, Providers, ScoreSettings};
use crate::sweep::{
    lambda_tag, parse_grid, run_sweep, summarize as summarize_sweep, SweepSettings, DEFAULT_GRID, DEFAULT_SEEDS,
    DEFAULT_SWEEP_BASE,
};
use crate::training::{
    apply_weights, checkpoint, train, CheckpointMeta, EpochRow, DEFAULT_EPOCHS, DEFAULT_LEARNING_RATE,
};

pub const DEFAULT_OUT_DIR: &str = "crpo-out";

#[derive(Debug, Parser)]
#[command(name = "crpo", version, about = "Creative preference optimization: curate, score, train, evaluate")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run seed; every stage derives its own sub-seed from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory receiving outputs and the run manifest.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build preference pairs and an SFT set from rated responses.
    Curate(CurateArgs),
    /// Attach creativity scores and composite weights to pairs.
    Score(ScoreArgs),
    /// Train a tabular policy on weighted pairs.
    Train(TrainArgs),
    /// Score generation sets and compute distinct_k / utility_k.
    Eval(EvalArgs),
    /// Sweep injection weights over a grid and several seeds.
    Sweep(SweepArgs),
    /// Win rates from judgments and summaries from evaluated sets.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct CurateArgs {
    /// Rated responses (JSON lines).
    pub input: PathBuf,
    #[arg(long)]
    pub margin: Option<i64>,
    #[arg(long)]
    pub min_rating: Option<i64>,
    /// Pairs per response, counting chosen and rejected roles.
    #[arg(long)]
    pub cap: Option<usize>,
    #[arg(long)]
    pub sft_threshold: Option<i64>,
    /// Keep only records whose raters all agree (default true).
    #[arg(long, action = clap::ArgAction::Set)]
    pub agreement: Option<bool>,
    #[arg(long, value_enum)]
    pub strictness: Option<Strictness>,
    /// Rescaling groups: `task` or `task_language`.
    #[arg(long)]
    pub rescale_grouping: Option<String>,
}

#[derive(Debug, Args, Default)]
pub struct ProviderArgs {
    #[arg(long)]
    pub embed_endpoint: Option<String>,
    #[arg(long)]
    pub embed_model: Option<String>,
    #[arg(long)]
    pub ll_endpoint: Option<String>,
    #[arg(long)]
    pub ll_model: Option<String>,
    #[arg(long)]
    pub reward_endpoint: Option<String>,
    #[arg(long)]
    pub reward_model: Option<String>,
    /// Applies to all three providers.
    #[arg(long)]
    pub max_batch: Option<usize>,
    #[arg(long)]
    pub retries: Option<u32>,
    #[arg(long)]
    pub timeout_ms: Option<u64>,
    /// Persistent provider cache (default `<out-dir>/.crpo-cache`).
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct WeightArgs {
    #[arg(long)]
    pub lambda_base: Option<f64>,
    #[arg(long)]
    pub lambda_d: Option<f64>,
    #[arg(long)]
    pub lambda_n: Option<f64>,
    #[arg(long)]
    pub lambda_s: Option<f64>,
    #[arg(long)]
    pub lambda_q: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
}

impl WeightArgs {
    fn any_lambda(&self) -> bool {
        [self.lambda_base, self.lambda_d, self.lambda_n, self.lambda_s, self.lambda_q].iter().any(Option::is_some)
    }
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Pairs file from `crpo curate`.
    pub pairs: PathBuf,
    #[command(flatten)]
    pub providers: ProviderArgs,
    #[command(flatten)]
    pub weights: WeightArgs,
    /// `paper_literal` or `pair_mean`.
    #[arg(long)]
    pub dsi_mode: Option<String>,
    /// `per_token` or `total`.
    #[arg(long)]
    pub surprise: Option<String>,
    /// Fit normalization statistics per task instead of globally.
    #[arg(long)]
    pub per_task: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Scored pairs.
    #[arg(long)]
    pub pairs: PathBuf,
    /// SFT set for the reference policy.
    #[arg(long)]
    pub sft: PathBuf,
    #[command(flatten)]
    pub weights: WeightArgs,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Mini-batch size (full batch when absent).
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Generation sets (JSON lines).
    pub generations: PathBuf,
    /// Pairs file whose chosen responses serve as the human novelty reference.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[command(flatten)]
    pub providers: ProviderArgs,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub patience: Option<f64>,
    #[arg(long, value_enum)]
    pub equivalence: Option<Equivalence>,
    #[arg(long)]
    pub cosine_threshold: Option<f64>,
    #[arg(long, value_enum)]
    pub utility: Option<Utility>,
    #[arg(long)]
    pub dsi_mode: Option<String>,
    #[arg(long)]
    pub surprise: Option<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub sft: PathBuf,
    /// Comma-separated λ values (default 0,0.5,1,1.5,2).
    #[arg(long)]
    pub grid: Option<String>,
    /// Number of seeds per grid point.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Comma-separated dimensions (default diversity,novelty,surprise,quality).
    #[arg(long)]
    pub dimensions: Option<String>,
    #[arg(long)]
    pub lambda_base: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Judgments CSV: prompt_id, model_a, model_b, rater_id, winner.
    #[arg(long)]
    pub judgments: Option<PathBuf>,
    /// Evaluated sets from `crpo eval`.
    #[arg(long)]
    pub sets: Option<PathBuf>,
}

/// Parses arguments and runs the command. Usage errors exit through clap.
pub fn run<I, T>(args: I) -> anyhow::Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).unwrap_or_else(|e| e.exit());
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let ctx = Context_ {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        out_dir: cli.out_dir.clone().or_else(|| file.out_dir.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR)),
        file,
    };
    if let Some(n) = cli.threads.or(ctx.file.threads) {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        // a pool built earlier in this process is kept
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Curate(a) => curate(&ctx, a),
        Command::Score(a) => score(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Sweep(a) => sweep(&ctx, a),
        Command::Report(a) => report(&ctx, a),
    }
}

#[allow(non_camel_case_types)]
struct Context_ {
    seed: u64,
    out_dir: PathBuf,
    file: FileConfig,
}

fn env_var(k: &str) -> Option<String> {
    std::env::var(k).ok()
}

// ------------------------------------------------------------------ curate

#[derive(Serialize)]
struct CurateConfig {
    margin: i64,
    min_rating: i64,
    cap: usize,
    sft_threshold: i64,
    agreement: bool,
    strictness: Strictness,
    rescale_grouping: &'static str,
    rating_range: [i64; 2],
    aggregation: &'static str,
}

fn stats_json(s: &DatasetStats) -> Value {
    json!({
        "total": s.total,
        "per_task": s.per_task,
        "per_prompt": s.per_prompt.len(),
        "ratings": s.ratings,
        "rejected_ratings": s.rejected_ratings,
        "margins": s.margins,
    })
}

fn curate(ctx: &Context_, a: &CurateArgs) -> anyhow::Result<()> {
    let f = &ctx.file.curate;
    let grouping = match a.rescale_grouping.clone().or_else(|| f.rescale_grouping.clone()).as_deref() {
        None | Some("task") => RescaleGrouping::Task,
        Some("task_language") => RescaleGrouping::TaskLanguage,
        Some(other) => bail!("unknown rescale grouping `{other}` (expected task or task_language)"),
    };
    let cfg = CurateConfig {
        margin: a.margin.or(f.margin).unwrap_or(DEFAULT_MARGIN),
        min_rating: a.min_rating.or(f.min_rating).unwrap_or(DEFAULT_MIN_RATING),
        cap: a.cap.or(f.cap).unwrap_or(DEFAULT_MAX_PAIRINGS),
        sft_threshold: a.sft_threshold.or(f.sft_threshold).unwrap_or(DEFAULT_SFT_THRESHOLD),
        agreement: a.agreement.or(f.agreement).unwrap_or(true),
        strictness: a.strictness.or(f.strictness).unwrap_or_default(),
        rescale_grouping: match grouping {
            RescaleGrouping::Task => "task",
            RescaleGrouping::TaskLanguage => "task_language",
        },
        rating_range: [DEFAULT_RATING_MIN, DEFAULT_RATING_MAX],
        aggregation: "mean",
    };
    if cfg.cap == 0 {
        bail!("--cap must be at least 1");
    }
    let mut run = Run::start("curate", &ctx.out_dir, ctx.seed, &cfg, &[&a.input])?;
    let reader = BufReader::new(File::open(&a.input).with_context(|| format!("cannot open {}", a.input.display()))?);
    let (corpus, report) =
        parse_rated_records(reader, cfg.strictness).with_context(|| a.input.display().to_string())?;
    for (line, why) in &report.skipped {
        eprintln!("skipped line {line}: {why}");
    }
    let corpus = if cfg.agreement { corpus.filter_full_agreement() } else { corpus };
    let corpus = if corpus.records().iter().any(|r| r.rating.is_none()) {
        corpus.rescale(grouping, DEFAULT_RATING_MIN, DEFAULT_RATING_MAX)?
    } else {
        corpus
    };
    let pairing =
        PairingConfig { margin_min: cfg.margin, min_rating: cfg.min_rating, max_pairings_per_response: cfg.cap };
    let pairs = build_preference_pairs(&corpus, &pairing)?;
    let sft = build_sft_set(&corpus, cfg.sft_threshold)?;

    let header = |kind: &str| Header::new(kind, &run.run_digest).with("config", &run.config);
    let (hc, hp, hs) = (header("corpus"), header("pairs"), header("sft"));
    write_corpus(&run.output("corpus.jsonl")?, &hc, &corpus)?;
    write_pairs(&run.output("pairs.jsonl")?, &hp, &pairs)?;
    write_sft(&run.output("sft.jsonl")?, &hs, &sft)?;
    run.finish(BTreeMap::new())?;

    let summary = json!({
        "parsed": report.parsed,
        "skipped": report.skipped.len(),
        "records": corpus.len(),
        "pairs": stats_json(&dataset_stats(&pairs)),
        "sft": stats_json(&dataset_stats(&sft)),
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

// ------------------------------------------------------------------- score

fn provider_flags(a: &ProviderArgs, kind: ProviderKind) -> ProviderFlags {
    let (endpoint, model_id) = match kind {
        ProviderKind::Embedding => (&a.embed_endpoint, &a.embed_model),
        ProviderKind::Likelihood => (&a.ll_endpoint, &a.ll_model),
        ProviderKind::Reward => (&a.reward_endpoint, &a.reward_model),
    };
    ProviderFlags {
        endpoint: endpoint.clone(),
        model_id: model_id.clone(),
        timeout_ms: a.timeout_ms,
        max_batch: a.max_batch,
        retries: a.retries,
    }
}

struct Clients {
    embedding: ProviderClient,
    likelihood: ProviderClient,
    reward: ProviderClient,
}

impl Clients {
    fn providers(&self) -> Providers<'_> {
        Providers { embedding: &self.embedding, likelihood: &self.likelihood, reward: &self.reward }
    }

    fn counters(&self) -> BTreeMap<String, Counters> {
        [&self.embedding, &self.likelihood, &self.reward]
            .iter()
            .map(|c| (c.config().kind.as_str().to_string(), c.counters()))
            .collect()
    }

    fn ids(&self) -> Vec<crate::providers::ProviderId> {
        vec![self.embedding.id(), self.likelihood.id(), self.reward.id()]
    }
}

fn resolve_providers(ctx: &Context_, a: &ProviderArgs) -> anyhow::Result<[ProviderConfig; 3]> {
    let one = |kind| resolve_provider(kind, &provider_flags(a, kind), ctx.file.providers.get(kind), env_var);
    Ok([one(ProviderKind::Embedding)?, one(ProviderKind::Likelihood)?, one(ProviderKind::Reward)?])
}

fn open_clients(ctx: &Context_, a: &ProviderArgs, cfgs: [ProviderConfig; 3]) -> anyhow::Result<Clients> {
    let cache_dir = a
        .cache_dir
        .clone()
        .or_else(|| ctx.file.providers.cache_dir.clone())
        .unwrap_or_else(|| ctx.out_dir.join(".crpo-cache"));
    let [e, l, r] = cfgs;
    Ok(Clients {
        embedding: ProviderClient::from_config(e, Some(&cache_dir))?,
        likelihood: ProviderClient::from_config(l, Some(&cache_dir))?,
        reward: ProviderClient::from_config(r, Some(&cache_dir))?,
    })
}

/// Local store files among provider endpoints, which are run inputs too.
fn store_inputs(cfgs: &[ProviderConfig]) -> Vec<PathBuf> {
    cfgs.iter()
        .filter_map(|c| {
            let e = c.endpoint.as_str();
            if e.starts_with("http://") || e.starts_with("https://") || e.starts_with("stub:") {
                None
            } else {
                Some(PathBuf::from(e.strip_prefix("file://").unwrap_or(e)))
            }
        })
        .collect()
}

fn parse_dsi(flag: &Option<String>, file: &Option<String>) -> anyhow::Result<DsiMode> {
    Ok(flag.clone().or_else(|| file.clone()).map(|s| s.parse()).transpose()?.unwrap_or_default())
}

fn parse_surprise(flag: &Option<String>, file: &Option<String>) -> anyhow::Result<SurpriseNormalization> {
    Ok(flag.clone().or_else(|| file.clone()).map(|s| s.parse()).transpose()?.unwrap_or_default())
}

/// Weights from λ flags, then the `[weights]` table, then `fallback`.
fn resolve_weights(ctx: &Context_, a: &WeightArgs, fallback: InjectionWeights) -> InjectionWeights {
    let w = &ctx.file.weights;
    InjectionWeights {
        base: a.lambda_base.or(w.base).unwrap_or(fallback.base),
        diversity: a.lambda_d.or(w.diversity).unwrap_or(fallback.diversity),
        novelty: a.lambda_n.or(w.novelty).unwrap_or(fallback.novelty),
        surprise: a.lambda_s.or(w.surprise).unwrap_or(fallback.surprise),
        quality: a.lambda_q.or(w.quality).unwrap_or(fallback.quality),
        beta: a.beta.or(w.beta).unwrap_or(DEFAULT_BETA),
    }
}

fn weights_json(w: &InjectionWeights) -> Value {
    serde_json::to_value(crate::training::WeightsRecord::from(w)).expect("weights serialize")
}

fn score(ctx: &Context_, a: &ScoreArgs) -> anyhow::Result<()> {
    let s = &ctx.file.score;
    let weights = resolve_weights(ctx, &a.weights, InjectionWeights::default());
    weights.validate()?;
    let dsi_mode = parse_dsi(&a.dsi_mode, &s.dsi_mode)?;
    let surprise = parse_surprise(&a.surprise, &s.surprise)?;
    let scope = match (a.per_task, s.normalization.as_deref()) {
        (true, _) | (false, Some("per_task")) => NormalizationScope::PerTask,
        (false, None | Some("global")) => NormalizationScope::Global,
        (false, Some(other)) => bail!("unknown normalization `{other}` (expected global or per_task)"),
    };
    let stopwords: Option<BTreeSet<String>> =
        s.stopwords.as_ref().map(|w| w.iter().map(|x| x.to_lowercase()).collect());
    let cfgs = resolve_providers(ctx, &a.providers)?;
    let config = json!({
        "weights": weights_json(&weights),
        "dsi_mode": dsi_mode.as_str(),
        "surprise": surprise.as_str(),
        "normalization": match scope { NormalizationScope::Global => "global", NormalizationScope::PerTask => "per_task" },
        "stopwords": stopwords,
        "providers": cfgs,
    });
    let mut inputs = vec![a.pairs.clone()];
    inputs.extend(store_inputs(&cfgs));
    let input_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    let mut run = Run::start("score", &ctx.out_dir, ctx.seed, &config, &input_refs)?;
    let clients = open_clients(ctx, &a.providers, cfgs)?;

    let (_, mut pairs) = read_pairs(&a.pairs).with_context(|| a.pairs.display().to_string())?;
    let settings = ScoreSettings { dsi: DsiConfig { mode: dsi_mode, stopwords }, surprise, scope, weights };
    let stats = score_pairs(&mut pairs, &clients.providers(), &settings)?;
    let header = Header::new("scored_pairs", &run.run_digest)
        .with("weights", weights_json(&weights))
        .with("normalization", &run.config["normalization"])
        .with("normalization_stats", describe_stats(&stats))
        .with("dsi_mode", dsi_mode.as_str())
        .with("surprise", surprise.as_str())
        .with("aggregation", "mean")
        .with("providers", clients.ids());
    write_pairs(&run.output("scored_pairs.jsonl")?, &header, &pairs)?;
    let counters = clients.counters();
    run.finish(counters.clone())?;
    println!("{}", serde_json::to_string_pretty(&json!({ "pairs": pairs.len(), "providers": counters }))?);
    Ok(())
}

// ------------------------------------------------------------------- train

#[derive(Serialize)]
struct TrainSettingsRecord {
    weights: Value,
    weights_from: &'static str,
    learning_rate: f64,
    epochs: usize,
    batch_size: Option<usize>,
    train_seed: u64,
}

fn train_cmd(ctx: &Context_, a: &TrainArgs) -> anyhow::Result<()> {
    let t = &ctx.file.train;
    let (_, mut pairs) = read_pairs(&a.pairs).with_context(|| a.pairs.display().to_string())?;
    let sft = read_sft(&a.sft).with_context(|| a.sft.display().to_string())?;
    let override_weights = a.weights.any_lambda() || ctx.file.weights.any_lambda();
    let weights = resolve_weights(ctx, &a.weights, InjectionWeights::zero(DEFAULT_BETA));
    if override_weights {
        weights.validate()?;
        apply_weights(&mut pairs, &weights)?;
    } else if let Some(p) = pairs.iter().find(|p| p.weight.is_none()) {
        bail!("pair {} has no weight; score the pairs or pass λ flags", p.pair_id());
    }
    let cfg = TrainConfig {
        weights,
        learning_rate: a.lr.or(t.learning_rate).unwrap_or(DEFAULT_LEARNING_RATE),
        epochs: a.epochs.or(t.epochs).unwrap_or(DEFAULT_EPOCHS),
        seed: sub_seed(ctx.seed, "train"),
        batch_size: a.batch_size.or(t.batch_size),
    };
    let record = TrainSettingsRecord {
        weights: weights_json(&weights),
        weights_from: if override_weights { "lambda" } else { "pairs" },
        learning_rate: cfg.learning_rate,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        train_seed: cfg.seed,
    };
    let mut run = Run::start("train", &ctx.out_dir, ctx.seed, &record, &[&a.pairs, &a.sft])?;
    let (reference, outcome) = train(&pairs, &sft, &cfg)?;
    let ckpt = checkpoint(
        CheckpointMeta { run_digest: &run.run_digest, config_digest: &run.config_digest },
        &cfg,
        &reference,
        &outcome,
        &pairs,
    );
    ckpt.write(&run.output("checkpoint.json")?)?;
    let mut log = csv_writer(&run.output("train_log.csv")?, &run.run_digest)?;
    for r in &outcome.trajectory {
        log.serialize(EpochRow::from(r))?;
    }
    log.flush()?;
    run.finish(BTreeMap::new())?;
    let last = outcome.trajectory.last().map(|r| r.loss);
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "pairs": pairs.len(),
            "epochs": cfg.epochs,
            "initial_loss": outcome.trajectory.first().map(|r| r.loss),
            "final_loss": last,
            "expected_scores": ckpt.expected_scores,
        }))?
    );
    Ok(())
}

// -------------------------------------------------------------------- eval

fn references_from(path: &Path) -> anyhow::Result<References> {
    let (_, pairs) = read_pairs(path).with_context(|| path.display().to_string())?;
    let mut by_prompt: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    for p in pairs {
        by_prompt.entry(crpo_core::text::canonicalize(&p.prompt)).or_default().insert(p.chosen_id, p.chosen);
    }
    Ok(by_prompt.into_iter().map(|(k, v)| (k, v.into_values().collect())).collect())
}

fn eval(ctx: &Context_, a: &EvalArgs) -> anyhow::Result<()> {
    let e = &ctx.file.eval;
    let s = &ctx.file.score;
    let equivalence = match (a.equivalence, e.equivalence.as_deref()) {
        (Some(q), _) => q,
        (None, None | Some("exact")) => Equivalence::Exact,
        (None, Some("cosine")) => Equivalence::Cosine,
        (None, Some(other)) => bail!("unknown equivalence `{other}`"),
    };
    let utility = match (a.utility, e.utility.as_deref()) {
        (Some(u), _) => u,
        (None, None | Some("quality")) => Utility::Quality,
        (None, Some("one")) => Utility::One,
        (None, Some(other)) => bail!("unknown utility `{other}`"),
    };
    let settings = EvalSettings {
        k: a.k.or(e.k).unwrap_or(DEFAULT_K),
        patience: a.patience.or(e.patience).unwrap_or(DEFAULT_PATIENCE),
        equivalence,
        cosine_threshold: a.cosine_threshold.or(e.cosine_threshold).unwrap_or(DEFAULT_COSINE_THRESHOLD),
        utility,
        dsi: DsiConfig {
            mode: parse_dsi(&a.dsi_mode, &s.dsi_mode)?,
            stopwords: s.stopwords.as_ref().map(|w| w.iter().map(|x| x.to_lowercase()).collect()),
        },
        surprise: parse_surprise(&a.surprise, &s.surprise)?,
    };
    if !(settings.patience > 0.0 && settings.patience < 1.0) {
        bail!("patience must lie in (0, 1), got {}", settings.patience);
    }
    let cfgs = resolve_providers(ctx, &a.providers)?;
    let config = json!({
        "k": settings.k,
        "patience": settings.patience,
        "equivalence": settings.equivalence,
        "cosine_threshold": settings.cosine_threshold,
        "utility": settings.utility,
        "dsi_mode": settings.dsi.mode.as_str(),
        "surprise": settings.surprise.as_str(),
        "providers": cfgs,
    });
    let mut inputs = vec![a.generations.clone()];
    inputs.extend(a.reference.clone());
    inputs.extend(store_inputs(&cfgs));
    let input_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    let mut run = Run::start("eval", &ctx.out_dir, ctx.seed, &config, &input_refs)?;

    let sets = read_generations(&a.generations).with_context(|| a.generations.display().to_string())?;
    let references = match &a.reference {
        Some(p) => references_from(p)?,
        None => References::new(),
    };
    let clients = open_clients(ctx, &a.providers, cfgs)?;
    let results = evaluate_sets(sets, &references, &clients.providers(), &settings)?;
    let rows = summarize(&results);
    let header = Header::new("eval_sets", &run.run_digest)
        .with("k", settings.k)
        .with("patience", settings.patience)
        .with("providers", clients.ids());
    write_set_results(&run.output("eval_sets.jsonl")?, &header, &results)?;
    write_summary(&run.output("eval_summary.csv")?, &run.run_digest, &rows)?;
    write_plot_data(&run.output("plot_data.json")?, &run.run_digest, &rows)?;
    run.finish(clients.counters())?;
    println!("{}", serde_json::to_string_pretty(&json!({ "sets": results.len(), "summary": rows }))?);
    Ok(())
}

// ------------------------------------------------------------------- sweep

fn parse_dimensions(text: &str) -> anyhow::Result<Vec<Dimension>> {
    let dims: Vec<Dimension> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<Dimension>())
        .collect::<Result<_, _>>()?;
    if dims.is_empty() {
        bail!("no dimensions to sweep");
    }
    Ok(dims)
}

fn sweep(ctx: &Context_, a: &SweepArgs) -> anyhow::Result<()> {
    let f = &ctx.file.sweep;
    let t = &ctx.file.train;
    let grid = match (&a.grid, &f.grid) {
        (Some(g), _) => parse_grid(g)?,
        (None, Some(g)) => {
            crate::sweep::validate_grid(g)?;
            g.clone()
        }
        (None, None) => DEFAULT_GRID.to_vec(),
    };
    let dimensions = match (&a.dimensions, &f.dimensions) {
        (Some(d), _) => parse_dimensions(d)?,
        (None, Some(d)) => parse_dimensions(&d.join(","))?,
        (None, None) => Dimension::ALL.to_vec(),
    };
    let n_seeds = a.seeds.or(f.seeds).unwrap_or(DEFAULT_SEEDS);
    if n_seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    let settings = SweepSettings {
        dimensions,
        grid,
        seeds: (0..n_seeds as u64).map(|i| ctx.seed.wrapping_add(i)).collect(),
        base: a.lambda_base.or(f.lambda_base).unwrap_or(DEFAULT_SWEEP_BASE),
        beta: a.beta.or(ctx.file.weights.beta).unwrap_or(DEFAULT_BETA),
        learning_rate: a.lr.or(t.learning_rate).unwrap_or(DEFAULT_LEARNING_RATE),
        epochs: a.epochs.or(t.epochs).unwrap_or(DEFAULT_EPOCHS),
        batch_size: a.batch_size.or(t.batch_size),
    };
    let config = json!({
        "dimensions": settings.dimensions.iter().map(|d| d.as_str()).collect::<Vec<_>>(),
        "grid": settings.grid,
        "seeds": settings.seeds,
        "lambda_base": settings.base,
        "beta": settings.beta,
        "learning_rate": settings.learning_rate,
        "epochs": settings.epochs,
        "batch_size": settings.batch_size,
    });
    let mut run = Run::start("sweep", &ctx.out_dir, ctx.seed, &config, &[&a.pairs, &a.sft])?;
    let (_, pairs) = read_pairs(&a.pairs).with_context(|| a.pairs.display().to_string())?;
    let sft = read_sft(&a.sft).with_context(|| a.sft.display().to_string())?;
    let runs = run_sweep(&pairs, &sft, &settings)?;

    #[derive(Serialize)]
    struct RunRow<'a> {
        dimension: &'a str,
        lambda: f64,
        seed: u64,
        metric: Option<f64>,
        final_loss: f64,
        checkpoint: String,
    }
    let mut rows = Vec::new();
    for r in &runs {
        let rel = format!("sweep/{}-l{}-s{}.json", r.dimension.as_str(), lambda_tag(r.lambda), r.seed);
        let ckpt = checkpoint(
            CheckpointMeta { run_digest: &run.run_digest, config_digest: &run.config_digest },
            &r.train_config,
            &r.reference,
            &r.outcome,
            &r.pairs,
        );
        ckpt.write(&run.output(&rel)?)?;
        rows.push(RunRow {
            dimension: r.dimension.as_str(),
            lambda: r.lambda,
            seed: r.seed,
            metric: r.metric,
            final_loss: r.final_loss,
            checkpoint: rel,
        });
    }
    let mut w = csv_writer(&run.output("sweep_runs.csv")?, &run.run_digest)?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;
    let summary = summarize_sweep(&runs);
    let mut w = csv_writer(&run.output("sweep_summary.csv")?, &run.run_digest)?;
    for s in &summary {
        w.serialize(s)?;
    }
    w.flush()?;
    run.finish(BTreeMap::new())?;
    println!("{}", serde_json::to_string_pretty(&json!({ "runs": runs.len(), "summary": summary }))?);
    Ok(())
}

// ------------------------------------------------------------------ report

fn report(ctx: &Context_, a: &ReportArgs) -> anyhow::Result<()> {
    if a.judgments.is_none() && a.sets.is_none() {
        bail!("nothing to report: pass --judgments and/or --sets");
    }
    let inputs: Vec<&Path> = a.judgments.iter().chain(a.sets.iter()).map(PathBuf::as_path).collect();
    let mut run = Run::start("report", &ctx.out_dir, ctx.seed, &json!({}), &inputs)?;
    let mut printed = serde_json::Map::new();
    if let Some(path) = &a.judgments {
        let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
        let judgments = read_judgments(f).with_context(|| path.display().to_string())?;
        let table = win_rates(&judgments);
        let items = run.output("win_items.csv")?;
        let rates = run.output("win_rates.csv")?;
        write_win_rates(&items, &rates, &run.run_digest, &table)?;
        printed.insert("judgments".into(), judgments.len().into());
        printed.insert("items".into(), table.items.len().into());
        printed.insert("skipped_self_comparisons".into(), table.skipped.into());
    }
    if let Some(path) = &a.sets {
        let (_, results) = read_jsonl_file::<SetResult>(path).with_context(|| path.display().to_string())?;
        let rows = summarize(&results);
        write_summary(&run.output("eval_summary.csv")?, &run.run_digest, &rows)?;
        write_plot_data(&run.output("plot_data.json")?, &run.run_digest, &rows)?;
        printed.insert("sets".into(), results.len().into());
    }
    run.finish(BTreeMap::new())?;
    println!("{}", serde_json::to_string_pretty(&Value::Object(printed))?);
    Ok(())
}

/// Pairs loaded for tests and tools that share the CLI's reading rules.
pub fn load_pairs(path: &Path) -> anyhow::Result<Vec<PreferencePair>> {
    Ok(read_pairs(path)?.1)
}

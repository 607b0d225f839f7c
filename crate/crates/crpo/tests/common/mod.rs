#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use crpo::providers::{hash_vector, store_line, Input, Payload, ProviderKind};
use crpo::records::{record_to_json, write_pairs, write_sft, Header};
use crpo_core::curation::{build_sft_set, PairingConfig, DEFAULT_SFT_THRESHOLD};
use crpo_core::metrics::InjectionWeights;
use crpo_core::synthetic::{SyntheticConfig, SyntheticDataset};
use crpo_core::text::unique_words;

pub const EMBED_DIM: usize = 12;

/// Runs the binary with provider variables cleared.
pub fn crpo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crpo"))
        .args(args)
        .env_remove("CRPO_EMBED_ENDPOINT")
        .env_remove("CRPO_LL_ENDPOINT")
        .env_remove("CRPO_REWARD_ENDPOINT")
        .env_remove("CRPO_BEARER_TOKEN")
        .env_remove("SOURCE_DATE_EPOCH")
        .output()
        .expect("run crpo")
}

pub fn crpo_ok(args: &[&str]) -> String {
    let out = crpo(args);
    assert!(out.status.success(), "crpo {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

pub fn synthetic(seed: u64) -> SyntheticDataset {
    SyntheticDataset::generate(&SyntheticConfig { seed, ..Default::default() })
}

/// Corpus file of the synthetic dataset, one plain record per line.
pub fn write_synthetic_corpus(dir: &Path, seed: u64) -> PathBuf {
    let path = dir.join("corpus.jsonl");
    let mut text = String::new();
    for r in synthetic(seed).corpus().records() {
        text.push_str(&record_to_json(r));
        text.push('\n');
    }
    fs::write(&path, text).unwrap();
    path
}

/// Scored pairs (planted scores, default weights) and SFT files of the
/// synthetic dataset.
pub fn write_synthetic_scored(dir: &Path, seed: u64, beta: f64) -> (PathBuf, PathBuf) {
    let data = synthetic(seed);
    let weights = InjectionWeights { beta, ..InjectionWeights::default() };
    let pairs = data.scored_pairs(&PairingConfig::default(), &weights).unwrap();
    let sft = build_sft_set(data.corpus(), DEFAULT_SFT_THRESHOLD).unwrap();
    let (pp, sp) = (dir.join("scored_pairs.jsonl"), dir.join("sft.jsonl"));
    write_pairs(&pp, &Header::new("scored_pairs", "fixture"), &pairs).unwrap();
    write_sft(&sp, &Header::new("sft", "fixture"), &sft).unwrap();
    (pp, sp)
}

fn logprobs_for(response: &str) -> Vec<f64> {
    let n = response.split_whitespace().count().max(1);
    hash_vector(response, n).into_iter().map(|h| -(0.2 + 2.0 * h.abs())).collect()
}

fn reward_for(prompt: &str, response: &str) -> f64 {
    hash_vector(&format!("{prompt}\n{response}"), 1)[0] * 2.0
}

/// Embedding, likelihood and reward store files covering every response,
/// every word of every response and every (prompt, response) pair.
pub fn write_stores(dir: &Path, items: &[(String, String)]) -> [PathBuf; 3] {
    let mut texts = BTreeSet::new();
    for (_, r) in items {
        texts.insert(r.clone());
        texts.extend(unique_words(r, None));
    }
    let pairs: BTreeSet<&(String, String)> = items.iter().collect();

    let mut emb = String::new();
    for t in &texts {
        let input = Input::Text(t.clone());
        emb.push_str(&store_line(ProviderKind::Embedding, &input, &Payload::Vector(hash_vector(t, EMBED_DIM))));
        emb.push('\n');
    }
    let (mut ll, mut rw) = (String::new(), String::new());
    for (prompt, response) in pairs {
        let input = Input::pair(prompt, response);
        ll.push_str(&store_line(ProviderKind::Likelihood, &input, &Payload::Logprobs(logprobs_for(response))));
        ll.push('\n');
        rw.push_str(&store_line(ProviderKind::Reward, &input, &Payload::Scalar(reward_for(prompt, response))));
        rw.push('\n');
    }
    let paths = [dir.join("embed_store.jsonl"), dir.join("ll_store.jsonl"), dir.join("reward_store.jsonl")];
    fs::write(&paths[0], emb).unwrap();
    fs::write(&paths[1], ll).unwrap();
    fs::write(&paths[2], rw).unwrap();
    paths
}

/// (prompt, response) items of the synthetic corpus.
pub fn synthetic_items(seed: u64) -> Vec<(String, String)> {
    synthetic(seed).corpus().records().iter().map(|r| (r.prompt.clone(), r.response.clone())).collect()
}

/// Generation sets over the first `prompts` synthetic prompts for two
/// models: one that repeats a single answer, one that cycles through all
/// candidates.
pub fn write_generations(dir: &Path, seed: u64, prompts: usize) -> PathBuf {
    let data = synthetic(seed);
    let records = data.corpus().records();
    let mut lines = String::new();
    for p in 0..prompts {
        let group: Vec<_> = records.iter().filter(|r| r.id.starts_with(&format!("syn-{p:03}-"))).collect();
        for (model, gens) in [
            ("sft", (0..16).map(|i| group[i % 2].response.clone()).collect::<Vec<_>>()),
            ("crpo", (0..16).map(|i| group[i % group.len()].response.clone()).collect()),
        ] {
            let line = serde_json::json!({
                "prompt_id": format!("p{p:03}"),
                "prompt": group[0].prompt,
                "model_id": model,
                "task": group[0].task,
                "generations": gens,
            });
            lines.push_str(&line.to_string());
            lines.push('\n');
        }
    }
    let path = dir.join("generations.jsonl");
    fs::write(&path, lines).unwrap();
    path
}

pub fn store_flags(stores: &[PathBuf; 3]) -> Vec<String> {
    vec![
        "--embed-endpoint".into(),
        stores[0].display().to_string(),
        "--ll-endpoint".into(),
        stores[1].display().to_string(),
        "--reward-endpoint".into(),
        stores[2].display().to_string(),
    ]
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// CSV rows after the digest comment, as string maps.
pub fn read_csv(path: &Path) -> Vec<std::collections::BTreeMap<String, String>> {
    let text = fs::read_to_string(path).unwrap();
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let headers = rdr.headers().unwrap().clone();
    rdr.records()
        .map(|r| headers.iter().zip(r.unwrap().iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect())
        .collect()
}

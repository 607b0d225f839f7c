//! Run manifests: what a command read, how it was configured and what it
//! wrote. The run digest covers the command, the resolved configuration,
//! the input digests, the seed and the tool version, and every output file
//! records it in its header.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Serialize;
use serde_json::Value;

use crate::digest::{file_sha256, sha256_hex};
use crate::providers::Counters;
use crate::records::{recorded_run_digest, VERSION};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InputDigest {
    /// File name only, so runs from different directories compare equal.
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: Value,
    pub config_digest: String,
    pub run_digest: String,
    pub inputs: Vec<InputDigest>,
    /// Paths relative to the output directory.
    pub outputs: Vec<String>,
    pub counters: BTreeMap<String, Counters>,
    /// Seconds since the epoch from `SOURCE_DATE_EPOCH`, else null.
    pub timestamp: Option<u64>,
}

/// Digest of a canonical JSON rendering (object keys sorted).
pub fn json_digest(v: &Value) -> String {
    sha256_hex(v.to_string().as_bytes())
}

/// One command invocation in progress.
pub struct Run {
    pub command: String,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub config: Value,
    pub config_digest: String,
    pub run_digest: String,
    pub inputs: Vec<InputDigest>,
    outputs: Vec<String>,
}

impl Run {
    pub fn start(
        command: &str,
        out_dir: &Path,
        seed: u64,
        config: &impl Serialize,
        inputs: &[&Path],
    ) -> anyhow::Result<Run> {
        let config = serde_json::to_value(config)?;
        let config_digest = json_digest(&config);
        let mut digests = Vec::with_capacity(inputs.len());
        for p in inputs {
            let sha256 = file_sha256(p).with_context(|| format!("cannot read input {}", p.display()))?;
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            digests.push(InputDigest { name, sha256 });
        }
        let run_digest = json_digest(&serde_json::json!({
            "command": command,
            "config_digest": config_digest,
            "inputs": digests,
            "seed": seed,
            "version": VERSION,
        }));
        std::fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
        Ok(Run {
            command: command.into(),
            out_dir: out_dir.into(),
            seed,
            config,
            config_digest,
            run_digest,
            inputs: digests,
            outputs: Vec::new(),
        })
    }

    /// Registers an output and returns its full path, creating parent
    /// directories.
    pub fn output(&mut self, relative: &str) -> anyhow::Result<PathBuf> {
        let path = self.out_dir.join(relative);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        self.outputs.push(relative.to_string());
        Ok(path)
    }

    /// Checks that every registered output exists and records this run's
    /// digest, then writes `<command>.manifest.json`.
    pub fn finish(self, counters: BTreeMap<String, Counters>) -> anyhow::Result<PathBuf> {
        for rel in &self.outputs {
            let path = self.out_dir.join(rel);
            match recorded_run_digest(&path).with_context(|| format!("output {rel} was not written"))? {
                Some(d) if d == self.run_digest => {}
                _ => bail!("output {rel} does not record run digest {}", self.run_digest),
            }
        }
        let timestamp = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.trim().parse().ok());
        let manifest = Manifest {
            command: self.command.clone(),
            version: VERSION.into(),
            seed: self.seed,
            config: self.config,
            config_digest: self.config_digest,
            run_digest: self.run_digest,
            inputs: self.inputs,
            outputs: self.outputs,
            counters,
            timestamp,
        };
        let path = self.out_dir.join(format!("{}.manifest.json", self.command));
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(path)
    }
}

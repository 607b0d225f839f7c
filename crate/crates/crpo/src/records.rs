//! JSON-lines and CSV file formats.
//!
//! Every JSON-lines file written by the toolkit starts with a header line
//! `{"meta": {...}}` carrying at least `kind`, `version` and `run_digest`;
//! every CSV starts with a `# run_digest: <hex>` comment. Readers accept
//! files with or without a header.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crpo_core::corpus::{Corpus, CorpusError, RatedResponse, Split};
use crpo_core::curation::{PreferencePair, SftExample};
use crpo_core::eval::{DecodeParams, GenerationSet, Judgment, Winner};
use crpo_core::metrics::{CreativityScores, NormalizedScores};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum RecordError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn line_err(line: usize, message: impl Into<String>) -> RecordError {
    RecordError::Line { line, message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strictness {
    #[default]
    Strict,
    SkipInvalid,
}

/// First line of every JSON-lines output.
#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub kind: String,
    pub run_digest: String,
    pub fields: Map<String, Value>,
}

impl Header {
    pub fn new(kind: &str, run_digest: &str) -> Self {
        Header { kind: kind.into(), run_digest: run_digest.into(), fields: Map::new() }
    }

    pub fn with(mut self, key: &str, value: impl Serialize) -> Self {
        self.fields.insert(key.into(), serde_json::to_value(value).expect("header values serialize"));
        self
    }

    pub fn to_line(&self) -> String {
        let mut meta = self.fields.clone();
        meta.insert("kind".into(), Value::from(self.kind.clone()));
        meta.insert("run_digest".into(), Value::from(self.run_digest.clone()));
        meta.insert("version".into(), Value::from(VERSION));
        let mut outer = Map::new();
        outer.insert("meta".into(), Value::Object(meta));
        Value::Object(outer).to_string()
    }

    fn from_value(v: &Value) -> Option<Header> {
        let obj = v.as_object()?;
        if obj.len() != 1 {
            return None;
        }
        let mut meta = obj.get("meta")?.as_object()?.clone();
        let kind = meta.remove("kind")?.as_str()?.to_string();
        let run_digest = meta.remove("run_digest")?.as_str()?.to_string();
        meta.remove("version");
        Some(Header { kind, run_digest, fields: meta })
    }
}

/// Parsed JSON values keyed by 1-based line number.
type NumberedValues = Vec<(usize, Result<Value, String>)>;

/// Reads non-blank lines as JSON values with 1-based line numbers. A leading
/// header line is split off.
fn read_values(reader: impl BufRead) -> Result<(Option<Header>, NumberedValues), RecordError> {
    let mut header = None;
    let mut out = Vec::new();
    let mut first = true;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<Value>(&line).map_err(|e| format!("malformed JSON: {e}"));
        if first {
            first = false;
            if let Ok(v) = &parsed {
                if let Some(h) = Header::from_value(v) {
                    header = Some(h);
                    continue;
                }
            }
        }
        out.push((i + 1, parsed));
    }
    Ok((header, out))
}

/// Reads a JSON-lines file of `T`, failing on the first bad line.
pub fn read_jsonl<T: DeserializeOwned>(reader: impl BufRead) -> Result<(Option<Header>, Vec<T>), RecordError> {
    let (header, values) = read_values(reader)?;
    let mut items = Vec::with_capacity(values.len());
    for (line, v) in values {
        let v = v.map_err(|m| line_err(line, m))?;
        items.push(serde_json::from_value(v).map_err(|e| line_err(line, e.to_string()))?);
    }
    Ok((header, items))
}

pub fn read_jsonl_file<T: DeserializeOwned>(path: &Path) -> Result<(Option<Header>, Vec<T>), RecordError> {
    read_jsonl(BufReader::new(File::open(path)?))
}

pub fn write_jsonl<T: Serialize>(path: &Path, header: &Header, items: impl IntoIterator<Item = T>) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.to_line())?;
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// A CSV writer whose file starts with the run-digest comment line.
pub fn csv_writer(path: &Path, run_digest: &str) -> io::Result<csv::Writer<File>> {
    let mut f = File::create(path)?;
    writeln!(f, "# run_digest: {run_digest}")?;
    Ok(csv::Writer::from_writer(f))
}

/// Run digest recorded in an output file: the JSON-lines header, the CSV
/// comment line, or a top-level `run_digest` key of a JSON document.
pub fn recorded_run_digest(path: &Path) -> io::Result<Option<String>> {
    let mut first = String::new();
    BufReader::new(File::open(path)?).read_line(&mut first)?;
    if let Some(rest) = first.trim_end().strip_prefix("# run_digest: ") {
        return Ok(Some(rest.to_string()));
    }
    if let Some(h) = serde_json::from_str::<Value>(&first).ok().as_ref().and_then(Header::from_value) {
        return Ok(Some(h.run_digest));
    }
    let whole: Option<Value> = serde_json::from_reader(BufReader::new(File::open(path)?)).ok();
    Ok(whole.as_ref().and_then(|v| v.get("run_digest")).and_then(Value::as_str).map(str::to_string))
}

// ---------------------------------------------------------------- corpus

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParseReport {
    pub parsed: usize,
    /// (line, reason) of every skipped line.
    pub skipped: Vec<(usize, String)>,
}

enum FieldError {
    Fatal(String),
    Invalid(String),
}

fn take_string(obj: &mut Map<String, Value>, key: &str, required: bool) -> Result<Option<String>, FieldError> {
    match obj.remove(key) {
        Some(Value::String(s)) => Ok(Some(s)),
        Some(Value::Null) | None if !required => Ok(None),
        None | Some(Value::Null) => Err(FieldError::Invalid(format!("missing field `{key}`"))),
        Some(other) => Err(FieldError::Invalid(format!("field `{key}` must be a string, got {other}"))),
    }
}

fn record_from_value(v: Value) -> Result<RatedResponse, FieldError> {
    let Value::Object(mut obj) = v else {
        return Err(FieldError::Invalid("record is not a JSON object".into()));
    };
    let id = take_string(&mut obj, "id", true)?.unwrap_or_default();
    let task = take_string(&mut obj, "task", true)?.unwrap_or_default();
    let language = take_string(&mut obj, "language", false)?.unwrap_or_else(|| "und".into());
    let prompt = take_string(&mut obj, "prompt", true)?.unwrap_or_default();
    let response = take_string(&mut obj, "response", true)?.unwrap_or_default();
    let rater_scores = match obj.remove("rater_scores") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(xs)) => xs
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| FieldError::Invalid(format!("non-numeric rater score {x}"))))
            .collect::<Result<_, _>>()?,
        Some(other) => return Err(FieldError::Invalid(format!("`rater_scores` must be an array, got {other}"))),
    };
    let rating = match obj.remove("rating") {
        None | Some(Value::Null) => None,
        Some(x) => match x.as_i64() {
            Some(r) => Some(r),
            None => match x.as_f64() {
                Some(f) if f.fract() == 0.0 && f.abs() < 1e15 => Some(f as i64),
                _ => return Err(FieldError::Invalid(format!("`rating` must be an integer, got {x}"))),
            },
        },
    };
    let split = match take_string(&mut obj, "split", false)? {
        None => Split::Unassigned,
        Some(s) => s.parse().map_err(|e: CorpusError| FieldError::Fatal(e.to_string()))?,
    };
    let extra: BTreeMap<String, String> = obj.into_iter().map(|(k, v)| (k, v.to_string())).collect();
    let r = RatedResponse { id, task, language, prompt, response, rater_scores, rating, split, extra };
    r.validate().map_err(|e| FieldError::Invalid(e.to_string()))?;
    Ok(r)
}

/// Parses rated-response records. Unknown split labels fail in both modes;
/// other invalid lines fail in strict mode and are counted otherwise.
pub fn parse_rated_records(reader: impl BufRead, strictness: Strictness) -> Result<(Corpus, ParseReport), RecordError> {
    let (_, values) = read_values(reader)?;
    let mut corpus = Corpus::new();
    let mut report = ParseReport::default();
    for (line, v) in values {
        let result = v
            .map_err(FieldError::Invalid)
            .and_then(record_from_value)
            .and_then(|r| corpus.push(r).map_err(|e| FieldError::Invalid(e.to_string())));
        match result {
            Ok(()) => report.parsed += 1,
            Err(FieldError::Fatal(m)) => return Err(line_err(line, m)),
            Err(FieldError::Invalid(m)) => match strictness {
                Strictness::Strict => return Err(line_err(line, m)),
                Strictness::SkipInvalid => report.skipped.push((line, m)),
            },
        }
    }
    Ok((corpus, report))
}

/// Canonical JSON of one record: keys sorted, extras restored verbatim.
pub fn record_to_json(r: &RatedResponse) -> String {
    let mut obj = Map::new();
    for (k, raw) in &r.extra {
        let v = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.clone()));
        obj.insert(k.clone(), v);
    }
    obj.insert("id".into(), r.id.clone().into());
    obj.insert("task".into(), r.task.clone().into());
    obj.insert("language".into(), r.language.clone().into());
    obj.insert("prompt".into(), r.prompt.clone().into());
    obj.insert("response".into(), r.response.clone().into());
    obj.insert("rater_scores".into(), r.rater_scores.iter().map(|s| Value::from(*s)).collect());
    if let Some(rating) = r.rating {
        obj.insert("rating".into(), rating.into());
    }
    obj.insert("split".into(), r.split.as_str().into());
    Value::Object(obj).to_string()
}

pub fn write_corpus(path: &Path, header: &Header, corpus: &Corpus) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.to_line())?;
    for r in corpus.records() {
        writeln!(w, "{}", record_to_json(r))?;
    }
    w.flush()
}

// ----------------------------------------------------------------- pairs

/// Raw scores, plus normalized ones once fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreFields {
    pub diversity: Option<f64>,
    pub novelty: f64,
    pub surprise: f64,
    pub quality: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diversity_norm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub novelty_norm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surprise_norm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality_norm: Option<f64>,
}

impl From<&CreativityScores> for ScoreFields {
    fn from(s: &CreativityScores) -> Self {
        let n = s.normalized;
        ScoreFields {
            diversity: s.diversity,
            novelty: s.novelty,
            surprise: s.surprise,
            quality: s.quality,
            diversity_norm: n.map(|n| n.diversity),
            novelty_norm: n.map(|n| n.novelty),
            surprise_norm: n.map(|n| n.surprise),
            quality_norm: n.map(|n| n.quality),
        }
    }
}

impl From<&ScoreFields> for CreativityScores {
    fn from(s: &ScoreFields) -> Self {
        let normalized = match (s.diversity_norm, s.novelty_norm, s.surprise_norm, s.quality_norm) {
            (Some(diversity), Some(novelty), Some(surprise), Some(quality)) => {
                Some(NormalizedScores { diversity, novelty, surprise, quality })
            }
            _ => None,
        };
        CreativityScores {
            diversity: s.diversity,
            novelty: s.novelty,
            surprise: s.surprise,
            quality: s.quality,
            normalized,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub task: String,
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub chosen_id: String,
    pub rejected_id: String,
    pub chosen_rating: i64,
    pub rejected_rating: i64,
    pub margin: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<ScoreFields>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejected_scores: Option<ScoreFields>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
}

impl From<&PreferencePair> for PairRecord {
    fn from(p: &PreferencePair) -> Self {
        PairRecord {
            task: p.task.clone(),
            prompt: p.prompt.clone(),
            chosen: p.chosen.clone(),
            rejected: p.rejected.clone(),
            chosen_id: p.chosen_id.clone(),
            rejected_id: p.rejected_id.clone(),
            chosen_rating: p.chosen_rating,
            rejected_rating: p.rejected_rating,
            margin: p.margin,
            scores: p.scores.as_ref().map(ScoreFields::from),
            rejected_scores: p.rejected_scores.as_ref().map(ScoreFields::from),
            weight: p.weight,
        }
    }
}

impl From<PairRecord> for PreferencePair {
    fn from(r: PairRecord) -> Self {
        PreferencePair {
            task: r.task,
            prompt: r.prompt,
            chosen: r.chosen,
            rejected: r.rejected,
            chosen_id: r.chosen_id,
            rejected_id: r.rejected_id,
            chosen_rating: r.chosen_rating,
            rejected_rating: r.rejected_rating,
            margin: r.margin,
            scores: r.scores.as_ref().map(CreativityScores::from),
            rejected_scores: r.rejected_scores.as_ref().map(CreativityScores::from),
            weight: r.weight,
        }
    }
}

/// Reads a pairs file and checks the pair invariants.
pub fn read_pairs(path: &Path) -> Result<(Option<Header>, Vec<PreferencePair>), RecordError> {
    let (header, records) = read_jsonl_file::<PairRecord>(path)?;
    let mut pairs = Vec::with_capacity(records.len());
    for (i, r) in records.into_iter().enumerate() {
        if r.chosen_rating - r.rejected_rating != r.margin || r.chosen_id == r.rejected_id {
            return Err(line_err(i + 1 + header.is_some() as usize, "inconsistent pair (margin or ids)"));
        }
        if r.weight.is_some_and(|w| !(w.is_finite() && w >= 0.0)) {
            return Err(line_err(i + 1 + header.is_some() as usize, "weight must be finite and non-negative"));
        }
        pairs.push(r.into());
    }
    Ok((header, pairs))
}

pub fn write_pairs(path: &Path, header: &Header, pairs: &[PreferencePair]) -> io::Result<()> {
    write_jsonl(path, header, pairs.iter().map(PairRecord::from))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub task: String,
    pub prompt: String,
    pub response: String,
    pub rating: i64,
}

pub fn write_sft(path: &Path, header: &Header, sft: &[SftExample]) -> io::Result<()> {
    write_jsonl(
        path,
        header,
        sft.iter().map(|s| SftRecord {
            task: s.task.clone(),
            prompt: s.prompt.clone(),
            response: s.response.clone(),
            rating: s.rating,
        }),
    )
}

pub fn read_sft(path: &Path) -> Result<Vec<SftExample>, RecordError> {
    let (_, rows) = read_jsonl_file::<SftRecord>(path)?;
    Ok(rows
        .into_iter()
        .map(|r| SftExample { task: r.task, prompt: r.prompt, response: r.response, rating: r.rating })
        .collect())
}

// ----------------------------------------------------------- generations

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParamsRecord {
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub prompt_id: String,
    pub prompt: String,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    pub generations: Vec<String>,
    #[serde(default)]
    pub decode_params: Vec<DecodeParamsRecord>,
}

pub fn read_generations(path: &Path) -> Result<Vec<GenerationSet>, RecordError> {
    let (header, rows) = read_jsonl_file::<GenerationRecord>(path)?;
    let offset = header.is_some() as usize;
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| {
            if r.generations.is_empty() {
                return Err(line_err(i + 1 + offset, "empty generation list"));
            }
            if !r.decode_params.is_empty() && r.decode_params.len() != r.generations.len() {
                return Err(line_err(i + 1 + offset, "decode_params length differs from generations"));
            }
            Ok(GenerationSet {
                prompt_id: r.prompt_id,
                prompt: r.prompt,
                model_id: r.model_id,
                task: r.task,
                generations: r.generations,
                decode_params: r
                    .decode_params
                    .iter()
                    .map(|d| DecodeParams { temperature: d.temperature, top_p: d.top_p, top_k: d.top_k })
                    .collect(),
                per_gen_scores: None,
                partition: None,
            })
        })
        .collect()
}

// ------------------------------------------------------------- judgments

#[derive(Debug, Deserialize)]
struct JudgmentRow {
    prompt_id: String,
    model_a: String,
    model_b: String,
    rater_id: String,
    winner: String,
}

/// Reads a judgments CSV (`prompt_id, model_a, model_b, rater_id, winner`).
/// `winner` is `a`, `b` or the winning model's name.
pub fn read_judgments(mut reader: impl io::Read) -> Result<Vec<Judgment>, RecordError> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    // physical line of each data row (rows never span lines)
    let data_lines: Vec<usize> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty())
        .map(|(i, _)| i + 1)
        .skip(1)
        .collect();
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = data_lines.get(out.len()).copied().unwrap_or(0);
        let row: JudgmentRow = rec.deserialize(Some(&headers))?;
        let winner = match row.winner.to_ascii_lowercase().as_str() {
            "a" => Winner::A,
            "b" => Winner::B,
            _ if row.winner == row.model_a => Winner::A,
            _ if row.winner == row.model_b => Winner::B,
            _ => {
                return Err(line_err(line, format!("winner must be `a` or `b`, got `{}`", row.winner)));
            }
        };
        out.push(Judgment {
            prompt_id: row.prompt_id,
            model_a: row.model_a,
            model_b: row.model_b,
            rater_id: row.rater_id,
            winner,
        });
    }
    Ok(out)
}

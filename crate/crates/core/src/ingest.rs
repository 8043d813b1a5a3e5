//! Corpus ingestion.
//!
//! Each supported fact-checking corpus has an adapter that reads its
//! distribution layout and converts rows straight into the normalized record
//! form; nothing downstream sees the native layouts.
//!
//! | dataset         | layout                                                         | factual / non-factual labels |
//! |-----------------|----------------------------------------------------------------|------------------------------|
//! | `climate-fever` | JSON lines: `claim_id`, `claim`, `claim_label`, `evidences[].evidence` | `SUPPORTS` / `REFUTES`       |
//! | `pubhealth`     | TSV with header: `claim_id`, `claim`, `label`, `explanation`, ... | `true` / `false`             |
//! | `wice`          | JSON lines: `claim`, `label`, `evidence[]`, `meta`             | `supported` / `not_supported` |
//! | `generic`       | JSON lines of [`NormalizedRecord`]                             | any of the above             |
//!
//! Rows with any other label (`NOT_ENOUGH_INFO`, `DISPUTED`, `mixture`,
//! `partially_supported`, ...) are dropped and counted.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::types::{BinaryVerdict, ClaimRecord, DatasetKind};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("label `{label}` is not a binary verdict for {dataset}")]
    UnmappableLabel { label: String, dataset: DatasetKind },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("row {row}: {reason}")]
    Malformed { row: usize, reason: String },
    #[error("count mismatch: expected {expected}, observed {observed}")]
    CountMismatch { expected: ExpectedCounts, observed: ExpectedCounts },
    #[error("duplicate claim id `{0}`")]
    DuplicateId(String),
}

/// Per-verdict record counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedCounts {
    pub factual: usize,
    pub non_factual: usize,
}

impl ExpectedCounts {
    pub fn total(&self) -> usize {
        self.factual + self.non_factual
    }

    pub fn of(records: &[ClaimRecord]) -> Self {
        let factual = records.iter().filter(|r| r.gold == BinaryVerdict::Factual).count();
        ExpectedCounts { factual, non_factual: records.len() - factual }
    }
}

impl std::fmt::Display for ExpectedCounts {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} factual / {} non-factual", self.factual, self.non_factual)
    }
}

impl std::str::FromStr for ExpectedCounts {
    type Err = String;

    /// Parses `"654,253"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `FACTUAL,NONFACTUAL`, got `{s}`"))?;
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
        Ok(ExpectedCounts { factual: parse(a)?, non_factual: parse(b)? })
    }
}

/// How to read the corpus file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum CorpusFormat {
    /// Decide from the first non-blank line.
    #[default]
    Auto,
    /// The dataset's own distribution layout.
    Native,
    /// Generic normalized records.
    Normalized,
}

#[derive(Debug, Clone)]
pub struct CorpusManifest {
    pub dataset: DatasetKind,
    pub path: PathBuf,
    pub expected_counts: Option<ExpectedCounts>,
    pub format: CorpusFormat,
    /// Treat malformed rows as fatal instead of counting them.
    pub strict: bool,
}

impl CorpusManifest {
    pub fn new(dataset: DatasetKind, path: impl Into<PathBuf>) -> Self {
        CorpusManifest { dataset, path: path.into(), expected_counts: None, format: CorpusFormat::Auto, strict: false }
    }

    pub fn with_expected_counts(mut self, counts: ExpectedCounts) -> Self {
        self.expected_counts = Some(counts);
        self
    }
}

/// The generic normalized corpus record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedRecord {
    pub id: String,
    pub text: String,
    pub raw_label: String,
    pub dataset: DatasetKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
}

impl From<&ClaimRecord> for NormalizedRecord {
    fn from(r: &ClaimRecord) -> Self {
        NormalizedRecord {
            id: r.id.clone(),
            text: r.text.clone(),
            raw_label: r.raw_label.clone(),
            dataset: r.dataset,
            evidence: r.evidence.clone(),
            topic: r.topic.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LoadWarning {
    Unmappable { row: usize, label: String },
    Malformed { row: usize, reason: String },
}

#[derive(Debug, Clone, Default)]
pub struct LoadedCorpus {
    pub records: Vec<ClaimRecord>,
    pub warnings: Vec<LoadWarning>,
}

pub fn normalize_label(raw: &str, dataset: DatasetKind) -> Result<BinaryVerdict, IngestError> {
    let label = raw.trim().to_lowercase();
    let verdict = match (dataset, label.as_str()) {
        (DatasetKind::ClimateFever | DatasetKind::Generic, "supports") => Some(BinaryVerdict::Factual),
        (DatasetKind::ClimateFever | DatasetKind::Generic, "refutes") => Some(BinaryVerdict::NonFactual),
        (DatasetKind::PubHealth | DatasetKind::Generic, "true") => Some(BinaryVerdict::Factual),
        (DatasetKind::PubHealth | DatasetKind::Generic, "false") => Some(BinaryVerdict::NonFactual),
        (DatasetKind::Wice | DatasetKind::Generic, "supported") => Some(BinaryVerdict::Factual),
        (DatasetKind::Wice | DatasetKind::Generic, "not_supported") => Some(BinaryVerdict::NonFactual),
        _ => None,
    };
    verdict.ok_or_else(|| IngestError::UnmappableLabel { label: raw.to_string(), dataset })
}

/// Load one corpus, dropping rows whose label is not a binary verdict.
pub fn load_corpus(manifest: &CorpusManifest) -> Result<LoadedCorpus, IngestError> {
    let bytes = fs::read(&manifest.path).map_err(|source| IngestError::Io { path: manifest.path.clone(), source })?;
    let text = String::from_utf8_lossy(&bytes);
    let loaded = parse_corpus(&text, manifest.dataset, manifest.format, manifest.strict)?;
    if let Some(expected) = manifest.expected_counts {
        let observed = ExpectedCounts::of(&loaded.records);
        if observed != expected {
            return Err(IngestError::CountMismatch { expected, observed });
        }
    }
    for w in &loaded.warnings {
        log::warn!("{}: {w:?}", manifest.path.display());
    }
    Ok(loaded)
}

/// Parse corpus text. Exposed separately from [`load_corpus`] for in-memory use.
pub fn parse_corpus(
    text: &str,
    dataset: DatasetKind,
    format: CorpusFormat,
    strict: bool,
) -> Result<LoadedCorpus, IngestError> {
    let format = match format {
        CorpusFormat::Auto => detect_format(text, dataset),
        f => f,
    };
    let rows = match (format, dataset) {
        (CorpusFormat::Normalized, _) | (_, DatasetKind::Generic) => normalized_rows(text),
        (_, DatasetKind::ClimateFever) => climate_fever_rows(text),
        (_, DatasetKind::PubHealth) => pubhealth_rows(text),
        (_, DatasetKind::Wice) => wice_rows(text),
    };

    let mut out = LoadedCorpus::default();
    let mut seen = HashSet::new();
    for (row, parsed) in rows {
        let rec = match parsed {
            Ok(rec) => rec,
            Err(reason) if strict => return Err(IngestError::Malformed { row, reason }),
            Err(reason) => {
                out.warnings.push(LoadWarning::Malformed { row, reason });
                continue;
            }
        };
        let gold = match normalize_label(&rec.raw_label, rec.dataset) {
            Ok(g) => g,
            Err(_) => {
                out.warnings.push(LoadWarning::Unmappable { row, label: rec.raw_label });
                continue;
            }
        };
        if !seen.insert(rec.id.clone()) {
            return Err(IngestError::DuplicateId(rec.id));
        }
        out.records.push(ClaimRecord {
            id: rec.id,
            text: rec.text,
            gold,
            raw_label: rec.raw_label,
            dataset: rec.dataset,
            evidence: rec.evidence,
            topic: rec.topic,
        });
    }
    Ok(out)
}

/// Concatenate corpora, rejecting duplicate ids.
pub fn merge_corpora(corpora: Vec<Vec<ClaimRecord>>) -> Result<Vec<ClaimRecord>, IngestError> {
    let mut seen = HashSet::new();
    let mut merged = Vec::with_capacity(corpora.iter().map(Vec::len).sum());
    for record in corpora.into_iter().flatten() {
        if !seen.insert(record.id.clone()) {
            return Err(IngestError::DuplicateId(record.id));
        }
        merged.push(record);
    }
    Ok(merged)
}

fn detect_format(text: &str, dataset: DatasetKind) -> CorpusFormat {
    if dataset == DatasetKind::Generic {
        return CorpusFormat::Normalized;
    }
    let first = text.lines().find(|l| !l.trim().is_empty());
    match first.and_then(|l| serde_json::from_str::<serde_json::Value>(l).ok()) {
        Some(v) if v.get("raw_label").is_some() => CorpusFormat::Normalized,
        _ => CorpusFormat::Native,
    }
}

type Row = (usize, Result<NormalizedRecord, String>);

fn json_rows(text: &str) -> impl Iterator<Item = (usize, Result<serde_json::Value, String>)> + '_ {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(row, l)| (row, serde_json::from_str(l).map_err(|e| format!("invalid JSON: {e}"))))
}

fn str_field(v: &serde_json::Value, key: &str) -> Result<String, String> {
    match v.get(key) {
        Some(serde_json::Value::String(s)) => Ok(s.clone()),
        Some(serde_json::Value::Number(n)) => Ok(n.to_string()),
        Some(_) => Err(format!("field `{key}` is not a string")),
        None => Err(format!("missing field `{key}`")),
    }
}

fn non_empty(s: String, key: &str) -> Result<String, String> {
    if s.trim().is_empty() {
        Err(format!("empty `{key}`"))
    } else {
        Ok(s)
    }
}

fn joined_text(items: Option<&serde_json::Value>, inner_key: Option<&str>) -> Option<String> {
    let items = items?.as_array()?;
    let parts: Vec<&str> = items
        .iter()
        .filter_map(|item| match inner_key {
            Some(k) => item.get(k).and_then(|v| v.as_str()),
            None => item.as_str(),
        })
        .collect();
    (!parts.is_empty()).then(|| parts.join(" "))
}

fn normalized_rows(text: &str) -> Vec<Row> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(row, l)| {
            let rec =
                serde_json::from_str::<NormalizedRecord>(l).map_err(|e| format!("invalid record: {e}")).and_then(|r| {
                    non_empty(r.text.clone(), "text")?;
                    non_empty(r.id.clone(), "id")?;
                    Ok(r)
                });
            (row, rec)
        })
        .collect()
}

fn climate_fever_rows(text: &str) -> Vec<Row> {
    json_rows(text)
        .map(|(row, v)| {
            let rec = v.and_then(|v| {
                Ok(NormalizedRecord {
                    id: format!("{}:{row}", DatasetKind::ClimateFever),
                    text: non_empty(str_field(&v, "claim")?, "claim")?,
                    raw_label: str_field(&v, "claim_label")?,
                    dataset: DatasetKind::ClimateFever,
                    evidence: joined_text(v.get("evidences"), Some("evidence")),
                    topic: None,
                })
            });
            (row, rec)
        })
        .collect()
}

fn wice_rows(text: &str) -> Vec<Row> {
    json_rows(text)
        .map(|(row, v)| {
            let rec = v.and_then(|v| {
                Ok(NormalizedRecord {
                    id: format!("{}:{row}", DatasetKind::Wice),
                    text: non_empty(str_field(&v, "claim")?, "claim")?,
                    raw_label: str_field(&v, "label")?,
                    dataset: DatasetKind::Wice,
                    evidence: joined_text(v.get("evidence"), None),
                    topic: None,
                })
            });
            (row, rec)
        })
        .collect()
}

/// Split one TSV line, honoring double-quoted fields (with `""` escapes).
fn split_tsv(line: &str) -> Result<Vec<String>, String> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut chars = line.chars().peekable();
    let mut quoted = false;
    let mut at_start = true;
    while let Some(c) = chars.next() {
        match c {
            '"' if at_start => {
                quoted = true;
                at_start = false;
            }
            '"' if quoted => {
                if chars.peek() == Some(&'"') {
                    chars.next();
                    cur.push('"');
                } else {
                    quoted = false;
                }
            }
            '\t' if !quoted => {
                fields.push(std::mem::take(&mut cur));
                at_start = true;
            }
            _ => {
                cur.push(c);
                at_start = false;
            }
        }
    }
    if quoted {
        return Err("unterminated quoted field".into());
    }
    fields.push(cur);
    Ok(fields)
}

fn pubhealth_rows(text: &str) -> Vec<Row> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let Some(header) = lines.next() else {
        return Vec::new();
    };
    let header = match split_tsv(header) {
        Ok(h) => h,
        Err(e) => return vec![(0, Err(format!("header: {e}")))],
    };
    let col: BTreeMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
    let need = |name: &str| col.get(name).copied().ok_or_else(|| format!("header lacks `{name}` column"));
    let columns = need("claim").and_then(|c| Ok((c, need("label")?)));
    let explanation = col.get("explanation").copied();

    lines
        .enumerate()
        .map(|(row, line)| {
            let rec = columns.clone().and_then(|(claim_col, label_col)| {
                let fields = split_tsv(line)?;
                let get = |i: usize| fields.get(i).cloned().ok_or_else(|| format!("row has {} fields", fields.len()));
                Ok(NormalizedRecord {
                    id: format!("{}:{row}", DatasetKind::PubHealth),
                    text: non_empty(get(claim_col)?, "claim")?,
                    raw_label: get(label_col)?,
                    dataset: DatasetKind::PubHealth,
                    evidence: explanation.and_then(|i| fields.get(i).cloned()).filter(|s| !s.trim().is_empty()),
                    topic: None,
                })
            });
            (row, rec)
        })
        .collect()
}

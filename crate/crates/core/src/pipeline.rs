//! Dataset construction: generate a reference per claim, drop refusals,
//! classify the claim against its reference, label misclassifications as
//! hallucinations, then balance hallucinatory and factual entries.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{BackendError, ChatBackend, ChatRequest, Purpose};
use crate::exec::parallel_map;
use crate::grammar;
use crate::ingest::NormalizedRecord;
use crate::prompts::{self, PromptError, PromptRegistry};
use crate::records::{self, RecordError};
use crate::types::{
    BalancedDataset, BinaryVerdict, Category, ClaimRecord, ClassificationResult, DatasetEntry, GenerationParams,
    GenerationStats, Reference, Validity, JUDGMENT_TEMPERATURE,
};

pub const REFERENCES_FILE: &str = "references.gen";
pub const CLASSIFICATIONS_FILE: &str = "classifications";
pub const LABELS_FILE: &str = "labels";
pub const DATASET_FILE: &str = "dataset.balanced";
pub const FAILURES_FILE: &str = "failures";
pub const MANIFEST_FILE: &str = "manifest.json";

const DEFAULT_REFUSAL_PATTERNS: &str = include_str!("../assets/refusal_patterns.txt");

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("unparseable reply: {raw:?}")]
    Unparseable { raw: String },
    #[error("reference for `{0}` is not concrete")]
    NotConcrete(String),
    #[error("need {needed} factual entries to balance, only {available} available")]
    InsufficientFactual { needed: usize, available: usize },
    #[error("hallucination rate over zero claims")]
    DivisionByZero,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("{failed} of {total} claims failed, above the allowed fraction {allowed}")]
    TooManyFailures { failed: usize, total: usize, allowed: f64 },
    #[error(transparent)]
    Records(#[from] RecordError),
    #[error("refusal pattern file {path}: {message}")]
    Patterns { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum PatternKind {
    Substring,
    Prefix,
    SoleParagraph,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct RefusalPattern {
    kind: PatternKind,
    needle: String,
}

/// Pattern list deciding whether a generated reference is a refusal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefusalFilter {
    patterns: Vec<RefusalPattern>,
}

impl Default for RefusalFilter {
    fn default() -> Self {
        RefusalFilter::parse(DEFAULT_REFUSAL_PATTERNS)
    }
}

fn fold(text: &str) -> String {
    text.to_lowercase().replace(['\u{2019}', '\u{2018}'], "'")
}

impl RefusalFilter {
    pub fn parse(text: &str) -> Self {
        let patterns = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| {
                let (kind, needle) = match l.as_bytes()[0] {
                    b'^' => (PatternKind::Prefix, &l[1..]),
                    b'~' => (PatternKind::SoleParagraph, &l[1..]),
                    _ => (PatternKind::Substring, l),
                };
                RefusalPattern { kind, needle: fold(needle.trim()) }
            })
            .filter(|p| !p.needle.is_empty())
            .collect();
        RefusalFilter { patterns }
    }

    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        std::fs::read_to_string(path)
            .map(|t| Self::parse(&t))
            .map_err(|e| PipelineError::Patterns { path: path.display().to_string(), message: e.to_string() })
    }

    /// False for empty replies and for replies matching any refusal pattern.
    pub fn is_concrete(&self, text: &str) -> bool {
        let folded = fold(text.trim());
        if folded.chars().all(|c| !c.is_alphanumeric()) {
            return false;
        }
        let paragraphs = folded.split("\n\n").filter(|p| !p.trim().is_empty()).count();
        !self.patterns.iter().any(|p| match p.kind {
            PatternKind::Substring => folded.contains(&p.needle),
            PatternKind::Prefix => folded.starts_with(&p.needle),
            PatternKind::SoleParagraph => paragraphs <= 1 && folded.contains(&p.needle),
        })
    }
}

/// [`RefusalFilter::is_concrete`] with the shipped pattern list.
pub fn is_concrete(text: &str) -> bool {
    RefusalFilter::default().is_concrete(text)
}

pub fn generate_reference(
    claim: &ClaimRecord,
    params: &GenerationParams,
    prompts: &PromptRegistry,
    refusals: &RefusalFilter,
    backend: &dyn ChatBackend,
) -> Result<Reference, PipelineError> {
    let prompt = prompts.render(&params.prompt_template_id, &[("claim", &claim.text)])?;
    let request = ChatRequest::new(prompt, params.clone(), Purpose::Generation).for_claim(&claim.id);
    let text = backend.complete(&request)?;
    let validity = if refusals.is_concrete(&text) { Validity::Concrete } else { Validity::Refusal };
    Ok(Reference { claim_id: claim.id.clone(), text, validity, params: params.clone() })
}

/// Ask the model whether a pattern-accepted reference really has concrete content.
pub fn confirm_concrete(
    reference: &Reference,
    prompts: &PromptRegistry,
    backend: &dyn ChatBackend,
) -> Result<bool, PipelineError> {
    let prompt = prompts.render(prompts::CONCRETE_CHECK, &[("reference", &reference.text)])?;
    let params = GenerationParams {
        model_id: reference.params.model_id.clone(),
        temperature: JUDGMENT_TEMPERATURE,
        prompt_template_id: prompts::CONCRETE_CHECK.to_string(),
        sample_index: 0,
    };
    let request = ChatRequest::new(prompt, params, Purpose::Classification).for_claim(&reference.claim_id);
    // An unclear answer keeps the reference.
    Ok(grammar::parse_yes_no(&backend.complete(&request)?).unwrap_or(true))
}

pub(crate) struct Parsed<T> {
    pub value: T,
    pub raw: String,
    pub key: String,
}

/// Call `backend` until `parse` accepts the reply, at most `attempts` times.
pub(crate) fn ask_until_parsed<T>(
    request: ChatRequest,
    attempts: u32,
    backend: &dyn ChatBackend,
    parse: impl Fn(&str) -> Option<T>,
) -> Result<Parsed<T>, PipelineError> {
    let mut last = String::new();
    for attempt in 0..attempts.max(1) {
        let request = request.clone().with_attempt(attempt);
        let reply = backend.complete(&request)?;
        if let Some(value) = parse(&reply) {
            return Ok(Parsed { value, raw: reply, key: request.key() });
        }
        last = reply;
    }
    Err(PipelineError::Unparseable { raw: last })
}

#[allow(clippy::too_many_arguments)]
pub fn classify_claim(
    claim: &ClaimRecord,
    reference: &Reference,
    template_id: &str,
    model_id: &str,
    attempts: u32,
    prompts: &PromptRegistry,
    backend: &dyn ChatBackend,
) -> Result<ClassificationResult, PipelineError> {
    if !reference.is_concrete() {
        return Err(PipelineError::NotConcrete(claim.id.clone()));
    }
    let prompt = prompts.render(template_id, &[("claim", &claim.text), ("reference", &reference.text)])?;
    let params = GenerationParams {
        model_id: model_id.to_string(),
        temperature: JUDGMENT_TEMPERATURE,
        prompt_template_id: template_id.to_string(),
        sample_index: 0,
    };
    let request = ChatRequest::new(prompt, params, Purpose::Classification).for_claim(&claim.id);
    let parsed = ask_until_parsed(request, attempts, backend, grammar::parse_category)?;
    let (category, reason) = parsed.value;
    Ok(ClassificationResult { claim_id: claim.id.clone(), category, reason, raw_output: parsed.raw })
}

/// A reference is hallucinatory when the classification disagrees with the gold verdict.
pub fn label_hallucination(result: &ClassificationResult, gold: BinaryVerdict) -> bool {
    (result.category == Category::T) != (gold == BinaryVerdict::Factual)
}

/// All hallucinatory entries plus an equal-size seeded uniform subsample of
/// factual ones; hallucinatory first, each group in input order.
///
/// With `allow_unbalanced`, a shortage of factual entries keeps all of them
/// instead of failing. `stats` of the result is left at its default.
pub fn balance(
    entries: Vec<DatasetEntry>,
    seed: u64,
    allow_unbalanced: bool,
) -> Result<BalancedDataset, PipelineError> {
    let (hallucinatory, factual): (Vec<_>, Vec<_>) = entries.into_iter().partition(|e| e.is_hallucination);
    let needed = hallucinatory.len();
    let chosen: Vec<DatasetEntry> = if factual.len() < needed {
        if !allow_unbalanced {
            return Err(PipelineError::InsufficientFactual { needed, available: factual.len() });
        }
        factual
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = rand::seq::index::sample(&mut rng, factual.len(), needed).into_vec();
        picked.sort_unstable();
        let mut factual: Vec<Option<DatasetEntry>> = factual.into_iter().map(Some).collect();
        picked.into_iter().map(|i| factual[i].take().expect("indices are distinct")).collect()
    };
    let mut out = hallucinatory;
    out.extend(chosen);
    Ok(BalancedDataset { entries: out, seed, stats: GenerationStats::default() })
}

/// `hits / total` as a percentage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Percent {
    pub hits: u64,
    pub total: u64,
}

impl Percent {
    pub fn value(&self) -> f64 {
        100.0 * self.hits as f64 / self.total as f64
    }

    /// The percentage in units of `10^-decimals`, ties rounded to even, computed exactly.
    pub fn scaled(&self, decimals: u32) -> u64 {
        let scaled = 100u128 * 10u128.pow(decimals) * self.hits as u128;
        let total = self.total as u128;
        let (q, r) = (scaled / total, scaled % total);
        let up = match (2 * r).cmp(&total) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Equal => q % 2 == 1,
            std::cmp::Ordering::Less => false,
        };
        (q + up as u128) as u64
    }

    pub fn hundredths(&self) -> u64 {
        self.scaled(2)
    }

    /// Two-decimal value as printed.
    pub fn rounded(&self) -> f64 {
        self.hundredths() as f64 / 100.0
    }

    /// Fixed-point text with `decimals` digits after the point.
    pub fn format(&self, decimals: u32) -> String {
        let v = self.scaled(decimals);
        if decimals == 0 {
            return v.to_string();
        }
        let unit = 10u64.pow(decimals);
        format!("{}.{:0width$}", v / unit, v % unit, width = decimals as usize)
    }
}

impl fmt::Display for Percent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.format(2))
    }
}

pub fn hallucination_rate(stats: &GenerationStats) -> Result<Percent, PipelineError> {
    if stats.total_claims == 0 {
        return Err(PipelineError::DivisionByZero);
    }
    Ok(Percent { hits: stats.hallucination_count, total: stats.total_claims })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoHallConfig {
    pub model_id: String,
    pub temperature: f64,
    pub seed: u64,
    pub generation_template: String,
    pub classification_template: String,
    /// Asks per classification before a reply is declared unparseable.
    pub parse_attempts: u32,
    pub allow_unbalanced: bool,
    /// Abort when more than this fraction of claims fail.
    pub max_failure_fraction: f64,
    pub concurrency: usize,
    /// Confirm pattern-accepted references with an extra yes/no model call.
    pub concrete_second_pass: bool,
}

impl AutoHallConfig {
    pub fn new(model_id: impl Into<String>, temperature: f64, seed: u64) -> Self {
        AutoHallConfig {
            model_id: model_id.into(),
            temperature,
            seed,
            generation_template: prompts::GENERATION.to_string(),
            classification_template: prompts::CLASSIFY_P0.to_string(),
            parse_attempts: 3,
            allow_unbalanced: false,
            max_failure_fraction: 0.5,
            concurrency: 4,
            concrete_second_pass: false,
        }
    }
}

/// Classification stage record, one per concrete reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationRecord {
    pub claim_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub raw_output: String,
    pub parsed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub claim_id: String,
    pub gold: BinaryVerdict,
    pub category: Category,
    pub is_hallucination: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub claim_id: String,
    pub stage: String,
    pub message: String,
}

/// Everything a dataset-generation run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoHallRun {
    pub dataset: BalancedDataset,
    pub references: Vec<Reference>,
    pub classifications: Vec<ClassificationRecord>,
    pub labels: Vec<LabelRecord>,
    pub failures: Vec<FailureRecord>,
}

enum ClaimOutcome {
    Refusal(Reference),
    Classified(Reference, ClassificationResult),
    Unparseable(Reference, String),
    Failed { reference: Option<Reference>, stage: &'static str, message: String },
}

fn process_claim(
    claim: &ClaimRecord,
    config: &AutoHallConfig,
    prompts: &PromptRegistry,
    refusals: &RefusalFilter,
    backend: &dyn ChatBackend,
) -> Result<ClaimOutcome, PipelineError> {
    let params = GenerationParams {
        model_id: config.model_id.clone(),
        temperature: config.temperature,
        prompt_template_id: config.generation_template.clone(),
        sample_index: 0,
    };
    let mut reference = match generate_reference(claim, &params, prompts, refusals, backend) {
        Ok(r) => r,
        Err(PipelineError::Backend(e)) => {
            return Ok(ClaimOutcome::Failed { reference: None, stage: "generation", message: e.to_string() })
        }
        Err(e) => return Err(e),
    };
    if reference.is_concrete() && config.concrete_second_pass {
        match confirm_concrete(&reference, prompts, backend) {
            Ok(true) => {}
            Ok(false) => reference.validity = Validity::Refusal,
            Err(PipelineError::Backend(e)) => {
                return Ok(ClaimOutcome::Failed {
                    reference: Some(reference),
                    stage: "concrete-check",
                    message: e.to_string(),
                })
            }
            Err(e) => return Err(e),
        }
    }
    if !reference.is_concrete() {
        return Ok(ClaimOutcome::Refusal(reference));
    }
    match classify_claim(
        claim,
        &reference,
        &config.classification_template,
        &config.model_id,
        config.parse_attempts,
        prompts,
        backend,
    ) {
        Ok(result) => Ok(ClaimOutcome::Classified(reference, result)),
        Err(PipelineError::Unparseable { raw }) => Ok(ClaimOutcome::Unparseable(reference, raw)),
        Err(PipelineError::Backend(e)) => {
            Ok(ClaimOutcome::Failed { reference: Some(reference), stage: "classification", message: e.to_string() })
        }
        Err(e) => Err(e),
    }
}

/// Run generation, refusal filtering, classification, labeling and balancing over `corpus`.
pub fn run_autohall(
    corpus: &[ClaimRecord],
    config: &AutoHallConfig,
    prompts: &PromptRegistry,
    refusals: &RefusalFilter,
    backend: &dyn ChatBackend,
) -> Result<AutoHallRun, PipelineError> {
    if corpus.is_empty() {
        return Err(PipelineError::EmptyCorpus);
    }
    let outcomes =
        parallel_map(corpus, config.concurrency, |_, claim| process_claim(claim, config, prompts, refusals, backend));

    let mut stats = GenerationStats { total_claims: corpus.len() as u64, ..Default::default() };
    let mut references = Vec::new();
    let mut classifications = Vec::new();
    let mut labels = Vec::new();
    let mut failures = Vec::new();
    let mut entries = Vec::new();

    for (claim, outcome) in corpus.iter().zip(outcomes) {
        match outcome? {
            ClaimOutcome::Refusal(reference) => {
                stats.invalid_references += 1;
                references.push(reference);
            }
            ClaimOutcome::Classified(reference, result) => {
                stats.classified += 1;
                let is_hallucination = label_hallucination(&result, claim.gold);
                stats.hallucination_count += is_hallucination as u64;
                classifications.push(ClassificationRecord {
                    claim_id: claim.id.clone(),
                    category: Some(result.category),
                    reason: result.reason.clone(),
                    raw_output: result.raw_output.clone(),
                    parsed: true,
                });
                labels.push(LabelRecord {
                    claim_id: claim.id.clone(),
                    gold: claim.gold,
                    category: result.category,
                    is_hallucination,
                });
                references.push(reference.clone());
                entries.push(DatasetEntry { claim: claim.clone(), reference, is_hallucination });
            }
            ClaimOutcome::Unparseable(reference, raw) => {
                stats.unparseable += 1;
                classifications.push(ClassificationRecord {
                    claim_id: claim.id.clone(),
                    category: None,
                    reason: None,
                    raw_output: raw,
                    parsed: false,
                });
                references.push(reference);
            }
            ClaimOutcome::Failed { reference, stage, message } => {
                stats.transport_failed += 1;
                references.extend(reference);
                failures.push(FailureRecord { claim_id: claim.id.clone(), stage: stage.to_string(), message });
            }
        }
    }

    let failed = (stats.unparseable + stats.transport_failed) as usize;
    if failed as f64 > config.max_failure_fraction * corpus.len() as f64 {
        return Err(PipelineError::TooManyFailures {
            failed,
            total: corpus.len(),
            allowed: config.max_failure_fraction,
        });
    }

    stats.hallucination_rate = hallucination_rate(&stats)?.rounded();
    if stats.classified > 0 {
        stats.valid_hallucination_rate = Percent { hits: stats.hallucination_count, total: stats.classified }.rounded();
    }
    debug_assert!(stats.accounting_holds());

    let mut dataset = balance(entries, config.seed, config.allow_unbalanced)?;
    dataset.stats = stats;

    references.sort_by(|a, b| a.claim_id.cmp(&b.claim_id));
    classifications.sort_by(|a, b| a.claim_id.cmp(&b.claim_id));
    labels.sort_by(|a, b| a.claim_id.cmp(&b.claim_id));
    failures.sort_by(|a, b| a.claim_id.cmp(&b.claim_id));

    Ok(AutoHallRun { dataset, references, classifications, labels, failures })
}

/// Snapshot identifying the inputs of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    pub corpus_checksum: String,
    pub template_checksums: BTreeMap<String, String>,
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<GenerationStats>,
}

impl RunManifest {
    pub fn new<C: Serialize>(
        command: &str,
        seed: u64,
        corpus: &[ClaimRecord],
        prompts: &PromptRegistry,
        template_ids: &[&str],
        config: &C,
    ) -> Self {
        let checksums = prompts.checksums();
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            corpus_checksum: corpus_checksum(corpus),
            template_checksums: template_ids
                .iter()
                .filter_map(|id| checksums.get(*id).map(|c| (id.to_string(), c.clone())))
                .collect(),
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
            stats: None,
        }
    }
}

/// SHA-256 over the normalized record lines of a corpus.
pub fn corpus_checksum(corpus: &[ClaimRecord]) -> String {
    let mut h = Sha256::new();
    for record in corpus {
        let line = serde_json::to_string(&NormalizedRecord::from(record)).expect("plain data serializes");
        h.update(line.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Write every artifact of a run into `dir`.
pub fn persist_run(run: &AutoHallRun, manifest: &RunManifest, dir: &Path) -> Result<(), PipelineError> {
    records::write_records(&dir.join(REFERENCES_FILE), &run.references)?;
    records::write_records(&dir.join(CLASSIFICATIONS_FILE), &run.classifications)?;
    records::write_records(&dir.join(LABELS_FILE), &run.labels)?;
    records::write_records(&dir.join(FAILURES_FILE), &run.failures)?;
    records::write_records(&dir.join(DATASET_FILE), &run.dataset.entries)?;
    let mut manifest = manifest.clone();
    manifest.stats = Some(run.dataset.stats.clone());
    let json = serde_json::to_string_pretty(&manifest).map_err(RecordError::from)? + "\n";
    records::write_atomic(&dir.join(MANIFEST_FILE), json.as_bytes())?;
    Ok(())
}

/// Read a persisted dataset and, when present next to it, the run's stats.
pub fn load_dataset(path: &Path) -> Result<BalancedDataset, PipelineError> {
    let entries: Vec<DatasetEntry> = records::read_records(path)?;
    let manifest = path.parent().map(|d| d.join(MANIFEST_FILE)).and_then(|m| std::fs::read_to_string(m).ok());
    let manifest: Option<RunManifest> = manifest.and_then(|m| serde_json::from_str(&m).ok());
    let (seed, stats) = manifest.map(|m| (m.seed, m.stats.unwrap_or_default())).unwrap_or_default();
    Ok(BalancedDataset { entries, seed, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ScriptedBackend;
    use crate::types::DatasetKind;

    fn claim(id: &str, gold: BinaryVerdict) -> ClaimRecord {
        ClaimRecord {
            id: id.into(),
            text: format!("claim {id}"),
            gold,
            raw_label: if gold == BinaryVerdict::Factual { "supports" } else { "refutes" }.into(),
            dataset: DatasetKind::ClimateFever,
            evidence: None,
            topic: None,
        }
    }

    fn params() -> GenerationParams {
        GenerationParams {
            model_id: "m".into(),
            temperature: 0.1,
            prompt_template_id: prompts::GENERATION.into(),
            sample_index: 0,
        }
    }

    fn script(lines: &[&str]) -> ScriptedBackend {
        ScriptedBackend::parse(&lines.join("\n")).unwrap()
    }

    #[test]
    fn concrete_detection() {
        assert!(is_concrete(
            "According to an article published by Caller Times on July 17, 2020, Nueces County in Texas reported a total of 85 positive COVID-19 cases."
        ));
        assert!(!is_concrete(""));
        assert!(!is_concrete("   \n "));
        assert!(!is_concrete(
            "Unfortunately, as of my knowledge cutoff in September 2021, I couldn't find any credible reference or evidence to support this specific claim."
        ));
        assert!(!is_concrete(
            "I can not provide a specific reference for the claim you mentioned, but here are some thoughts."
        ));
        assert!(!is_concrete("I\u{2019}m sorry, but I can\u{2019}t assist with that. As of my last update in October 2021, I am not aware."));
    }

    #[test]
    fn sole_paragraph_patterns_allow_followup_content() {
        let short = "As of my knowledge cutoff, the study was not widely covered.";
        assert!(!is_concrete(short));
        let long =
            format!("{short}\n\nThe Guardian reported on 22 May 2017 that the rider died after a cycling accident.");
        assert!(is_concrete(&long));
    }

    #[test]
    fn custom_patterns() {
        let f = RefusalFilter::parse("# c\n^nope\nbanana\n");
        assert!(!f.is_concrete("Nope, nothing."));
        assert!(f.is_concrete("I say nope."));
        assert!(!f.is_concrete("a BANANA split"));
    }

    #[test]
    fn generate_reference_sets_validity() {
        let backend = script(&[
            r#"{"match":{"claim_id":"a"},"reply":"The Leopard is a novel published in 1958 by Giuseppe Tomasi di Lampedusa."}"#,
            r#"{"match":{"claim_id":"b"},"reply":"I can not provide a specific reference for the claim you mentioned..."}"#,
            r#"{"match":{"claim_id":"c"},"reply":"I'm sorry, but I can't assist with that. As of my last update..."}"#,
        ]);
        let reg = PromptRegistry::default();
        let filter = RefusalFilter::default();
        let gen =
            |id| generate_reference(&claim(id, BinaryVerdict::Factual), &params(), &reg, &filter, &backend).unwrap();
        assert_eq!(gen("a").validity, Validity::Concrete);
        assert_eq!(gen("b").validity, Validity::Refusal);
        assert_eq!(gen("c").validity, Validity::Refusal);
        assert_eq!(gen("a").claim_id, "a");
    }

    fn concrete_ref(id: &str) -> Reference {
        Reference {
            claim_id: id.into(),
            text: "A report says so.".into(),
            validity: Validity::Concrete,
            params: params(),
        }
    }

    #[test]
    fn classification_parses_and_retries() {
        let backend = script(&[
            r#"{"match":{"claim_id":"a"},"reply":"Category: True"}"#,
            r#"{"match":{"claim_id":"b"},"reply":"Answer: False. Reasons: the reference states 93 percent."}"#,
            r#"{"match":{"claim_id":"c"},"reply":"It depends."}"#,
            r#"{"match":{"claim_id":"d","attempt":0},"reply":"Hmm."}"#,
            r#"{"match":{"claim_id":"d","attempt":1},"reply":"Category: F"}"#,
        ]);
        let reg = PromptRegistry::default();
        let classify = |id| {
            classify_claim(
                &claim(id, BinaryVerdict::Factual),
                &concrete_ref(id),
                prompts::CLASSIFY_P0,
                "m",
                3,
                &reg,
                &backend,
            )
        };
        let a = classify("a").unwrap();
        assert_eq!((a.category, a.reason.as_deref()), (Category::T, None));
        let b = classify("b").unwrap();
        assert_eq!((b.category, b.reason.as_deref()), (Category::F, Some("the reference states 93 percent.")));
        assert!(matches!(classify("c"), Err(PipelineError::Unparseable { raw }) if raw == "It depends."));
        assert_eq!(classify("d").unwrap().category, Category::F);
    }

    #[test]
    fn classification_requires_concrete_reference() {
        let mut r = concrete_ref("a");
        r.validity = Validity::Refusal;
        let err = classify_claim(
            &claim("a", BinaryVerdict::Factual),
            &r,
            prompts::CLASSIFY_P0,
            "m",
            1,
            &PromptRegistry::default(),
            &ScriptedBackend::default(),
        )
        .unwrap_err();
        assert!(matches!(err, PipelineError::NotConcrete(_)));
    }

    #[test]
    fn label_rule() {
        let result =
            |category| ClassificationResult { claim_id: "x".into(), category, reason: None, raw_output: String::new() };
        assert!(!label_hallucination(&result(Category::T), BinaryVerdict::Factual));
        assert!(label_hallucination(&result(Category::F), BinaryVerdict::Factual));
        assert!(label_hallucination(&result(Category::T), BinaryVerdict::NonFactual));
        assert!(!label_hallucination(&result(Category::F), BinaryVerdict::NonFactual));
    }

    fn entries(halluc: usize, factual: usize) -> Vec<DatasetEntry> {
        (0..halluc + factual)
            .map(|i| DatasetEntry {
                claim: claim(&format!("c{i:04}"), BinaryVerdict::Factual),
                reference: concrete_ref(&format!("c{i:04}")),
                is_hallucination: i % (halluc + factual) < halluc,
            })
            .collect()
    }

    #[test]
    fn balance_counts() {
        let ds = balance(entries(181, 726), 7, false).unwrap();
        assert_eq!(ds.entries.len(), 362);
        assert_eq!(ds.hallucinatory().count(), 181);
        assert!(ds.is_balanced());
        assert!(ds.entries[..181].iter().all(|e| e.is_hallucination));
        let ids: Vec<_> = ds.entries[181..].iter().map(|e| e.claim.id.clone()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted, "factual subsample keeps input order");

        assert!(balance(entries(0, 10), 1, false).unwrap().entries.is_empty());
    }

    #[test]
    fn balance_is_seeded() {
        let a = balance(entries(20, 80), 42, false).unwrap();
        let b = balance(entries(20, 80), 42, false).unwrap();
        assert_eq!(records::to_lines(&a.entries).unwrap(), records::to_lines(&b.entries).unwrap());
        let c = balance(entries(20, 80), 43, false).unwrap();
        assert_ne!(a.entries, c.entries);
    }

    #[test]
    fn balance_shortage() {
        assert!(matches!(
            balance(entries(5, 3), 0, false),
            Err(PipelineError::InsufficientFactual { needed: 5, available: 3 })
        ));
        let ds = balance(entries(5, 3), 0, true).unwrap();
        assert_eq!(ds.entries.len(), 8);
        assert!(!ds.is_balanced());
    }

    #[test]
    fn rate_rounding() {
        let rate = |h, n| {
            hallucination_rate(&GenerationStats { total_claims: n, hallucination_count: h, ..Default::default() })
                .unwrap()
                .to_string()
        };
        assert_eq!(rate(181, 907), "19.96");
        assert_eq!(rate(0, 907), "0.00");
        assert_eq!(rate(250, 928), "26.94");
        assert_eq!(rate(261, 928), "28.12");
        assert_eq!(rate(1, 1), "100.00");
        assert!(matches!(hallucination_rate(&GenerationStats::default()), Err(PipelineError::DivisionByZero)));
    }

    #[test]
    fn single_refusal_corpus() {
        let backend =
            script(&[r#"{"match":{"purpose":"generation"},"reply":"I cannot provide a reference for this claim."}"#]);
        let run = run_autohall(
            &[claim("a", BinaryVerdict::Factual)],
            &AutoHallConfig::new("m", 0.1, 0),
            &PromptRegistry::default(),
            &RefusalFilter::default(),
            &backend,
        )
        .unwrap();
        assert!(run.dataset.entries.is_empty());
        assert_eq!(run.dataset.stats.invalid_references, 1);
        assert_eq!(run.dataset.stats.total_claims, 1);
        assert!(run.dataset.stats.accounting_holds());
    }

    #[test]
    fn failures_above_threshold_abort() {
        let backend = script(&[r#"{"match":{"claim_id":"a"},"reply":"A concrete report."}"#]);
        let corpus = [claim("a", BinaryVerdict::Factual), claim("b", BinaryVerdict::Factual)];
        let err = run_autohall(
            &corpus,
            &AutoHallConfig::new("m", 0.1, 0),
            &PromptRegistry::default(),
            &RefusalFilter::default(),
            &backend,
        )
        .unwrap_err();
        assert!(matches!(err, PipelineError::TooManyFailures { failed: 2, total: 2, .. }));
        assert!(matches!(
            run_autohall(
                &[],
                &AutoHallConfig::new("m", 0.1, 0),
                &PromptRegistry::default(),
                &RefusalFilter::default(),
                &backend
            ),
            Err(PipelineError::EmptyCorpus)
        ));
    }

    #[test]
    fn second_pass_can_reject() {
        let backend = script(&[
            r#"{"match":{"purpose":"generation"},"reply":"Some vague words about the topic."}"#,
            r#"{"match":{"template_id":"concrete.v1"},"reply":"No."}"#,
        ]);
        let mut config = AutoHallConfig::new("m", 0.1, 0);
        config.concrete_second_pass = true;
        let run = run_autohall(
            &[claim("a", BinaryVerdict::Factual)],
            &config,
            &PromptRegistry::default(),
            &RefusalFilter::default(),
            &backend,
        )
        .unwrap();
        assert_eq!(run.dataset.stats.invalid_references, 1);
    }
}

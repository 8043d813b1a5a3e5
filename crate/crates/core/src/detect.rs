//! Hallucination detection.
//!
//! The main detector samples K alternative references for a claim and asks
//! the model, pair by pair, whether the original reference and each
//! alternative contradict each other. The original is predicted
//! hallucinatory when at least `threshold` pairs conflict (default 1, i.e.
//! any conflict). Alternatives are never compared with each other.
//!
//! Baselines: zero-shot and few-shot chain-of-thought self-checks, and a
//! unigram consistency score over the sampled references.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, ChatBackend, ChatRequest, Purpose};
use crate::exec::parallel_map;
use crate::grammar;
use crate::pipeline::{ask_until_parsed, PipelineError, RefusalFilter};
use crate::prompts::{self, PromptError, PromptRegistry};
use crate::types::{
    ClaimRecord, ContradictionVerdict, DatasetEntry, DetectionOutcome, GenerationParams, Reference, Validity,
    DEFAULT_K, JUDGMENT_TEMPERATURE,
};

const DEFAULT_EXEMPLARS: &str = include_str!("../assets/fewshot_exemplars.jsonl");

#[derive(Debug, thiserror::Error)]
pub enum DetectError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("unparseable reply: {raw:?}")]
    Unparseable { raw: String },
    #[error("every contradiction check for `{0}` is missing")]
    AllVerdictsMissing(String),
    #[error("text has no tokens")]
    EmptyText,
    #[error("reference for `{0}` is not concrete")]
    NotConcrete(String),
    #[error("few-shot exemplars: {0}")]
    Exemplars(String),
    #[error("{0}")]
    Config(String),
}

impl From<PipelineError> for DetectError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Prompt(e) => DetectError::Prompt(e),
            PipelineError::Backend(e) => DetectError::Backend(e),
            PipelineError::Unparseable { raw } => DetectError::Unparseable { raw },
            PipelineError::NotConcrete(id) => DetectError::NotConcrete(id),
            other => DetectError::Config(other.to_string()),
        }
    }
}

/// Detection method names as used on the command line and in output files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ours")]
    SelfContradiction,
    #[serde(rename = "zero-selfck")]
    ZeroShotSelfCheck,
    #[serde(rename = "few-selfck")]
    FewShotSelfCheck,
    #[serde(rename = "selfck-1gm")]
    Unigram,
}

impl Method {
    pub const ALL: [Method; 4] =
        [Method::SelfContradiction, Method::ZeroShotSelfCheck, Method::FewShotSelfCheck, Method::Unigram];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::SelfContradiction => "ours",
            Method::ZeroShotSelfCheck => "zero-selfck",
            Method::FewShotSelfCheck => "few-selfck",
            Method::Unigram => "selfck-1gm",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown method `{s}` (expected one of ours, zero-selfck, few-selfck, selfck-1gm)"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    #[default]
    Mean,
    Max,
}

impl FromStr for Aggregate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mean" => Ok(Aggregate::Mean),
            "max" => Ok(Aggregate::Max),
            other => Err(format!("unknown aggregate `{other}` (expected mean or max)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnigramOptions {
    /// Count the original reference's own tokens in the frequency table.
    pub include_original: bool,
    pub aggregate: Aggregate,
}

impl Default for UnigramOptions {
    fn default() -> Self {
        UnigramOptions { include_original: true, aggregate: Aggregate::Mean }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    pub model_id: String,
    /// Temperature for sampling alternatives.
    pub temperature: f64,
    pub k: usize,
    pub threshold: usize,
    pub parse_attempts: u32,
    pub concurrency: usize,
    pub unigram: UnigramOptions,
    /// Fixed unigram decision threshold; calibrated on the labels when absent.
    pub score_threshold: Option<f64>,
}

impl DetectConfig {
    pub fn new(model_id: impl Into<String>, temperature: f64) -> Self {
        DetectConfig {
            model_id: model_id.into(),
            temperature,
            k: DEFAULT_K,
            threshold: 1,
            parse_attempts: 3,
            concurrency: 4,
            unigram: UnigramOptions::default(),
            score_threshold: None,
        }
    }

    pub fn validate(&self) -> Result<(), DetectError> {
        if self.k == 0 {
            return Err(DetectError::Config("K must be at least 1".into()));
        }
        if self.threshold == 0 {
            return Err(DetectError::Config("threshold must be at least 1".into()));
        }
        Ok(())
    }

    fn judgment_params(&self, template: &str, sample_index: u32) -> GenerationParams {
        GenerationParams {
            model_id: self.model_id.clone(),
            temperature: JUDGMENT_TEMPERATURE,
            prompt_template_id: template.to_string(),
            sample_index,
        }
    }
}

/// Shared call context for the detector.
#[derive(Clone, Copy)]
pub struct Detector<'a> {
    pub config: &'a DetectConfig,
    pub prompts: &'a PromptRegistry,
    pub refusals: &'a RefusalFilter,
    pub backend: &'a dyn ChatBackend,
}

/// One sampled alternative, or `None` if it could not be produced.
pub struct Sample {
    pub reference: Option<Reference>,
    pub key: String,
}

impl Detector<'_> {
    /// K independent alternatives, the k-th using sampling variant k at the run temperature.
    pub fn sample_alternatives(&self, claim: &ClaimRecord, k: usize) -> Result<Vec<Sample>, DetectError> {
        let indices: Vec<usize> = (1..=k).collect();
        parallel_map(&indices, self.config.concurrency, |_, &i| {
            let template = prompts::sampling_variant(i);
            let params = GenerationParams {
                model_id: self.config.model_id.clone(),
                temperature: self.config.temperature,
                prompt_template_id: template.to_string(),
                sample_index: i as u32,
            };
            let prompt = self.prompts.render(template, &[("claim", &claim.text)])?;
            let request = ChatRequest::new(prompt, params.clone(), Purpose::Sampling).for_claim(&claim.id);
            let key = request.key();
            let reference = match self.backend.complete(&request) {
                Ok(text) => {
                    let validity =
                        if self.refusals.is_concrete(&text) { Validity::Concrete } else { Validity::Refusal };
                    Some(Reference { claim_id: claim.id.clone(), text, validity, params })
                }
                Err(e) => {
                    log::warn!("sample {i} for {} missing: {e}", claim.id);
                    None
                }
            };
            Ok(Sample { reference, key })
        })
        .into_iter()
        .collect()
    }

    /// Judge whether `original` and `sample` contradict; `pair_index` is 1-based.
    pub fn check_contradiction(
        &self,
        claim: &ClaimRecord,
        original: &Reference,
        sample: &Reference,
        pair_index: usize,
    ) -> Result<(ContradictionVerdict, String), DetectError> {
        if !original.is_concrete() {
            return Err(DetectError::NotConcrete(original.claim_id.clone()));
        }
        if !sample.is_concrete() {
            return Err(DetectError::NotConcrete(format!("{} sample {pair_index}", sample.claim_id)));
        }
        let prompt = self.prompts.render(
            prompts::CONTRADICTION,
            &[("claim", &claim.text), ("reference", &original.text), ("reference2", &sample.text)],
        )?;
        let params = self.config.judgment_params(prompts::CONTRADICTION, pair_index as u32);
        let request = ChatRequest::new(prompt, params, Purpose::Contradiction).for_claim(&claim.id);
        let parsed = ask_until_parsed(request, self.config.parse_attempts, self.backend, grammar::parse_contradiction)?;
        Ok((ContradictionVerdict { pair_index, contradicts: parsed.value, raw_output: parsed.raw }, parsed.key))
    }

    /// Sample K alternatives and check each against `original`.
    pub fn detect(&self, claim: &ClaimRecord, original: &Reference) -> Result<DetectionOutcome, DetectError> {
        self.config.validate()?;
        if !original.is_concrete() {
            return Err(DetectError::NotConcrete(original.claim_id.clone()));
        }
        let samples = self.sample_alternatives(claim, self.config.k)?;
        let checks = parallel_map(&samples, self.config.concurrency, |i, sample| {
            let Some(reference) = sample.reference.as_ref().filter(|r| r.is_concrete()) else {
                return Ok(None);
            };
            match self.check_contradiction(claim, original, reference, i + 1) {
                Ok(v) => Ok(Some(v)),
                Err(DetectError::Unparseable { raw }) => {
                    log::warn!("pair {} for {} unparseable: {raw:?}", i + 1, claim.id);
                    Ok(None)
                }
                Err(DetectError::Backend(e)) => {
                    log::warn!("pair {} for {} failed: {e}", i + 1, claim.id);
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        });

        let mut call_keys: Vec<String> = samples.iter().map(|s| s.key.clone()).collect();
        let mut verdicts = Vec::with_capacity(samples.len());
        for check in checks {
            let check: Option<(ContradictionVerdict, String)> = check?;
            verdicts.push(check.map(|(verdict, key)| {
                call_keys.push(key);
                verdict
            }));
        }
        if verdicts.iter().all(Option::is_none) {
            return Err(DetectError::AllVerdictsMissing(claim.id.clone()));
        }
        let flags: Vec<Option<bool>> = verdicts.iter().map(|v| v.as_ref().map(|v| v.contradicts)).collect();
        let (conflict_count, predicted_hallucination) = decide(&flags, self.config.threshold);
        Ok(DetectionOutcome {
            claim_id: claim.id.clone(),
            original: original.clone(),
            samples: samples.into_iter().map(|s| s.reference).collect(),
            verdicts,
            conflict_count,
            predicted_hallucination,
            threshold: self.config.threshold,
            call_keys,
        })
    }

    fn selfcheck(
        &self,
        template: &str,
        claim: &ClaimRecord,
        original: &Reference,
        exemplars: Option<&str>,
    ) -> Result<SelfCheckResult, DetectError> {
        let mut bindings = vec![("claim", claim.text.as_str()), ("reference", original.text.as_str())];
        if let Some(ex) = exemplars {
            bindings.push(("exemplars", ex));
        }
        let prompt = self.prompts.render(template, &bindings)?;
        let request =
            ChatRequest::new(prompt, self.config.judgment_params(template, 0), Purpose::Baseline).for_claim(&claim.id);
        let parsed = ask_until_parsed(request, self.config.parse_attempts, self.backend, grammar::parse_final_yes_no)?;
        Ok(SelfCheckResult { hallucination: parsed.value, raw_output: parsed.raw, call_key: parsed.key })
    }

    /// Zero-shot chain-of-thought self-check.
    pub fn zero_shot_selfcheck(
        &self,
        claim: &ClaimRecord,
        original: &Reference,
    ) -> Result<SelfCheckResult, DetectError> {
        self.selfcheck(prompts::ZERO_SHOT_SELFCHECK, claim, original, None)
    }

    /// Three-shot chain-of-thought self-check.
    pub fn few_shot_selfcheck(
        &self,
        claim: &ClaimRecord,
        original: &Reference,
        exemplars: &Exemplars,
    ) -> Result<SelfCheckResult, DetectError> {
        self.selfcheck(prompts::FEW_SHOT_SELFCHECK, claim, original, Some(&exemplars.render()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelfCheckResult {
    pub hallucination: bool,
    pub raw_output: String,
    pub call_key: String,
}

/// Conflict count and prediction for a verdict vector; missing slots count for nothing.
pub fn decide(verdicts: &[Option<bool>], threshold: usize) -> (usize, bool) {
    let conflicts = verdicts.iter().filter(|v| **v == Some(true)).count();
    (conflicts, conflicts >= threshold.max(1))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub claim: String,
    pub reference: String,
    pub hallucination: bool,
    pub rationale: String,
}

/// Exactly three in-context examples with both labels present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exemplars(Vec<Exemplar>);

impl Exemplars {
    pub fn new(items: Vec<Exemplar>) -> Result<Self, DetectError> {
        if items.len() != 3 {
            return Err(DetectError::Exemplars(format!("need exactly 3 exemplars, got {}", items.len())));
        }
        let positives = items.iter().filter(|e| e.hallucination).count();
        if positives == 0 || positives == items.len() {
            return Err(DetectError::Exemplars("exemplars must include both hallucinatory and factual cases".into()));
        }
        Ok(Exemplars(items))
    }

    pub fn parse(text: &str) -> Result<Self, DetectError> {
        let items = crate::records::parse_lines(text, Path::new("<exemplars>"))
            .map_err(|e| DetectError::Exemplars(e.to_string()))?;
        Self::new(items)
    }

    pub fn from_file(path: &Path) -> Result<Self, DetectError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| DetectError::Exemplars(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn items(&self) -> &[Exemplar] {
        &self.0
    }

    /// Text bound to the `{exemplars}` placeholder.
    pub fn render(&self) -> String {
        self.0
            .iter()
            .map(|e| {
                format!(
                    "Claim: {} Reference: {} Let's think step by step. {} Answer: {}",
                    e.claim,
                    e.reference,
                    e.rationale,
                    if e.hallucination { "Yes" } else { "No" }
                )
            })
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

impl Default for Exemplars {
    fn default() -> Self {
        Exemplars::parse(DEFAULT_EXEMPLARS).expect("shipped exemplars are valid")
    }
}

/// Mean (or max) negative log-probability of the original's tokens under an
/// add-one smoothed unigram model of the samples.
///
/// The vocabulary is every observed token plus one unknown bucket. With
/// `include_original` the original's tokens are counted too.
pub fn unigram_score<S: AsRef<str>>(
    original: &str,
    samples: &[S],
    options: UnigramOptions,
) -> Result<f64, DetectError> {
    let target = grammar::tokenize(original);
    if target.is_empty() {
        return Err(DetectError::EmptyText);
    }
    if samples.is_empty() {
        return Err(DetectError::Config("unigram score needs at least one sample".into()));
    }
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut total = 0u64;
    let corpus = samples.iter().map(|s| s.as_ref());
    let corpus: Vec<&str> =
        if options.include_original { corpus.chain(std::iter::once(original)).collect() } else { corpus.collect() };
    for text in corpus {
        for token in grammar::tokenize(text) {
            *counts.entry(token).or_default() += 1;
            total += 1;
        }
    }
    let vocab = counts.len() as f64 + 1.0;
    let denom = total as f64 + vocab;
    let surprisal = target.iter().map(|t| -(((counts.get(t).copied().unwrap_or(0) + 1) as f64) / denom).ln());
    Ok(match options.aggregate {
        Aggregate::Mean => surprisal.sum::<f64>() / target.len() as f64,
        Aggregate::Max => surprisal.fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Strictly-greater thresholding of a unigram score.
pub fn unigram_predict(score: f64, threshold: f64) -> bool {
    score > threshold
}

/// Threshold maximizing F1 over `(score, is_hallucination)` pairs.
///
/// Candidates are every observed score plus one value below the minimum (so
/// "everything positive" is reachable); ties go to the lower threshold.
pub fn calibrate_threshold(scored: &[(f64, bool)]) -> f64 {
    let mut candidates: Vec<f64> = scored.iter().map(|(s, _)| *s).filter(|s| s.is_finite()).collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let Some(&min) = candidates.first() else {
        return 0.0;
    };
    candidates.insert(0, min - 1.0);

    let f1_at = |t: f64| {
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for &(score, gold) in scored {
            match (unigram_predict(score, t), gold) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        if tp + fp + fn_ == 0 {
            1.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
        }
    };
    let mut best = (candidates[0], f1_at(candidates[0]));
    for &t in &candidates[1..] {
        let f = f1_at(t);
        if f > best.1 {
            best = (t, f);
        }
    }
    best.0
}

/// One line of a detection output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub claim_id: String,
    pub method: Method,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conflict_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effective_k: Option<usize>,
    /// One char per pair: `1` conflict, `0` consistent, `?` missing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict_bits: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_threshold: Option<f64>,
    pub predicted: bool,
    pub per_call_raw_refs: Vec<String>,
    /// Set when the entry could not be evaluated; such records carry no prediction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl DetectionRecord {
    fn failed(claim_id: &str, method: Method, k: usize, error: String) -> Self {
        DetectionRecord {
            claim_id: claim_id.to_string(),
            method,
            k,
            threshold: None,
            conflict_count: None,
            effective_k: None,
            verdict_bits: None,
            score: None,
            score_threshold: None,
            predicted: false,
            per_call_raw_refs: Vec::new(),
            error: Some(error),
        }
    }

    pub fn from_outcome(outcome: &DetectionOutcome) -> Self {
        DetectionRecord {
            claim_id: outcome.claim_id.clone(),
            method: Method::SelfContradiction,
            k: outcome.k(),
            threshold: Some(outcome.threshold),
            conflict_count: Some(outcome.conflict_count),
            effective_k: Some(outcome.effective_k()),
            verdict_bits: Some(encode_verdict_bits(&outcome.verdict_flags())),
            score: None,
            score_threshold: None,
            predicted: outcome.predicted_hallucination,
            per_call_raw_refs: outcome.call_keys.clone(),
            error: None,
        }
    }

    /// Verdict slots decoded from `verdict_bits`.
    pub fn verdict_flags(&self) -> Option<Vec<Option<bool>>> {
        self.verdict_bits.as_deref().map(decode_verdict_bits)
    }
}

pub fn encode_verdict_bits(flags: &[Option<bool>]) -> String {
    flags
        .iter()
        .map(|f| match f {
            Some(true) => '1',
            Some(false) => '0',
            None => '?',
        })
        .collect()
}

pub fn decode_verdict_bits(bits: &str) -> Vec<Option<bool>> {
    bits.chars()
        .map(|c| match c {
            '1' => Some(true),
            '0' => Some(false),
            _ => None,
        })
        .collect()
}

/// Run `method` over dataset entries, one record per entry in input order.
pub fn run_detection(
    entries: &[DatasetEntry],
    method: Method,
    detector: &Detector<'_>,
    exemplars: &Exemplars,
) -> Result<Vec<DetectionRecord>, DetectError> {
    detector.config.validate()?;
    let config = detector.config;
    let results = parallel_map(entries, config.concurrency, |_, entry| -> Result<DetectionRecord, DetectError> {
        let claim = &entry.claim;
        let original = &entry.reference;
        let soft = |e: DetectError| -> Result<DetectionRecord, DetectError> {
            match e {
                DetectError::Prompt(_) | DetectError::Config(_) | DetectError::Exemplars(_) => Err(e),
                other => Ok(DetectionRecord::failed(&claim.id, method, config.k, other.to_string())),
            }
        };
        match method {
            Method::SelfContradiction => {
                detector.detect(claim, original).map(|o| DetectionRecord::from_outcome(&o)).or_else(soft)
            }
            Method::ZeroShotSelfCheck | Method::FewShotSelfCheck => {
                let result = if method == Method::ZeroShotSelfCheck {
                    detector.zero_shot_selfcheck(claim, original)
                } else {
                    detector.few_shot_selfcheck(claim, original, exemplars)
                };
                result
                    .map(|r| DetectionRecord {
                        claim_id: claim.id.clone(),
                        method,
                        k: 0,
                        threshold: None,
                        conflict_count: None,
                        effective_k: None,
                        verdict_bits: None,
                        score: None,
                        score_threshold: None,
                        predicted: r.hallucination,
                        per_call_raw_refs: vec![r.call_key],
                        error: None,
                    })
                    .or_else(soft)
            }
            Method::Unigram => {
                let samples = detector.sample_alternatives(claim, config.k)?;
                let texts: Vec<&str> = samples
                    .iter()
                    .filter_map(|s| s.reference.as_ref().filter(|r| r.is_concrete()))
                    .map(|r| r.text.as_str())
                    .collect();
                let keys = samples.iter().map(|s| s.key.clone()).collect();
                if texts.is_empty() {
                    return soft(DetectError::Config("no usable samples".into()));
                }
                unigram_score(&original.text, &texts, config.unigram)
                    .map(|score| DetectionRecord {
                        claim_id: claim.id.clone(),
                        method,
                        k: config.k,
                        threshold: None,
                        conflict_count: None,
                        effective_k: Some(texts.len()),
                        verdict_bits: None,
                        score: Some(score),
                        score_threshold: None,
                        predicted: false,
                        per_call_raw_refs: keys,
                        error: None,
                    })
                    .or_else(soft)
            }
        }
    });
    let mut records: Vec<DetectionRecord> = results.into_iter().collect::<Result<_, _>>()?;

    if method == Method::Unigram {
        let threshold = config.score_threshold.unwrap_or_else(|| {
            let scored: Vec<(f64, bool)> =
                records.iter().zip(entries).filter_map(|(r, e)| r.score.map(|s| (s, e.is_hallucination))).collect();
            calibrate_threshold(&scored)
        });
        for r in records.iter_mut().filter(|r| r.error.is_none()) {
            r.score_threshold = Some(threshold);
            r.predicted = r.score.is_some_and(|s| unigram_predict(s, threshold));
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ScriptedBackend;
    use crate::types::{BinaryVerdict, DatasetKind};

    fn claim() -> ClaimRecord {
        ClaimRecord {
            id: "c1".into(),
            text: "The Leopard was published in 1958.".into(),
            gold: BinaryVerdict::Factual,
            raw_label: "supports".into(),
            dataset: DatasetKind::Generic,
            evidence: None,
            topic: None,
        }
    }

    fn original() -> Reference {
        Reference {
            claim_id: "c1".into(),
            text: "The novel appeared in 1958.".into(),
            validity: Validity::Concrete,
            params: GenerationParams {
                model_id: "m".into(),
                temperature: 0.1,
                prompt_template_id: prompts::GENERATION.into(),
                sample_index: 0,
            },
        }
    }

    fn run<T>(script: &str, k: usize, threshold: usize, f: impl FnOnce(&Detector<'_>) -> T) -> T {
        let backend = ScriptedBackend::parse(script).unwrap();
        let mut config = DetectConfig::new("m", 0.1);
        config.k = k;
        config.threshold = threshold;
        let prompts = PromptRegistry::default();
        let refusals = RefusalFilter::default();
        let detector = Detector { config: &config, prompts: &prompts, refusals: &refusals, backend: &backend };
        f(&detector)
    }

    fn sample_script(k: usize) -> String {
        (1..=k)
            .map(|i| {
                format!(
                    r#"{{"match":{{"purpose":"sampling","sample_index":{i}}},"reply":"Sampled reference number {i}."}}"#
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    #[test]
    fn samples_cycle_variants_and_keep_order() {
        let script = sample_script(13);
        let samples = run(&script, 13, 1, |d| d.sample_alternatives(&claim(), 13).unwrap());
        assert_eq!(samples.len(), 13);
        let templates: Vec<String> =
            samples.iter().map(|s| s.reference.as_ref().unwrap().params.prompt_template_id.clone()).collect();
        let expected: Vec<String> =
            [1, 2, 3, 4, 5, 6, 7, 1, 2, 3, 4, 5, 6].iter().map(|v| format!("sample.v{v}")).collect();
        assert_eq!(templates, expected);
        for (i, s) in samples.iter().enumerate() {
            let r = s.reference.as_ref().unwrap();
            assert_eq!(r.text, format!("Sampled reference number {}.", i + 1));
            assert_eq!(r.params.sample_index as usize, i + 1);
        }
        let one = run(&sample_script(1), 1, 1, |d| d.sample_alternatives(&claim(), 1).unwrap());
        assert_eq!(one[0].reference.as_ref().unwrap().params.prompt_template_id, "sample.v1");
    }

    #[test]
    fn contradiction_verdicts() {
        let script = r#"{"match":{"prompt_contains":"Reference 2: A"},"reply":"Yes, the two references contradict each other."}
{"match":{"prompt_contains":"Reference 2: B"},"reply":"No."}
{"match":{"prompt_contains":"Reference 2: C"},"reply":"Both references discuss the claim."}"#;
        let sample = |t: &str| Reference { text: t.into(), ..original() };
        run(script, 1, 1, |d| {
            assert!(d.check_contradiction(&claim(), &original(), &sample("A"), 1).unwrap().0.contradicts);
            assert!(!d.check_contradiction(&claim(), &original(), &sample("B"), 1).unwrap().0.contradicts);
            assert!(matches!(
                d.check_contradiction(&claim(), &original(), &sample("C"), 1),
                Err(DetectError::Unparseable { .. })
            ));
        });
    }

    fn detection_script(k: usize, conflicts: &[usize]) -> String {
        let mut lines = vec![sample_script(k)];
        for i in 1..=k {
            let reply = if conflicts.contains(&i) { "Yes" } else { "No" };
            lines.push(format!(r#"{{"match":{{"purpose":"contradiction","sample_index":{i}}},"reply":"{reply}"}}"#));
        }
        lines.join("\n")
    }

    #[test]
    fn existence_rule() {
        let none = run(&detection_script(13, &[]), 13, 1, |d| d.detect(&claim(), &original()).unwrap());
        assert_eq!((none.conflict_count, none.predicted_hallucination), (0, false));
        assert_eq!(none.effective_k(), 13);

        let one = run(&detection_script(13, &[2]), 13, 1, |d| d.detect(&claim(), &original()).unwrap());
        assert_eq!((one.conflict_count, one.predicted_hallucination), (1, true));
        assert_eq!(one.call_keys.len(), 26);

        let strict = run(&detection_script(13, &[2]), 13, 2, |d| d.detect(&claim(), &original()).unwrap());
        assert!(!strict.predicted_hallucination);
    }

    #[test]
    fn missing_pairs_shrink_effective_k() {
        // Samples 3 and 4: one refusal, one backend miss; pair 5 unparseable.
        let mut script = String::new();
        for i in 1..=5 {
            let line = match i {
                3 => r#"{"match":{"purpose":"sampling","sample_index":3},"reply":"I cannot provide a reference."}"#
                    .to_string(),
                4 => continue,
                _ => format!(r#"{{"match":{{"purpose":"sampling","sample_index":{i}}},"reply":"Sample {i}."}}"#),
            };
            script.push_str(&line);
            script.push('\n');
        }
        script.push_str(r#"{"match":{"purpose":"contradiction","sample_index":5},"reply":"Unclear."}"#);
        script.push('\n');
        script.push_str(r#"{"match":{"purpose":"contradiction","sample_index":2},"reply":"Yes"}"#);
        script.push('\n');
        script.push_str(r#"{"match":{"purpose":"contradiction"},"reply":"No"}"#);
        let outcome = run(&script, 5, 1, |d| d.detect(&claim(), &original()).unwrap());
        assert_eq!(outcome.verdict_flags(), vec![Some(false), Some(true), None, None, None]);
        assert_eq!(outcome.effective_k(), 2);
        assert_eq!(outcome.conflict_count, 1);
        assert_eq!(outcome.samples[2].as_ref().unwrap().validity, Validity::Refusal);
        assert!(outcome.samples[3].is_none());
        assert_eq!(encode_verdict_bits(&outcome.verdict_flags()), "01???");
    }

    #[test]
    fn all_missing_is_an_error() {
        let script = format!("{}\n{}", sample_script(2), r#"{"match":{"purpose":"contradiction"},"reply":"Hmm"}"#);
        let err = run(&script, 2, 1, |d| d.detect(&claim(), &original()).unwrap_err());
        assert!(matches!(err, DetectError::AllVerdictsMissing(id) if id == "c1"));
    }

    #[test]
    fn decide_matches_existence() {
        assert_eq!(decide(&[Some(false); 13], 1), (0, false));
        let mut v = vec![Some(false); 13];
        v[1] = Some(true);
        assert_eq!(decide(&v, 1), (1, true));
        assert_eq!(decide(&v, 2), (1, false));
        assert_eq!(decide(&[None, Some(true)], 1), (1, true));
    }

    #[test]
    fn selfcheck_baselines() {
        let script = r#"{"match":{"template_id":"selfcheck.zero","claim_id":"c1"},"reply":"The date is wrong, therefore: Yes, it contains hallucination."}
{"match":{"template_id":"selfcheck.few"},"reply":"Yes"}"#;
        run(script, 1, 1, |d| {
            assert!(d.zero_shot_selfcheck(&claim(), &original()).unwrap().hallucination);
            assert!(d.few_shot_selfcheck(&claim(), &original(), &Exemplars::default()).unwrap().hallucination);
        });
        run(r#"{"reply":"No hallucination found."}"#, 1, 1, |d| {
            assert!(!d.zero_shot_selfcheck(&claim(), &original()).unwrap().hallucination);
        });
        run(r#"{"reply":"The reference mentions a date. It is unclear."}"#, 1, 1, |d| {
            assert!(matches!(d.zero_shot_selfcheck(&claim(), &original()), Err(DetectError::Unparseable { .. })));
        });
    }

    #[test]
    fn few_shot_prompt_contains_exemplars() {
        let prompts = PromptRegistry::default();
        let ex = Exemplars::default();
        let prompt = prompts
            .render(prompts::FEW_SHOT_SELFCHECK, &[("claim", "C"), ("reference", "R"), ("exemplars", &ex.render())])
            .unwrap();
        for e in ex.items() {
            assert!(prompt.contains(&e.claim));
        }
        assert!(prompt.ends_with("Claim: C Reference: R Let's think step by step."));
    }

    #[test]
    fn exemplar_validation() {
        let ex = Exemplars::default();
        assert_eq!(ex.items().len(), 3);
        assert!(ex.items().iter().any(|e| e.hallucination));
        assert!(ex.items().iter().any(|e| !e.hallucination));
        let two = ex.items()[..2].to_vec();
        assert!(matches!(Exemplars::new(two), Err(DetectError::Exemplars(_))));
        let same = vec![ex.items()[0].clone(), ex.items()[0].clone(), ex.items()[2].clone()];
        assert!(matches!(Exemplars::new(same), Err(DetectError::Exemplars(_))));
    }

    #[test]
    fn unigram_fixture() {
        let score = unigram_score("a", &["a a b"], UnigramOptions::default()).unwrap();
        assert!((score - 0.5596157879354227).abs() < 1e-12);
        let excl =
            unigram_score("a", &["a a b"], UnigramOptions { include_original: false, ..Default::default() }).unwrap();
        assert!((excl - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(matches!(unigram_score("", &["a"], UnigramOptions::default()), Err(DetectError::EmptyText)));
        assert!(matches!(unigram_score("!!", &["a"], UnigramOptions::default()), Err(DetectError::EmptyText)));
    }

    #[test]
    fn unigram_prefers_shared_tokens() {
        let opts = UnigramOptions { include_original: false, ..Default::default() };
        let same = unigram_score("the cat sat", &["the cat sat"], opts).unwrap();
        let disjoint = unigram_score("dogs run fast", &["the cat sat"], opts).unwrap();
        assert!(same < disjoint);
        let max = unigram_score("the cat sat", &["the cat sat"], UnigramOptions { aggregate: Aggregate::Max, ..opts })
            .unwrap();
        assert!(max >= same);
    }

    #[test]
    fn unigram_threshold_is_strict() {
        assert!(unigram_predict(2.0, 1.0));
        assert!(!unigram_predict(1.0, 1.0));
    }

    #[test]
    fn calibration_matches_brute_force() {
        let scored = [(0.5, false), (1.0, true), (1.5, false), (2.0, true), (2.0, true), (3.0, true)];
        // Brute force: try every threshold on a fine grid, keep the first best.
        let f1 = |t: f64| {
            let (mut tp, mut fp, mut fn_) = (0.0f64, 0.0f64, 0.0f64);
            for &(s, g) in &scored {
                match (s > t, g) {
                    (true, true) => tp += 1.0,
                    (true, false) => fp += 1.0,
                    (false, true) => fn_ += 1.0,
                    _ => {}
                }
            }
            2.0 * tp / (2.0 * tp + fp + fn_)
        };
        let mut best: (f64, f64) = (f64::NAN, -1.0);
        for i in -100..=400 {
            let t = i as f64 / 100.0;
            if f1(t) > best.1 + 1e-12 {
                best = (t, f1(t));
            }
        }
        let t = calibrate_threshold(&scored);
        assert!((f1(t) - best.1).abs() < 1e-12);
        assert!(t <= best.0);
        assert_eq!(calibrate_threshold(&[]), 0.0);
    }

    #[test]
    fn verdict_bits_round_trip() {
        let flags = vec![Some(true), None, Some(false)];
        assert_eq!(decode_verdict_bits(&encode_verdict_bits(&flags)), flags);
    }

    #[test]
    fn method_names() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("mqag".parse::<Method>().is_err());
    }
}

//! Metrics, K ablation, conflict statistics, prompt sweep, topic counts and
//! report files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, ChatBackend, ChatRequest, Purpose};
use crate::detect::DetectionRecord;
use crate::exec::parallel_map;
use crate::grammar;
use crate::pipeline::{classify_claim, ClassificationRecord, Percent, PipelineError};
use crate::prompts::{self, PromptError, PromptRegistry};
use crate::types::{
    BalancedDataset, Category, ClaimRecord, ConfusionMatrix, DatasetEntry, DetectionOutcome, GenerationParams,
    GenerationStats, Reference, JUDGMENT_TEMPERATURE,
};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("prediction and gold ids differ; only predicted: {only_predicted:?}; only gold: {only_gold:?}")]
    KeyMismatch { only_predicted: Vec<String>, only_gold: Vec<String> },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("`{claim_id}` stores {have} verdicts, {need} needed")]
    InsufficientVerdicts { claim_id: String, have: usize, need: usize },
    #[error("no {0} outcomes")]
    EmptyClass(Class),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Class {
    Hallucinatory,
    Factual,
}

impl std::fmt::Display for Class {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Class::Hallucinatory => "hallucinatory",
            Class::Factual => "factual",
        })
    }
}

/// Confusion matrix over matching id sets, hallucination positive.
pub fn confusion(
    predictions: &BTreeMap<String, bool>,
    gold: &BTreeMap<String, bool>,
) -> Result<ConfusionMatrix, EvalError> {
    let only_predicted: Vec<String> = predictions.keys().filter(|k| !gold.contains_key(*k)).cloned().collect();
    let only_gold: Vec<String> = gold.keys().filter(|k| !predictions.contains_key(*k)).cloned().collect();
    if !only_predicted.is_empty() || !only_gold.is_empty() {
        return Err(EvalError::KeyMismatch { only_predicted, only_gold });
    }
    let mut m = ConfusionMatrix::default();
    for (id, &p) in predictions {
        m.record(p, gold[id]);
    }
    Ok(m)
}

pub fn accuracy(m: &ConfusionMatrix) -> Result<f64, EvalError> {
    match m.total() {
        0 => Err(EvalError::EmptyMatrix),
        total => Ok((m.tp + m.tn) as f64 / total as f64),
    }
}

/// F1 of the positive class; 1 when there is nothing positive at all, 0 when
/// no positive is found but some exist or are predicted.
pub fn f1(m: &ConfusionMatrix) -> f64 {
    if m.tp == 0 {
        return if m.fp == 0 && m.fn_ == 0 { 1.0 } else { 0.0 };
    }
    2.0 * m.tp as f64 / (2 * m.tp + m.fp + m.fn_) as f64
}

pub fn recall(m: &ConfusionMatrix) -> f64 {
    match m.tp + m.fn_ {
        0 => 1.0,
        pos => m.tp as f64 / pos as f64,
    }
}

/// Anything carrying a per-claim vector of pairwise verdicts.
pub trait HasVerdicts {
    fn claim_id(&self) -> &str;
    fn verdicts(&self) -> Vec<Option<bool>>;
}

impl HasVerdicts for DetectionOutcome {
    fn claim_id(&self) -> &str {
        &self.claim_id
    }

    fn verdicts(&self) -> Vec<Option<bool>> {
        self.verdict_flags()
    }
}

impl HasVerdicts for DetectionRecord {
    fn claim_id(&self) -> &str {
        &self.claim_id
    }

    fn verdicts(&self) -> Vec<Option<bool>> {
        self.verdict_flags().unwrap_or_default()
    }
}

/// Prediction at threshold 1 from the first `k` verdicts.
pub fn predict_prefix(verdicts: &[Option<bool>], k: usize) -> bool {
    verdicts.iter().take(k).any(|v| *v == Some(true))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    #[serde(rename = "K")]
    pub k: usize,
    pub accuracy: f64,
    pub f1: f64,
    pub recall: f64,
    pub matrix: ConfusionMatrix,
}

/// Metrics for K = 1..=k_max by truncating stored verdicts; no new calls.
pub fn ablate_k<T: HasVerdicts>(
    outcomes: &[T],
    gold: &BTreeMap<String, bool>,
    k_max: usize,
) -> Result<Vec<AblationPoint>, EvalError> {
    if k_max == 0 {
        return Err(EvalError::Invalid("K max must be at least 1".into()));
    }
    let verdicts: BTreeMap<String, Vec<Option<bool>>> = outcomes
        .iter()
        .map(|o| {
            let v = o.verdicts();
            if v.len() < k_max {
                Err(EvalError::InsufficientVerdicts { claim_id: o.claim_id().to_string(), have: v.len(), need: k_max })
            } else {
                Ok((o.claim_id().to_string(), v))
            }
        })
        .collect::<Result<_, _>>()?;
    (1..=k_max)
        .map(|k| {
            let predictions = verdicts.iter().map(|(id, v)| (id.clone(), predict_prefix(v, k))).collect();
            let matrix = confusion(&predictions, gold)?;
            Ok(AblationPoint { k, accuracy: accuracy(&matrix)?, f1: f1(&matrix), recall: recall(&matrix), matrix })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictStats {
    /// Histogram buckets run 0..=k.
    pub k: usize,
    pub hallucinatory: Vec<u64>,
    pub factual: Vec<u64>,
}

impl ConflictStats {
    pub fn histogram(&self, class: Class) -> &[u64] {
        match class {
            Class::Hallucinatory => &self.hallucinatory,
            Class::Factual => &self.factual,
        }
    }

    /// Mean conflict count of a class.
    pub fn mean(&self, class: Class) -> Result<f64, EvalError> {
        let h = self.histogram(class);
        let n: u64 = h.iter().sum();
        if n == 0 {
            return Err(EvalError::EmptyClass(class));
        }
        let sum: u64 = h.iter().enumerate().map(|(c, &count)| c as u64 * count).sum();
        Ok(sum as f64 / n as f64)
    }
}

/// Conflict-count histograms per gold class.
pub fn conflict_stats<T: HasVerdicts>(
    outcomes: &[T],
    gold: &BTreeMap<String, bool>,
) -> Result<ConflictStats, EvalError> {
    let k = outcomes.iter().map(|o| o.verdicts().len()).max().unwrap_or(0);
    let mut stats = ConflictStats { k, hallucinatory: vec![0; k + 1], factual: vec![0; k + 1] };
    for o in outcomes {
        let Some(&is_h) = gold.get(o.claim_id()) else {
            return Err(EvalError::KeyMismatch { only_predicted: vec![o.claim_id().to_string()], only_gold: vec![] });
        };
        let count = o.verdicts().iter().filter(|v| **v == Some(true)).count();
        let bucket = if is_h { &mut stats.hallucinatory } else { &mut stats.factual };
        bucket[count] += 1;
    }
    Ok(stats)
}

/// One claim/reference pair for the prompt sweep with its expected category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPair {
    pub claim: ClaimRecord,
    pub reference: Reference,
    pub gold: Category,
}

impl SweepPair {
    /// Expected category from the claim's gold verdict.
    pub fn from_entry(entry: &DatasetEntry) -> Self {
        SweepPair {
            claim: entry.claim.clone(),
            reference: entry.reference.clone(),
            gold: entry.claim.gold.expected_category(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Display name, `P0`..`P5`.
    pub variant: String,
    pub template_id: String,
    pub correct: u64,
    pub evaluated: u64,
    /// Percent with one decimal, as printed.
    pub accuracy: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Pairs that failed under at least one variant; dropped from every row.
    pub excluded: Vec<String>,
    pub classifications: BTreeMap<String, Vec<ClassificationRecord>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub model_id: String,
    pub parse_attempts: u32,
    pub concurrency: usize,
}

/// Classification accuracy under each template variant.
pub fn prompt_sweep(
    pairs: &[SweepPair],
    variants: &[&str],
    config: &SweepConfig,
    prompts: &PromptRegistry,
    backend: &dyn ChatBackend,
) -> Result<SweepReport, EvalError> {
    let mut per_variant: Vec<(String, &str, Vec<Option<ClassificationRecord>>)> = Vec::new();
    for &variant in variants {
        let template_id = prompts::classification_variant_id(variant)
            .or_else(|| prompts::CLASSIFICATION_VARIANTS.iter().copied().find(|t| *t == variant))
            .ok_or_else(|| EvalError::Prompt(PromptError::UnknownTemplate(variant.to_string())))?;
        prompts.get(template_id)?;
        let results = parallel_map(pairs, config.concurrency, |_, pair| {
            match classify_claim(
                &pair.claim,
                &pair.reference,
                template_id,
                &config.model_id,
                config.parse_attempts,
                prompts,
                backend,
            ) {
                Ok(r) => Ok(Some(ClassificationRecord {
                    claim_id: r.claim_id,
                    category: Some(r.category),
                    reason: r.reason,
                    raw_output: r.raw_output,
                    parsed: true,
                })),
                Err(PipelineError::Prompt(e)) => Err(EvalError::Prompt(e)),
                Err(e) => {
                    log::warn!("{variant} on {} failed: {e}", pair.claim.id);
                    Ok(None)
                }
            }
        });
        let name = variant_name(template_id);
        per_variant.push((name, template_id, results.into_iter().collect::<Result<_, _>>()?));
    }

    let excluded: BTreeSet<usize> = per_variant
        .iter()
        .flat_map(|(_, _, results)| results.iter().enumerate().filter(|(_, r)| r.is_none()).map(|(i, _)| i))
        .collect();
    let mut rows = Vec::new();
    let mut classifications = BTreeMap::new();
    for (name, template_id, results) in per_variant {
        let mut correct = 0;
        let mut evaluated = 0;
        let mut kept = Vec::new();
        for (i, (pair, r)) in pairs.iter().zip(results).enumerate() {
            let Some(r) = r else { continue };
            if excluded.contains(&i) {
                continue;
            }
            evaluated += 1;
            correct += u64::from(r.category == Some(pair.gold));
            kept.push(r);
        }
        let accuracy =
            if evaluated == 0 { "n/a".to_string() } else { Percent { hits: correct, total: evaluated }.format(1) };
        rows.push(SweepRow {
            variant: name.clone(),
            template_id: template_id.to_string(),
            correct,
            evaluated,
            accuracy,
        });
        classifications.insert(name, kept);
    }
    Ok(SweepReport {
        rows,
        excluded: excluded.into_iter().map(|i| pairs[i].claim.id.clone()).collect(),
        classifications,
    })
}

fn variant_name(template_id: &str) -> String {
    template_id.strip_prefix("classify.").map(str::to_uppercase).unwrap_or_else(|| template_id.to_string())
}

/// Bucket for topic replies outside the vocabulary.
pub const OTHER_TOPIC: &str = "other";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicCount {
    pub topic: String,
    pub count: u64,
}

/// Topic counts over hallucinatory entries, most frequent first, ties alphabetical.
///
/// Claims that already carry a topic skip the model call.
pub fn topic_distribution(
    dataset: &BalancedDataset,
    vocabulary: &[String],
    model_id: &str,
    concurrency: usize,
    prompts: &PromptRegistry,
    backend: &dyn ChatBackend,
) -> Result<Vec<TopicCount>, EvalError> {
    if vocabulary.is_empty() {
        return Err(EvalError::Invalid("topic vocabulary is empty".into()));
    }
    let entries: Vec<&DatasetEntry> = dataset.hallucinatory().collect();
    let topics_text = vocabulary.join(", ");
    let assigned = parallel_map(&entries, concurrency, |_, entry| -> Result<String, EvalError> {
        if let Some(topic) = &entry.claim.topic {
            return Ok(topic.trim().to_lowercase());
        }
        let prompt = prompts.render(prompts::TOPIC, &[("claim", &entry.claim.text), ("topics", &topics_text)])?;
        let params = GenerationParams {
            model_id: model_id.to_string(),
            temperature: JUDGMENT_TEMPERATURE,
            prompt_template_id: prompts::TOPIC.to_string(),
            sample_index: 0,
        };
        let reply = backend.complete(&ChatRequest::new(prompt, params, Purpose::Topic).for_claim(&entry.claim.id))?;
        Ok(grammar::parse_topic(&reply, vocabulary).unwrap_or(OTHER_TOPIC).to_lowercase())
    });
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for topic in assigned {
        *counts.entry(topic?).or_default() += 1;
    }
    Ok(rank_topics(counts))
}

pub fn rank_topics(counts: BTreeMap<String, u64>) -> Vec<TopicCount> {
    let mut ranked: Vec<TopicCount> = counts.into_iter().map(|(topic, count)| TopicCount { topic, count }).collect();
    // BTreeMap order is alphabetical, so a stable sort keeps ties alphabetical.
    ranked.sort_by_key(|t| std::cmp::Reverse(t.count));
    ranked
}

/// Metrics of one detection method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: String,
    pub matrix: ConfusionMatrix,
    pub accuracy: f64,
    pub f1: f64,
    /// Entries without a prediction, left out of the matrix.
    pub skipped: u64,
}

impl MethodMetrics {
    /// Score detection records against the dataset labels.
    pub fn from_records(
        method: &str,
        records: &[DetectionRecord],
        gold: &BTreeMap<String, bool>,
    ) -> Result<Self, EvalError> {
        let predictions: BTreeMap<String, bool> =
            records.iter().filter(|r| r.error.is_none()).map(|r| (r.claim_id.clone(), r.predicted)).collect();
        let skipped = records.len() as u64 - predictions.len() as u64;
        let failed: BTreeSet<&str> =
            records.iter().filter(|r| r.error.is_some()).map(|r| r.claim_id.as_str()).collect();
        let gold: BTreeMap<String, bool> =
            gold.iter().filter(|(id, _)| !failed.contains(id.as_str())).map(|(k, v)| (k.clone(), *v)).collect();
        let matrix = confusion(&predictions, &gold)?;
        Ok(MethodMetrics { method: method.to_string(), matrix, accuracy: accuracy(&matrix)?, f1: f1(&matrix), skipped })
    }
}

/// Gold labels (`true` = hallucinatory) keyed by claim id.
pub fn gold_labels(dataset: &BalancedDataset) -> BTreeMap<String, bool> {
    dataset.entries.iter().map(|e| (e.claim.id.clone(), e.is_hallucination)).collect()
}

/// Everything a report can contain; absent parts are skipped.
#[derive(Debug, Clone, Default)]
pub struct ReportInputs {
    pub metrics: Vec<MethodMetrics>,
    /// Per dataset/temperature generation stats.
    pub generation: Vec<(String, GenerationStats)>,
    pub conflicts: Option<ConflictStats>,
    pub ablation: Vec<AblationPoint>,
    pub topics: Vec<TopicCount>,
    pub sweep: Option<SweepReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
    Svg,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Markdown, ReportFormat::Csv, ReportFormat::Svg];
}

fn fmt_metric(x: f64) -> String {
    format!("{x:.4}")
}

fn fmt_mean(stats: &ConflictStats, class: Class) -> String {
    stats.mean(class).map(|m| format!("{m:.2}")).unwrap_or_else(|_| "n/a".into())
}

/// Render every report file as `(file name, contents)`, in a fixed order.
pub fn render_report(inputs: &ReportInputs, formats: &[ReportFormat]) -> Vec<(String, String)> {
    let mut files = Vec::new();
    let want = |f| formats.contains(&f);

    if want(ReportFormat::Csv) {
        if !inputs.metrics.is_empty() {
            let mut csv = String::from("method,tp,fp,fn,tn,accuracy,f1,skipped\n");
            for m in &inputs.metrics {
                let c = &m.matrix;
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{},{}",
                    m.method,
                    c.tp,
                    c.fp,
                    c.fn_,
                    c.tn,
                    fmt_metric(m.accuracy),
                    fmt_metric(m.f1),
                    m.skipped
                );
            }
            files.push(("metrics.csv".into(), csv));
        }
        if !inputs.generation.is_empty() {
            let mut csv =
                String::from("run,total,invalid,hallucinations,h_percent,classified,unparseable,transport_failed\n");
            for (name, s) in &inputs.generation {
                let rate = Percent { hits: s.hallucination_count, total: s.total_claims.max(1) };
                let _ = writeln!(
                    csv,
                    "{name},{},{},{},{},{},{},{}",
                    s.total_claims,
                    s.invalid_references,
                    s.hallucination_count,
                    rate,
                    s.classified,
                    s.unparseable,
                    s.transport_failed
                );
            }
            files.push(("generation.csv".into(), csv));
        }
        if let Some(stats) = &inputs.conflicts {
            let mut csv = String::from("class,entries,mean_conflicts");
            for c in 0..=stats.k {
                let _ = write!(csv, ",n{c}");
            }
            csv.push('\n');
            for class in [Class::Hallucinatory, Class::Factual] {
                let h = stats.histogram(class);
                let _ = write!(csv, "{class},{},{}", h.iter().sum::<u64>(), fmt_mean(stats, class));
                for n in h {
                    let _ = write!(csv, ",{n}");
                }
                csv.push('\n');
            }
            files.push(("conflicts.csv".into(), csv));
        }
        if !inputs.ablation.is_empty() {
            let mut csv = String::from("K,accuracy,f1,recall\n");
            for p in &inputs.ablation {
                let _ =
                    writeln!(csv, "{},{},{},{}", p.k, fmt_metric(p.accuracy), fmt_metric(p.f1), fmt_metric(p.recall));
            }
            files.push(("ablation.csv".into(), csv));
        }
        if !inputs.topics.is_empty() {
            let mut csv = String::from("topic,count\n");
            for t in &inputs.topics {
                let _ = writeln!(csv, "{},{}", t.topic, t.count);
            }
            files.push(("topics.csv".into(), csv));
        }
        if let Some(sweep) = &inputs.sweep {
            files.push(("sweep.csv".into(), sweep_csv(sweep)));
        }
    }

    if want(ReportFormat::Svg) {
        if let Some(stats) = &inputs.conflicts {
            for class in [Class::Hallucinatory, Class::Factual] {
                let labels: Vec<String> = (0..=stats.k).map(|c| c.to_string()).collect();
                let title = format!("Conflict counts, {class} references");
                files.push((format!("conflicts_{class}.svg"), bar_chart(&title, &labels, stats.histogram(class))));
            }
        }
        if !inputs.ablation.is_empty() {
            files.push(("ablation.svg".into(), ablation_chart(&inputs.ablation)));
        }
        if !inputs.topics.is_empty() {
            let top: Vec<&TopicCount> = inputs.topics.iter().take(10).collect();
            let labels: Vec<String> = top.iter().map(|t| t.topic.clone()).collect();
            let counts: Vec<u64> = top.iter().map(|t| t.count).collect();
            files.push(("topics.svg".into(), bar_chart("Top topics of hallucinatory references", &labels, &counts)));
        }
    }

    if want(ReportFormat::Markdown) {
        files.push(("summary.md".into(), summary_markdown(inputs)));
    }
    files
}

pub fn sweep_csv(sweep: &SweepReport) -> String {
    let mut csv = String::from("variant,template,correct,evaluated,accuracy\n");
    for r in &sweep.rows {
        let _ = writeln!(csv, "{},{},{},{},{}", r.variant, r.template_id, r.correct, r.evaluated, r.accuracy);
    }
    csv
}

fn summary_markdown(inputs: &ReportInputs) -> String {
    let mut md = String::from("# Report\n");
    if !inputs.metrics.is_empty() {
        md.push_str("\n## Detection\n\n| method | accuracy | F1 | TP | FP | FN | TN | skipped |\n|---|---|---|---|---|---|---|---|\n");
        for m in &inputs.metrics {
            let c = &m.matrix;
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} | {} | {} |",
                m.method,
                fmt_metric(m.accuracy),
                fmt_metric(m.f1),
                c.tp,
                c.fp,
                c.fn_,
                c.tn,
                m.skipped
            );
        }
    }
    if !inputs.generation.is_empty() {
        md.push_str("\n## Generation\n\n| run | N | invalid | H | H% |\n|---|---|---|---|---|\n");
        for (name, s) in &inputs.generation {
            let rate = Percent { hits: s.hallucination_count, total: s.total_claims.max(1) };
            let _ = writeln!(
                md,
                "| {name} | {} | {} | {} | {rate} |",
                s.total_claims, s.invalid_references, s.hallucination_count
            );
        }
    }
    if let Some(stats) = &inputs.conflicts {
        md.push_str("\n## Conflicts\n\n| class | entries | mean conflicts |\n|---|---|---|\n");
        for class in [Class::Hallucinatory, Class::Factual] {
            let n: u64 = stats.histogram(class).iter().sum();
            let _ = writeln!(md, "| {class} | {n} | {} |", fmt_mean(stats, class));
        }
    }
    if !inputs.ablation.is_empty() {
        md.push_str("\n## K ablation\n\n| K | accuracy | F1 | recall |\n|---|---|---|---|\n");
        for p in &inputs.ablation {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} |",
                p.k,
                fmt_metric(p.accuracy),
                fmt_metric(p.f1),
                fmt_metric(p.recall)
            );
        }
    }
    if !inputs.topics.is_empty() {
        md.push_str("\n## Topics\n\n| topic | count |\n|---|---|\n");
        for t in inputs.topics.iter().take(10) {
            let _ = writeln!(md, "| {} | {} |", t.topic, t.count);
        }
    }
    if let Some(sweep) = &inputs.sweep {
        md.push_str("\n## Prompt variants\n\n| variant | accuracy (%) | evaluated |\n|---|---|---|\n");
        for r in &sweep.rows {
            let _ = writeln!(md, "| {} | {} | {} |", r.variant, r.accuracy, r.evaluated);
        }
        if !sweep.excluded.is_empty() {
            let _ = writeln!(md, "\nExcluded pairs: {}", sweep.excluded.join(", "));
        }
    }
    md
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const CHART_W: u64 = 640;
const CHART_H: u64 = 320;
const PLOT_H: u64 = 240;
const MARGIN: u64 = 40;

/// Vertical bar chart. Bar height is `count * scale`, so heights are
/// proportional to counts; each bar carries `data-count`.
pub fn bar_chart(title: &str, labels: &[String], counts: &[u64]) -> String {
    let max = counts.iter().copied().max().unwrap_or(0).max(1);
    let n = counts.len().max(1) as u64;
    let slot = (CHART_W - 2 * MARGIN) / n;
    let bar_w = (slot * 4 / 5).max(1);
    let scale = PLOT_H as f64 / max as f64;
    let base = MARGIN + PLOT_H;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{CHART_W}\" height=\"{CHART_H}\" viewBox=\"0 0 {CHART_W} {CHART_H}\">\n"
    );
    let _ = writeln!(svg, "<title>{}</title>", escape_xml(title));
    let _ = writeln!(svg, "<text x=\"{MARGIN}\" y=\"24\" font-size=\"14\">{}</text>", escape_xml(title));
    let _ = writeln!(
        svg,
        "<line x1=\"{MARGIN}\" y1=\"{base}\" x2=\"{}\" y2=\"{base}\" stroke=\"black\"/>",
        CHART_W - MARGIN
    );
    for (i, (&count, label)) in counts.iter().zip(labels).enumerate() {
        let x = MARGIN + i as u64 * slot + (slot - bar_w) / 2;
        let h = count as f64 * scale;
        let _ = writeln!(
            svg,
            "<rect class=\"bar\" x=\"{x}\" y=\"{:.3}\" width=\"{bar_w}\" height=\"{h:.3}\" fill=\"steelblue\" data-label=\"{}\" data-count=\"{count}\"/>",
            base as f64 - h,
            escape_xml(label)
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"middle\">{}</text>",
            x + bar_w / 2,
            base + 14,
            escape_xml(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Accuracy and F1 against K as two polylines.
pub fn ablation_chart(points: &[AblationPoint]) -> String {
    let n = points.len().max(2) as f64 - 1.0;
    let plot_w = (CHART_W - 2 * MARGIN) as f64;
    let base = (MARGIN + PLOT_H) as f64;
    let xy = |i: usize, v: f64| format!("{:.3},{:.3}", MARGIN as f64 + plot_w * i as f64 / n, base - v * PLOT_H as f64);
    let line = |get: fn(&AblationPoint) -> f64| {
        points.iter().enumerate().map(|(i, p)| xy(i, get(p))).collect::<Vec<_>>().join(" ")
    };
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{CHART_W}\" height=\"{CHART_H}\" viewBox=\"0 0 {CHART_W} {CHART_H}\">\n"
    );
    svg.push_str("<title>Accuracy and F1 by K</title>\n");
    let _ = writeln!(
        svg,
        "<polyline class=\"accuracy\" fill=\"none\" stroke=\"steelblue\" points=\"{}\"/>",
        line(|p| p.accuracy)
    );
    let _ = writeln!(svg, "<polyline class=\"f1\" fill=\"none\" stroke=\"darkorange\" points=\"{}\"/>", line(|p| p.f1));
    for (i, p) in points.iter().enumerate() {
        let _ = writeln!(
            svg,
            "<text x=\"{:.3}\" y=\"{}\" font-size=\"10\" text-anchor=\"middle\">{}</text>",
            MARGIN as f64 + plot_w * i as f64 / n,
            MARGIN + PLOT_H + 14,
            p.k
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Write the report files into `dir`, replacing files of the same name.
pub fn emit_report(inputs: &ReportInputs, formats: &[ReportFormat], dir: &Path) -> Result<Vec<String>, EvalError> {
    let io = |path: &Path, source| EvalError::Io { path: path.display().to_string(), source };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut written = Vec::new();
    for (name, contents) in render_report(inputs, formats) {
        let path = dir.join(&name);
        std::fs::write(&path, contents).map_err(|e| io(&path, e))?;
        written.push(name);
    }
    Ok(written)
}

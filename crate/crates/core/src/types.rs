//! Shared domain model: claims, generated references, classification
//! results, dataset entries and detection outcomes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Source corpus of a claim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    ClimateFever,
    #[serde(rename = "pubhealth")]
    PubHealth,
    Wice,
    Generic,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 4] =
        [DatasetKind::ClimateFever, DatasetKind::PubHealth, DatasetKind::Wice, DatasetKind::Generic];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::ClimateFever => "climate-fever",
            DatasetKind::PubHealth => "pubhealth",
            DatasetKind::Wice => "wice",
            DatasetKind::Generic => "generic",
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "climate-fever" | "climate_fever" | "climatefever" => Ok(DatasetKind::ClimateFever),
            "pubhealth" | "pub-health" => Ok(DatasetKind::PubHealth),
            "wice" => Ok(DatasetKind::Wice),
            "generic" => Ok(DatasetKind::Generic),
            other => Err(format!("unknown dataset `{other}`")),
        }
    }
}

/// Gold verdict of a claim. There is deliberately no "not enough info" state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryVerdict {
    Factual,
    NonFactual,
}

impl BinaryVerdict {
    /// The classification category a faithful reference should lead to.
    pub fn expected_category(self) -> Category {
        match self {
            BinaryVerdict::Factual => Category::T,
            BinaryVerdict::NonFactual => Category::F,
        }
    }
}

/// A fact-checking claim with its normalized gold verdict.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimRecord {
    pub id: String,
    pub text: String,
    pub gold: BinaryVerdict,
    pub raw_label: String,
    pub dataset: DatasetKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
}

/// Sampling parameters attached to every model call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub model_id: String,
    pub temperature: f64,
    pub prompt_template_id: String,
    pub sample_index: u32,
}

/// Temperatures used for dataset-generation runs.
pub const GENERATION_TEMPERATURES: [f64; 3] = [0.1, 0.5, 0.9];

/// Temperature for classification, contradiction and other judgment calls.
pub const JUDGMENT_TEMPERATURE: f64 = 0.1;

/// Number of sampled alternatives per entry used by default.
pub const DEFAULT_K: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Validity {
    Concrete,
    Refusal,
}

/// One model-generated reference text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub claim_id: String,
    pub text: String,
    pub validity: Validity,
    pub params: GenerationParams,
}

impl Reference {
    pub fn is_concrete(&self) -> bool {
        self.validity == Validity::Concrete
    }
}

/// Classification category: the reference shows the claim is true (`T`) or false (`F`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    T,
    F,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub claim_id: String,
    pub category: Category,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub raw_output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub claim: ClaimRecord,
    pub reference: Reference,
    pub is_hallucination: bool,
}

/// Accounting for one dataset-generation run.
///
/// `total_claims = classified + invalid_references + unparseable + transport_failed`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub total_claims: u64,
    pub invalid_references: u64,
    pub hallucination_count: u64,
    /// `100 * hallucination_count / total_claims`, two decimals.
    pub hallucination_rate: f64,
    #[serde(default)]
    pub classified: u64,
    #[serde(default)]
    pub unparseable: u64,
    #[serde(default)]
    pub transport_failed: u64,
    /// Rate over classified (valid) references instead of all claims.
    #[serde(default)]
    pub valid_hallucination_rate: f64,
}

impl GenerationStats {
    pub fn accounting_holds(&self) -> bool {
        self.total_claims == self.classified + self.invalid_references + self.unparseable + self.transport_failed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancedDataset {
    pub entries: Vec<DatasetEntry>,
    pub seed: u64,
    pub stats: GenerationStats,
}

impl BalancedDataset {
    pub fn hallucinatory(&self) -> impl Iterator<Item = &DatasetEntry> {
        self.entries.iter().filter(|e| e.is_hallucination)
    }

    pub fn factual(&self) -> impl Iterator<Item = &DatasetEntry> {
        self.entries.iter().filter(|e| !e.is_hallucination)
    }

    pub fn is_balanced(&self) -> bool {
        self.hallucinatory().count() == self.factual().count()
    }
}

/// Outcome of one pairwise (Y, Y'_k) contradiction check. `pair_index` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContradictionVerdict {
    pub pair_index: usize,
    pub contradicts: bool,
    pub raw_output: String,
}

/// Per-entry record of the sampled self-contradiction detector.
///
/// `samples` and `verdicts` have the same length K; a `None` slot is a pair
/// that could not be sampled or judged and does not count toward the
/// effective K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub claim_id: String,
    pub original: Reference,
    pub samples: Vec<Option<Reference>>,
    pub verdicts: Vec<Option<ContradictionVerdict>>,
    pub conflict_count: usize,
    pub predicted_hallucination: bool,
    pub threshold: usize,
    /// Cache keys of the sampling and checking calls, for audit.
    #[serde(default)]
    pub call_keys: Vec<String>,
}

impl DetectionOutcome {
    pub fn k(&self) -> usize {
        self.verdicts.len()
    }

    pub fn effective_k(&self) -> usize {
        self.verdicts.iter().filter(|v| v.is_some()).count()
    }

    /// Verdict slots as `Some(bool)` / `None`.
    pub fn verdict_flags(&self) -> Vec<Option<bool>> {
        self.verdicts.iter().map(|v| v.as_ref().map(|v| v.contradicts)).collect()
    }
}

/// Binary confusion matrix with hallucination as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn record(&mut self, predicted: bool, gold: bool) {
        match (predicted, gold) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_kind_names_round_trip() {
        for kind in DatasetKind::ALL {
            assert_eq!(kind.as_str().parse::<DatasetKind>().unwrap(), kind);
            let json = serde_json::to_string(&kind).unwrap();
            assert_eq!(json, format!("\"{}\"", kind.as_str()));
        }
    }

    #[test]
    fn confusion_serializes_fn_field() {
        let m = ConfusionMatrix { tp: 1, fp: 2, fn_: 3, tn: 4 };
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, r#"{"tp":1,"fp":2,"fn":3,"tn":4}"#);
        assert_eq!(serde_json::from_str::<ConfusionMatrix>(&json).unwrap(), m);
    }

    #[test]
    fn expected_category_follows_gold() {
        assert_eq!(BinaryVerdict::Factual.expected_category(), Category::T);
        assert_eq!(BinaryVerdict::NonFactual.expected_category(), Category::F);
    }
}

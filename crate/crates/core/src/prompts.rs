//! Prompt template registry.
//!
//! Placeholders are written `{claim}`, `{reference}`, `{reference2}`,
//! `{topics}` and `{exemplars}`. Rendering is a single left-to-right pass, so
//! bound text that happens to contain a placeholder marker is never expanded
//! again.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use sha2::{Digest, Sha256};

pub const GENERATION: &str = "gen.v1";
pub const CLASSIFY_P0: &str = "classify.p0";
pub const CONTRADICTION: &str = "contradict.v1";
pub const ZERO_SHOT_SELFCHECK: &str = "selfcheck.zero";
pub const FEW_SHOT_SELFCHECK: &str = "selfcheck.few";
pub const TOPIC: &str = "topic.v1";
pub const CONCRETE_CHECK: &str = "concrete.v1";

pub const CLASSIFICATION_VARIANTS: [&str; 6] =
    ["classify.p0", "classify.p1", "classify.p2", "classify.p3", "classify.p4", "classify.p5"];

pub const SAMPLING_VARIANTS: [&str; 7] =
    ["sample.v1", "sample.v2", "sample.v3", "sample.v4", "sample.v5", "sample.v6", "sample.v7"];

/// Placeholder names a template body may use.
pub const PLACEHOLDERS: [&str; 5] = ["claim", "reference", "reference2", "topics", "exemplars"];

/// Default single-label topic vocabulary.
pub const DEFAULT_TOPICS: [&str; 11] = [
    "history",
    "technology",
    "culture",
    "geography",
    "business",
    "politics",
    "sports",
    "health",
    "climate",
    "law",
    "art",
];

const BUILTIN: &[(&str, &str)] = &[
    (
        GENERATION,
        "Given one claim whose authenticity is unknown, you should provide one reference about it and summarize the reference in a paragraph. Claim: {claim}",
    ),
    (
        "classify.p0",
        "Given the claim and the reference, you should answer whether the claim is true or false. Claim: {claim} Reference: {reference}",
    ),
    (
        "classify.p1",
        "Assume you are an excellent classifier. Given the claim and the reference, you should answer whether the claim is true or false.\n\
Please note that your classification result must follow such format:\n\
\u{201c}Answer: True if the given claim is factual, False otherwise.\"\n\
Claim: {claim} Reference: {reference}",
    ),
    (
        "classify.p2",
        "Assume you are an excellent classifier. Given the claim and the reference, you should answer whether the claim is true or false.\n\
The reference is some information relevant to the claim, which can be used to judge the authenticity of the claim.\n\
Please note that your classification result must follow such format:\n\
\u{201c}Answer: True if the given claim is factual, False otherwise.\"\n\
Claim: {claim} Reference: {reference}",
    ),
    (
        "classify.p3",
        "Assume you are an excellent classifier.\n\
Your task is to identify whether there are any factual errors within the claim based on the provided reference and classify the claim to the label \u{201c}True\" if it is factual, \"False\" otherwise.\n\
Given the claim and the reference, you should answer whether the claim is factual or not (Boolean - True or False).\n\
Please note that your classification results must follow such format:\n\
\u{201c}Answer: True if the given claim is factual, False otherwise.\"\n\
Claim: {claim} Reference: {reference}",
    ),
    (
        "classify.p4",
        "Assume you are an excellent classifier.\n\
Your task is to identify whether there are any factual errors within the claim based on the provided reference and classify the claim to the label \u{201c}True\" if it is factual, \u{201c}False\" otherwise.\n\
Given the claim and the reference, you should answer whether the claim is factual or not (Boolean - True or False).\n\
Please note that your classification results must follow such format:\n\
\"Answer: True if the given claim is factual, False otherwise.\n\
Reasons: Why is the given claim true or false? You must provide some evidences from the given reference.\"\n\
Claim: {claim} Reference: {reference}",
    ),
    (
        "classify.p5",
        "Assume you are an excellent classifier.\n\
Your task is to identify whether there are any factual errors within the claim based on the provided reference and classify the claim to the label \u{201c}True\" if it is factual, \"False\" otherwise.\n\
When you are judging the authenticity of the given claim, you must find some evidences from the provided helpful reference to support your conclusion.\n\
Given the claim and the reference, you should answer whether the claim is factual or not (Boolean - True or False).\n\
Please note that your classification results must follow such format:\n\
\"Answer: True if the given claim is factual, False otherwise.\n\
Reasons: Why is the given claim true or false? You must provide some evidences from the given reference.\"\n\
Claim: {claim} Reference: {reference}",
    ),
    (
        "sample.v1",
        "Given one claim whose truthfulness is uncertain, you should provide one reference about it. This reference should be summarized as one paragraph. Claim: {claim}",
    ),
    (
        "sample.v2",
        "Please provide one reference on this claim whose authenticity is unknown and give a brief summary of it in one paragraph. Claim: {claim}",
    ),
    (
        "sample.v3",
        "Please provide a reference for a claim whose truthfulness is uncertain and summarize the content of the reference in one paragraph. Claim: {claim}",
    ),
    (
        "sample.v4",
        "Given one claim whose authenticity is uncertain, you should provide one reference about it and write a summary paragraph. Claim: {claim}",
    ),
    (
        "sample.v5",
        "There is a claim whose authenticity is unknown, please provide one corresponding reference and condense the reference in a paragraph. Claim: {claim}",
    ),
    (
        "sample.v6",
        "There is a claim whose authenticity is unknown, please provide one reference that is relevant to this claim and summarize it in one paragraph. Claim: {claim}",
    ),
    (
        "sample.v7",
        "You are expected to provide a reference for a claim whose truthfulness is uncertain. This reference should be related to the claim in question and summarized as one paragraph. Claim: {claim}",
    ),
    (
        CONTRADICTION,
        "Given the claim and two references about it, answer whether the two references contradict each other. Answer: Yes or No. Claim: {claim} Reference 1: {reference} Reference 2: {reference2}",
    ),
    (
        ZERO_SHOT_SELFCHECK,
        "Given the claim and the reference, answer whether the reference contains hallucination, that is, information about the claim that is not factual. End your reply with \"Answer: Yes\" or \"Answer: No\". Claim: {claim} Reference: {reference} Let's think step by step.",
    ),
    (
        FEW_SHOT_SELFCHECK,
        "Given the claim and the reference, answer whether the reference contains hallucination, that is, information about the claim that is not factual. End your reply with \"Answer: Yes\" or \"Answer: No\".\n\n{exemplars}\n\nClaim: {claim} Reference: {reference} Let's think step by step.",
    ),
    (TOPIC, "Assign exactly one topic from this list to the claim: {topics}. Claim: {claim}"),
    (CONCRETE_CHECK, "Does this text contain a concrete reference? Answer Yes or No. Text: {reference}"),
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("template `{template}` needs a binding for `{name}`")]
    MissingBinding { template: String, name: String },
    #[error("template `{template}` contains unknown placeholder `{{{name}}}`")]
    UnboundPlaceholderRemains { template: String, name: String },
    #[error("template override file: {0}")]
    Overrides(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Slot(String),
    /// `{word}` where `word` is not a known placeholder.
    Unknown(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: String,
    pub body: String,
    pub required_placeholders: BTreeSet<String>,
    segments: Vec<Segment>,
}

impl PromptTemplate {
    pub fn new(id: impl Into<String>, body: impl Into<String>) -> Self {
        let body = body.into();
        let segments = parse_segments(&body);
        let required_placeholders = segments
            .iter()
            .filter_map(|s| match s {
                Segment::Slot(n) => Some(n.clone()),
                _ => None,
            })
            .collect();
        PromptTemplate { id: id.into(), body, required_placeholders, segments }
    }

    pub fn render(&self, bindings: &[(&str, &str)]) -> Result<String, PromptError> {
        let mut out = String::with_capacity(self.body.len() + 256);
        for seg in &self.segments {
            match seg {
                Segment::Text(t) => out.push_str(t),
                Segment::Slot(name) => {
                    let value =
                        bindings.iter().find(|(k, _)| *k == name).map(|(_, v)| *v).ok_or_else(|| {
                            PromptError::MissingBinding { template: self.id.clone(), name: name.clone() }
                        })?;
                    out.push_str(value);
                }
                Segment::Unknown(name) => {
                    return Err(PromptError::UnboundPlaceholderRemains {
                        template: self.id.clone(),
                        name: name.clone(),
                    })
                }
            }
        }
        Ok(out)
    }

    /// Hex SHA-256 of the body.
    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.body.as_bytes()))
    }
}

fn parse_segments(body: &str) -> Vec<Segment> {
    let mut segments = Vec::new();
    let mut text = String::new();
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let ident_len = after.find(|c: char| !(c.is_ascii_alphanumeric() || c == '_')).unwrap_or(after.len());
        if ident_len > 0 && after[ident_len..].starts_with('}') {
            text.push_str(&rest[..open]);
            if !text.is_empty() {
                segments.push(Segment::Text(std::mem::take(&mut text)));
            }
            let name = &after[..ident_len];
            segments.push(if PLACEHOLDERS.contains(&name) {
                Segment::Slot(name.to_string())
            } else {
                Segment::Unknown(name.to_string())
            });
            rest = &after[ident_len + 1..];
        } else {
            text.push_str(&rest[..=open]);
            rest = after;
        }
    }
    text.push_str(rest);
    if !text.is_empty() {
        segments.push(Segment::Text(text));
    }
    segments
}

/// Immutable-after-construction set of templates keyed by id.
#[derive(Debug, Clone)]
pub struct PromptRegistry {
    templates: BTreeMap<String, PromptTemplate>,
}

impl Default for PromptRegistry {
    fn default() -> Self {
        let templates = BUILTIN.iter().map(|(id, body)| (id.to_string(), PromptTemplate::new(*id, *body))).collect();
        PromptRegistry { templates }
    }
}

impl PromptRegistry {
    /// Replace or add templates. Existing ids keep their position in iteration order.
    pub fn with_overrides<I, K, V>(mut self, overrides: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        for (id, body) in overrides {
            let id = id.into();
            self.templates.insert(id.clone(), PromptTemplate::new(id, body));
        }
        self
    }

    /// Load overrides from a TOML file mapping template id to body.
    pub fn with_override_file(self, path: &Path) -> Result<Self, PromptError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| PromptError::Overrides(format!("{}: {e}", path.display())))?;
        let map: BTreeMap<String, String> =
            toml::from_str(&text).map_err(|e| PromptError::Overrides(format!("{}: {e}", path.display())))?;
        Ok(self.with_overrides(map))
    }

    pub fn get(&self, id: &str) -> Result<&PromptTemplate, PromptError> {
        self.templates.get(id).ok_or_else(|| PromptError::UnknownTemplate(id.to_string()))
    }

    pub fn render(&self, id: &str, bindings: &[(&str, &str)]) -> Result<String, PromptError> {
        self.get(id)?.render(bindings)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    /// Checksums of every registered template, keyed by id.
    pub fn checksums(&self) -> BTreeMap<String, String> {
        self.templates.iter().map(|(id, t)| (id.clone(), t.checksum())).collect()
    }
}

/// Sampling prompt for the k-th alternative (1-based); cycles the seven variants.
pub fn sampling_variant(k: usize) -> &'static str {
    assert!(k >= 1, "sample index is 1-based");
    SAMPLING_VARIANTS[(k - 1) % SAMPLING_VARIANTS.len()]
}

pub fn list_classification_variants() -> Vec<&'static str> {
    CLASSIFICATION_VARIANTS.to_vec()
}

/// Resolve a short variant name (`P3`, `p3`) or a full id to a classification template id.
pub fn classification_variant_id(name: &str) -> Option<&'static str> {
    let lower = name.trim().to_ascii_lowercase();
    CLASSIFICATION_VARIANTS
        .iter()
        .copied()
        .find(|id| *id == lower || id.strip_prefix("classify.") == Some(lower.as_str()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_prompt_renders() {
        let reg = PromptRegistry::default();
        assert_eq!(
            reg.render(GENERATION, &[("claim", "X")]).unwrap(),
            "Given one claim whose authenticity is unknown, you should provide one reference about it and summarize the reference in a paragraph. Claim: X"
        );
    }

    #[test]
    fn classification_prompt_renders() {
        let reg = PromptRegistry::default();
        assert_eq!(
            reg.render(CLASSIFY_P0, &[("claim", "C"), ("reference", "R")]).unwrap(),
            "Given the claim and the reference, you should answer whether the claim is true or false. Claim: C Reference: R"
        );
        assert_eq!(
            reg.render(CLASSIFY_P0, &[("claim", "X")]),
            Err(PromptError::MissingBinding { template: CLASSIFY_P0.into(), name: "reference".into() })
        );
    }

    #[test]
    fn unknown_template_and_unknown_placeholder() {
        let reg = PromptRegistry::default().with_overrides([("bad", "Claim: {clam}")]);
        assert_eq!(reg.render("nope", &[]), Err(PromptError::UnknownTemplate("nope".into())));
        assert!(matches!(
            reg.render("bad", &[("claim", "x")]),
            Err(PromptError::UnboundPlaceholderRemains { name, .. }) if name == "clam"
        ));
    }

    #[test]
    fn bound_text_is_not_re_expanded() {
        let reg = PromptRegistry::default();
        let out = reg.render(CLASSIFY_P0, &[("claim", "{reference}"), ("reference", "R")]).unwrap();
        assert!(out.contains("Claim: {reference} Reference: R"));
    }

    #[test]
    fn non_placeholder_braces_are_literal() {
        let t = PromptTemplate::new("t", "json {\"a\": 1} {} { claim} {claim}");
        assert_eq!(t.render(&[("claim", "c")]).unwrap(), "json {\"a\": 1} {} { claim} c");
        assert_eq!(t.required_placeholders, BTreeSet::from(["claim".to_string()]));
    }

    #[test]
    fn sampling_variants_cycle() {
        assert_eq!(sampling_variant(1), "sample.v1");
        assert_eq!(sampling_variant(7), "sample.v7");
        assert_eq!(sampling_variant(8), "sample.v1");
        assert_eq!(sampling_variant(13), "sample.v6");
    }

    #[test]
    fn six_classification_variants() {
        let reg = PromptRegistry::default();
        let ids = list_classification_variants();
        assert_eq!(ids.len(), 6);
        for id in &ids {
            let t = reg.get(id).unwrap();
            assert!(!t.body.is_empty());
            assert_eq!(t.required_placeholders, BTreeSet::from(["claim".to_string(), "reference".to_string()]));
        }
        assert_eq!(classification_variant_id("P3"), Some("classify.p3"));
        assert_eq!(classification_variant_id("classify.p5"), Some("classify.p5"));
        assert_eq!(classification_variant_id("P6"), None);
    }

    #[test]
    fn override_file_replaces_body() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("templates.toml");
        std::fs::write(&path, "\"contradict.v1\" = \"\"\"A {claim}\nB {reference} C {reference2}\"\"\"\n").unwrap();
        let reg = PromptRegistry::default().with_override_file(&path).unwrap();
        assert_eq!(
            reg.render(CONTRADICTION, &[("claim", "1"), ("reference", "2"), ("reference2", "3")]).unwrap(),
            "A 1\nB 2 C 3"
        );
    }
}

//! Browser bindings: a K-ablation explorer over synthetic detection outcomes,
//! the unigram self-check score, and prompt rendering with the H% calculator.
//!
//! Each operation is a plain function returning `Result<_, String>`; the
//! `#[wasm_bindgen]` exports in [`web`] only convert errors.

use std::collections::BTreeMap;

use autohall::detect::{unigram_score, Aggregate, UnigramOptions};
use autohall::evalreport::{ablate_k, ablation_chart, AblationPoint, HasVerdicts};
use autohall::pipeline::hallucination_rate;
use autohall::{GenerationStats, PromptRegistry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Parameters of the synthetic outcome generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Synthetic {
    pub seed: u64,
    /// Entries per class.
    pub per_class: usize,
    pub k_max: usize,
    /// Per-pair conflict probability for hallucinatory entries.
    pub p_hallucinatory: f64,
    /// Per-pair conflict probability for factual entries.
    pub p_factual: f64,
    /// Per-pair probability that a verdict is missing.
    pub p_missing: f64,
}

struct Outcome {
    id: String,
    verdicts: Vec<Option<bool>>,
}

impl HasVerdicts for Outcome {
    fn claim_id(&self) -> &str {
        &self.id
    }

    fn verdicts(&self) -> Vec<Option<bool>> {
        self.verdicts.clone()
    }
}

#[derive(Debug, Serialize)]
pub struct Ablation {
    pub points: Vec<AblationPoint>,
    pub svg: String,
}

pub fn ablation(params: Synthetic) -> Result<Ablation, String> {
    if params.per_class == 0 || params.per_class > 10_000 {
        return Err("entries per class must be in 1..=10000".into());
    }
    if params.k_max == 0 || params.k_max > 50 {
        return Err("K max must be in 1..=50".into());
    }
    for p in [params.p_hallucinatory, params.p_factual, params.p_missing] {
        if !(0.0..=1.0).contains(&p) {
            return Err(format!("probability {p} outside [0, 1]"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut outcomes = Vec::with_capacity(2 * params.per_class);
    let mut gold = BTreeMap::new();
    for i in 0..2 * params.per_class {
        let hallucinatory = i < params.per_class;
        let p = if hallucinatory { params.p_hallucinatory } else { params.p_factual };
        let verdicts = (0..params.k_max)
            .map(|_| if rng.random_bool(params.p_missing) { None } else { Some(rng.random_bool(p)) })
            .collect();
        let id = format!("e{i:05}");
        gold.insert(id.clone(), hallucinatory);
        outcomes.push(Outcome { id, verdicts });
    }
    let points = ablate_k(&outcomes, &gold, params.k_max).map_err(|e| e.to_string())?;
    let svg = ablation_chart(&points);
    Ok(Ablation { points, svg })
}

/// One sample per line; empty lines are ignored.
pub fn unigram(original: &str, samples: &str, include_original: bool, aggregate: &str) -> Result<f64, String> {
    let aggregate: Aggregate = aggregate.parse()?;
    let samples: Vec<&str> = samples.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    unigram_score(original, &samples, UnigramOptions { include_original, aggregate }).map_err(|e| e.to_string())
}

pub fn template_ids() -> Vec<String> {
    PromptRegistry::default().ids().map(str::to_string).collect()
}

pub fn render_prompt(template_id: &str, claim: &str, reference: &str) -> Result<String, String> {
    PromptRegistry::default()
        .render(template_id, &[("claim", claim), ("reference", reference)])
        .map_err(|e| e.to_string())
}

/// H% with two decimals, as reported for a generation run.
pub fn rate(hallucinations: u64, total: u64) -> Result<String, String> {
    if hallucinations > total {
        return Err("more hallucinations than claims".into());
    }
    let stats = GenerationStats { total_claims: total, hallucination_count: hallucinations, ..Default::default() };
    hallucination_rate(&stats).map(|p| p.to_string()).map_err(|e| e.to_string())
}

pub mod web {
    use wasm_bindgen::prelude::*;

    use super::Synthetic;

    fn js(e: String) -> JsValue {
        JsValue::from_str(&e)
    }

    /// JSON `{points: [...], svg: "..."}`.
    #[wasm_bindgen]
    pub fn ablation(
        seed: u64,
        per_class: usize,
        k_max: usize,
        p_hallucinatory: f64,
        p_factual: f64,
        p_missing: f64,
    ) -> Result<String, JsValue> {
        let params = Synthetic { seed, per_class, k_max, p_hallucinatory, p_factual, p_missing };
        let result = super::ablation(params).map_err(js)?;
        serde_json::to_string(&result).map_err(|e| js(e.to_string()))
    }

    #[wasm_bindgen]
    pub fn unigram(original: &str, samples: &str, include_original: bool, aggregate: &str) -> Result<f64, JsValue> {
        super::unigram(original, samples, include_original, aggregate).map_err(js)
    }

    #[wasm_bindgen]
    pub fn template_ids() -> Vec<String> {
        super::template_ids()
    }

    #[wasm_bindgen]
    pub fn render_prompt(template_id: &str, claim: &str, reference: &str) -> Result<String, JsValue> {
        super::render_prompt(template_id, claim, reference).map_err(js)
    }

    #[wasm_bindgen]
    pub fn rate(hallucinations: u64, total: u64) -> Result<String, JsValue> {
        super::rate(hallucinations, total).map_err(js)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> Synthetic {
        Synthetic { seed: 1, per_class: 50, k_max: 13, p_hallucinatory: 0.3, p_factual: 0.03, p_missing: 0.05 }
    }

    #[test]
    fn ablation_is_seeded_and_recall_rises() {
        let a = ablation(params()).unwrap();
        let b = ablation(params()).unwrap();
        assert_eq!(a.points, b.points);
        assert_eq!(a.points.len(), 13);
        assert!(a.points.windows(2).all(|w| w[1].recall >= w[0].recall));
        assert!(a.svg.starts_with("<svg"));
        assert_ne!(ablation(Synthetic { seed: 2, ..params() }).unwrap().points, a.points);
    }

    #[test]
    fn ablation_rejects_bad_input() {
        assert!(ablation(Synthetic { k_max: 0, ..params() }).is_err());
        assert!(ablation(Synthetic { p_factual: 1.5, ..params() }).is_err());
    }

    #[test]
    fn unigram_matches_hand_value() {
        let got = unigram("a", "a a b\n\n", true, "mean").unwrap();
        assert!((got - -(4.0f64 / 7.0).ln()).abs() < 1e-12);
        assert!(unigram("a", "a", true, "median").is_err());
    }

    #[test]
    fn prompts_and_rate() {
        assert!(template_ids().iter().any(|t| t == "classify.p0"));
        let p = render_prompt("classify.p0", "The claim.", "The reference.").unwrap();
        assert!(p.contains("The claim.") && p.contains("The reference."));
        assert!(render_prompt("nope", "", "").is_err());
        assert_eq!(rate(181, 907).unwrap(), "19.96");
        assert!(rate(1, 0).is_err());
        assert!(rate(2, 1).is_err());
    }
}

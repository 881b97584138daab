//! In-browser demo: explain a sentence, watch it under output noise, and
//! sample LIME condition numbers.
//!
//! The model is trained on the built-in synthetic sentiment corpus the
//! first time it is needed and kept for the page's lifetime.

use std::cell::OnceCell;

use explstab::attribution::{explain, ExplainerKind, Explanation};
use explstab::blackbox::{EmbeddingClassifier, ProbabilityModel, TrainConfig};
use explstab::conditioning::{run_simulation, ProximityWeight, SimulationConfig};
use explstab::corpus::{self, Document, Vocabulary};
use explstab::metrics::{kendall_tau, topk_overlap, DEFAULT_K};
use explstab::perturbation::{
    level_to_sigma2, wrap_output_perturbed, NoiseMode, PerturbationSource, PerturbationSpec,
};
use explstab::synthetic::{generate, SyntheticSpec};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const MAX_LENGTH: usize = 30;

struct Demo {
    vocab: Vocabulary,
    model: EmbeddingClassifier,
}

thread_local! {
    static DEMO: OnceCell<Demo> = const { OnceCell::new() };
}

fn build_demo() -> Demo {
    let examples = generate(&SyntheticSpec {
        count: 600,
        ..SyntheticSpec::default()
    })
    .expect("built-in corpus");
    let vocab = Vocabulary::build(&examples, 0).expect("nonempty vocabulary");
    let docs: Vec<Document> = examples
        .iter()
        .filter_map(|e| corpus::encode(e, &vocab, MAX_LENGTH).ok())
        .collect();
    let config = TrainConfig {
        dim: 16,
        epochs: 10,
        ..TrainConfig::default()
    };
    let (model, _) = EmbeddingClassifier::train(&docs, 2, &config).expect("training succeeds");
    Demo { vocab, model }
}

fn with_demo<T>(f: impl FnOnce(&Demo) -> T) -> T {
    DEMO.with(|cell| f(cell.get_or_init(build_demo)))
}

#[derive(Serialize)]
struct Scored {
    tokens: Vec<String>,
    scores: Vec<f64>,
    ranking: Vec<usize>,
}

impl Scored {
    fn new(doc: &Document, e: &Explanation) -> Self {
        Self {
            tokens: doc.tokens.clone(),
            scores: e.scores.clone(),
            ranking: e.ranking.clone(),
        }
    }
}

#[derive(Serialize)]
struct ExplainOut {
    label: &'static str,
    probability: f64,
    #[serde(flatten)]
    explanation: Scored,
}

#[derive(Serialize)]
struct CompareOut {
    sigma2: f64,
    baseline: Scored,
    perturbed: Scored,
    kendall_tau: Option<f64>,
    topk_overlap: f64,
    k: usize,
}

#[derive(Serialize)]
struct KappaOut {
    length: usize,
    kappas: Vec<f64>,
    mean: f64,
    min: f64,
    max: f64,
    well_conditioned: usize,
}

fn label_name(c: usize) -> &'static str {
    if c == 1 {
        "positive"
    } else {
        "negative"
    }
}

fn parse_method(method: &str) -> Result<ExplainerKind, String> {
    method.parse().map_err(|e: explstab::Error| e.to_string())
}

pub fn explain_json(text: &str, method: &str, budget: usize, seed: u64) -> Result<String, String> {
    let kind = parse_method(method)?;
    with_demo(|demo| {
        let doc =
            corpus::encode_text(text, 0, &demo.vocab, MAX_LENGTH).map_err(|e| e.to_string())?;
        let p = demo
            .model
            .predict_proba(&doc.token_ids, None)
            .map_err(|e| e.to_string())?;
        let target = p.argmax();
        let e = explain(kind, &demo.model, &doc.token_ids, target, budget, seed)
            .map_err(|e| e.to_string())?;
        let out = ExplainOut {
            label: label_name(target),
            probability: p.prob(target),
            explanation: Scored::new(&doc, &e),
        };
        serde_json::to_string(&out).map_err(|e| e.to_string())
    })
}

pub fn compare_json(
    text: &str,
    method: &str,
    level: u8,
    budget: usize,
    seed: u64,
) -> Result<String, String> {
    let kind = parse_method(method)?;
    with_demo(|demo| {
        let doc =
            corpus::encode_text(text, 0, &demo.vocab, MAX_LENGTH).map_err(|e| e.to_string())?;
        let ids = &doc.token_ids;
        let target = demo
            .model
            .predict_proba(ids, None)
            .map_err(|e| e.to_string())?
            .argmax();
        let spec = PerturbationSpec::new(PerturbationSource::Output, level, seed ^ 0x9e37_79b9)
            .map_err(|e| e.to_string())?;
        let noisy = wrap_output_perturbed(&demo.model, spec, NoiseMode::default())
            .map_err(|e| e.to_string())?;
        let base =
            explain(kind, &demo.model, ids, target, budget, seed).map_err(|e| e.to_string())?;
        let pert = explain(kind, &noisy, ids, target, budget, seed).map_err(|e| e.to_string())?;
        let k = DEFAULT_K.min(ids.len());
        let out = CompareOut {
            sigma2: level_to_sigma2(PerturbationSource::Output, level)
                .map_err(|e| e.to_string())?,
            kendall_tau: kendall_tau(&base.scores, &pert.scores).ok(),
            topk_overlap: topk_overlap(&base.ranking, &pert.ranking, k)
                .map_err(|e| e.to_string())?,
            k,
            baseline: Scored::new(&doc, &base),
            perturbed: Scored::new(&doc, &pert),
        };
        serde_json::to_string(&out).map_err(|e| e.to_string())
    })
}

pub fn kappa_json(
    length: usize,
    iterations: usize,
    m: usize,
    pi: &str,
    seed: u64,
) -> Result<String, String> {
    let config = SimulationConfig {
        lengths: vec![length],
        iterations,
        m,
        seed,
        weight: pi.parse::<ProximityWeight>().map_err(|e| e.to_string())?,
    };
    let report = run_simulation(&config).map_err(|e| e.to_string())?;
    let s = &report.summary()[0];
    let out = KappaOut {
        length,
        kappas: report.kappas(length),
        mean: s.mean,
        min: s.min,
        max: s.max,
        well_conditioned: s.well_conditioned,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

/// Scores for each token of `text`, as JSON.
#[wasm_bindgen]
pub fn explain_sentence(
    text: &str,
    method: &str,
    budget: usize,
    seed: u64,
) -> Result<String, JsError> {
    explain_json(text, method, budget, seed).map_err(|e| JsError::new(&e))
}

/// Baseline and output-perturbed explanations plus their agreement, as JSON.
#[wasm_bindgen]
pub fn compare_output_noise(
    text: &str,
    method: &str,
    level: u8,
    budget: usize,
    seed: u64,
) -> Result<String, JsError> {
    compare_json(text, method, level, budget, seed).map_err(|e| JsError::new(&e))
}

/// Condition numbers of `iterations` random LIME kernel matrices, as JSON.
#[wasm_bindgen]
pub fn kappa_distribution(
    length: usize,
    iterations: usize,
    m: usize,
    pi: &str,
    seed: u64,
) -> Result<String, JsError> {
    kappa_json(length, iterations, m, pi, seed).map_err(|e| JsError::new(&e))
}

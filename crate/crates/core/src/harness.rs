//! The paired comparison experiment.
//!
//! For every evaluation document, explainer and seed a baseline explanation
//! is computed on the unperturbed model. Each (source, level) branch then
//! re-explains the same document with the same mask seed, either through a
//! model with perturbed embeddings (input) or through the output-perturbing
//! wrapper (output), and the two explanations are compared.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attribution::{explain, ExplainerKind, Explanation, DEFAULT_SAMPLES};
use crate::blackbox::{EmbeddingClassifier, PerturbedModel, ProbabilityModel, TrainConfig};
use crate::corpus::{self, Document, RawExample, Vocabulary};
use crate::error::{Error, Result};
use crate::metrics::{self, kendall_tau, topk_overlap, DiscrepancyRecord, SummaryRow, DEFAULT_K};
use crate::perturbation::{
    level_to_sigma2, perturb_probs, wrap_output_perturbed, NoiseMode, PerturbationSource,
    PerturbationSpec,
};
use crate::seed;

/// Caps on the desk-scale subsets.
pub const MAX_TRAIN: usize = 2000;
pub const MAX_EVAL: usize = 200;

// Labels for seed derivation paths. Noise seeds do not depend on the level,
// so higher levels rescale the same draw.
const SPLIT: u64 = 1;
const MASKS: u64 = 2;
const INPUT_NOISE: u64 = 3;
const OUTPUT_NOISE: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// TSV dataset; split into train and eval unless `eval_dataset` is set.
    pub dataset: PathBuf,
    pub eval_dataset: Option<PathBuf>,
    /// Load a trained model (`model.ckpt` + `vocab.tsv`) instead of training.
    pub model_dir: Option<PathBuf>,
    pub max_length: usize,
    pub vocab_threshold: usize,
    pub model: TrainConfig,
    pub train_count: usize,
    pub eval_doc_count: usize,
    pub split_seed: u64,
    pub explainers: Vec<ExplainerKind>,
    /// Pseudo examples for LIME and Kernel Shapley.
    pub m: usize,
    /// Orderings for Sample Shapley.
    pub permutations: usize,
    pub levels: Vec<u8>,
    pub seeds: Vec<u64>,
    pub k: usize,
    pub noise_mode: NoiseMode,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data/sentiment.tsv"),
            eval_dataset: None,
            model_dir: None,
            max_length: 50,
            vocab_threshold: 0,
            model: TrainConfig::default(),
            train_count: MAX_TRAIN,
            eval_doc_count: 50,
            split_seed: 0,
            explainers: ExplainerKind::ESTIMATORS.to_vec(),
            m: DEFAULT_SAMPLES,
            permutations: 20,
            levels: vec![0, 1, 2, 3, 4],
            seeds: vec![0],
            k: DEFAULT_K,
            noise_mode: NoiseMode::default(),
            out_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: Self = serde_json::from_str(&text)?;
        // relative dataset paths are resolved against the config file
        if let Some(base) = path.parent() {
            for p in [&mut config.dataset]
                .into_iter()
                .chain(config.eval_dataset.as_mut())
                .chain(config.model_dir.as_mut())
            {
                if p.is_relative() && !p.exists() {
                    let candidate = base.join(&*p);
                    if candidate.exists() {
                        *p = candidate;
                    }
                }
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.explainers.is_empty() || self.levels.is_empty() || self.seeds.is_empty() {
            return Err(Error::invalid(
                "explainers, levels and seeds must be nonempty",
            ));
        }
        if self.explainers.contains(&ExplainerKind::ExactShapley) {
            return Err(Error::invalid(
                "exact_shapley is an oracle, not an experiment explainer",
            ));
        }
        if self.m < 2 {
            return Err(Error::invalid("m must be at least 2"));
        }
        if self.permutations == 0 || self.k == 0 || self.max_length == 0 {
            return Err(Error::invalid(
                "permutations, k and max_length must be at least 1",
            ));
        }
        for &level in &self.levels {
            level_to_sigma2(PerturbationSource::Input, level)?;
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    fn budget(&self, kind: ExplainerKind) -> usize {
        match kind {
            ExplainerKind::SampleShapley => self.permutations,
            _ => self.m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub code_version: String,
    pub train_docs: usize,
    pub eval_docs: usize,
    pub vocab_size: usize,
    pub train_accuracy: f64,
    pub eval_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelAccuracy {
    pub source: PerturbationSource,
    pub level: u8,
    pub sigma2: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordCounts {
    /// `docs x explainers x sources x levels x seeds`.
    pub expected: usize,
    /// Records compared at the configured `k`.
    pub complete: usize,
    /// Records of documents shorter than `k`, compared at `k = l`.
    pub flagged: usize,
    /// Comparisons with an undefined Kendall tau (constant scores).
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultsTable {
    pub records: Vec<DiscrepancyRecord>,
    pub summaries: Vec<SummaryRow>,
    pub accuracy: Vec<LevelAccuracy>,
    pub counts: RecordCounts,
    pub provenance: Provenance,
    pub config: ExperimentConfig,
}

/// Everything the comparison needs besides the config.
pub struct Prepared {
    pub vocab: Vocabulary,
    pub model: EmbeddingClassifier,
    pub train: Vec<Document>,
    pub eval: Vec<Document>,
    pub train_accuracy: f64,
}

fn encode_all(examples: &[RawExample], vocab: &Vocabulary, max_length: usize) -> Vec<Document> {
    examples
        .iter()
        .filter_map(|ex| match corpus::encode(ex, vocab, max_length) {
            Ok(d) => Some(d),
            Err(e) => {
                log::warn!("dropping example: {e}");
                None
            }
        })
        .collect()
}

/// Loads data, builds the vocabulary and trains (or loads) the model.
pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    let all = corpus::load_dataset(&config.dataset)?;
    let (train_raw, eval_raw) = match &config.eval_dataset {
        Some(path) => {
            let eval = corpus::load_dataset(path)?;
            let train: Vec<RawExample> = all
                .into_iter()
                .take(config.train_count.min(MAX_TRAIN))
                .collect();
            let eval: Vec<RawExample> = eval
                .into_iter()
                .take(config.eval_doc_count.min(MAX_EVAL))
                .collect();
            (train, eval)
        }
        None => {
            let mut idx: Vec<usize> = (0..all.len()).collect();
            rand::seq::SliceRandom::shuffle(
                &mut idx[..],
                &mut seed::rng(seed::derive(config.split_seed, &[SPLIT])),
            );
            let n_eval = config.eval_doc_count.min(MAX_EVAL).min(all.len() / 2);
            let eval = idx[..n_eval].iter().map(|&i| all[i].clone()).collect();
            let train = idx[n_eval..]
                .iter()
                .take(config.train_count.min(MAX_TRAIN))
                .map(|&i| all[i].clone())
                .collect();
            (train, eval)
        }
    };
    if train_raw.is_empty() {
        return Err(Error::invalid("no training examples"));
    }

    let (vocab, model, train, train_accuracy) = match &config.model_dir {
        Some(dir) => {
            let vocab = Vocabulary::read_dump(dir.join("vocab.tsv"))?;
            let model = EmbeddingClassifier::load(dir.join("model.ckpt"))?;
            let train = encode_all(&train_raw, &vocab, config.max_length);
            let acc = crate::blackbox::accuracy(&model, &train)?;
            (vocab, model, train, acc)
        }
        None => {
            let vocab = Vocabulary::build(&train_raw, config.vocab_threshold)?;
            let train = encode_all(&train_raw, &vocab, config.max_length);
            let classes = corpus::num_classes(&train_raw).max(corpus::num_classes(&eval_raw));
            let init = EmbeddingClassifier::init(
                vocab.len(),
                config.model.dim,
                classes,
                config.model.seed,
            )?;
            let (model, report) = init.fit(&train, &config.model)?;
            log::info!(
                "trained on {} docs: accuracy {:.3}, loss {:.4}",
                train.len(),
                report.accuracy,
                report.final_loss
            );
            (vocab, model, train, report.accuracy)
        }
    };
    let eval = encode_all(&eval_raw, &vocab, config.max_length);
    Ok(Prepared {
        vocab,
        model,
        train,
        eval,
        train_accuracy,
    })
}

struct DocOutcome {
    records: Vec<DiscrepancyRecord>,
    flagged: usize,
    skipped: usize,
}

struct Branches {
    /// Perturbed models keyed by (seed, level).
    input: BTreeMap<(u64, u8), PerturbedModel>,
}

fn compare_doc(
    config: &ExperimentConfig,
    model: &EmbeddingClassifier,
    branches: &Branches,
    doc_id: usize,
    doc: &Document,
) -> Result<DocOutcome> {
    let ids = &doc.token_ids;
    let l = ids.len();
    let p_full = model.predict_proba(ids, None)?;
    let target = p_full.argmax();
    let k = config.k.min(l);
    let mut out = DocOutcome {
        records: Vec::new(),
        flagged: 0,
        skipped: 0,
    };

    for (e_idx, &kind) in config.explainers.iter().enumerate() {
        let budget = config.budget(kind);
        for &run_seed in &config.seeds {
            let mask_seed = seed::derive(run_seed, &[MASKS, doc_id as u64, e_idx as u64]);
            let baseline = explain(kind, model, ids, target, budget, mask_seed)?;
            for source in PerturbationSource::ALL {
                for &level in &config.levels {
                    let sigma2 = level_to_sigma2(source, level)?;
                    let (counterpart, flipped) = match source {
                        PerturbationSource::Input => {
                            let noisy = &branches.input[&(run_seed, level)];
                            let flipped = noisy.predict_proba(ids, None)?.argmax() != target;
                            (
                                explain(kind, noisy, ids, target, budget, mask_seed)?,
                                flipped,
                            )
                        }
                        PerturbationSource::Output => {
                            let noise_seed = seed::derive(
                                run_seed,
                                &[OUTPUT_NOISE, doc_id as u64, e_idx as u64],
                            );
                            let spec = PerturbationSpec::new(source, level, noise_seed)?;
                            let wrapped = wrap_output_perturbed(model, spec, config.noise_mode)?;
                            let flipped = perturb_probs(&p_full, sigma2, &wrapped.noise_for(0))?
                                .argmax()
                                != target;
                            (
                                explain(kind, &wrapped, ids, target, budget, mask_seed)?,
                                flipped,
                            )
                        }
                    };
                    match compare(&baseline, &counterpart, k) {
                        Some((tau, overlap)) => {
                            if k < config.k {
                                out.flagged += 1;
                            }
                            out.records.push(DiscrepancyRecord {
                                doc_id,
                                explainer: kind,
                                source,
                                level,
                                sigma2,
                                seed: run_seed,
                                kendall_tau: tau,
                                topk_overlap: overlap,
                                k,
                                argmax_flipped: flipped,
                            });
                        }
                        None => out.skipped += 1,
                    }
                }
            }
        }
    }
    Ok(out)
}

fn compare(a: &Explanation, b: &Explanation, k: usize) -> Option<(f64, f64)> {
    let tau = kendall_tau(&a.scores, &b.scores).ok()?;
    let overlap = topk_overlap(&a.ranking, &b.ranking, k).ok()?;
    Some((tau, overlap))
}

fn level_accuracy(
    config: &ExperimentConfig,
    model: &EmbeddingClassifier,
    branches: &Branches,
    eval: &[Document],
) -> Result<Vec<LevelAccuracy>> {
    let mut rows = Vec::new();
    let run_seed = config.seeds[0];
    for source in PerturbationSource::ALL {
        for &level in &config.levels {
            let sigma2 = level_to_sigma2(source, level)?;
            let mut correct = 0usize;
            for (doc_id, d) in eval.iter().enumerate() {
                let pred = match source {
                    PerturbationSource::Input => {
                        branches.input[&(run_seed, level)].predict_proba(&d.token_ids, None)?
                    }
                    PerturbationSource::Output => {
                        let p = model.predict_proba(&d.token_ids, None)?;
                        let noise = crate::perturbation::noise_vector(
                            sigma2,
                            p.num_classes(),
                            seed::derive(run_seed, &[OUTPUT_NOISE, doc_id as u64, u64::MAX]),
                        );
                        perturb_probs(&p, sigma2, &noise)?
                    }
                };
                correct += usize::from(pred.argmax() == d.label);
            }
            rows.push(LevelAccuracy {
                source,
                level,
                sigma2,
                accuracy: if eval.is_empty() {
                    0.0
                } else {
                    correct as f64 / eval.len() as f64
                },
            });
        }
    }
    Ok(rows)
}

pub fn run_comparison(config: &ExperimentConfig) -> Result<ResultsTable> {
    config.validate()?;
    let prepared = prepare(config)?;
    run_prepared(config, &prepared)
}

/// Runs the comparison on already prepared data and model.
pub fn run_prepared(config: &ExperimentConfig, prepared: &Prepared) -> Result<ResultsTable> {
    config.validate()?;
    let model = &prepared.model;
    let eval = &prepared.eval;

    let mut input = BTreeMap::new();
    for &run_seed in &config.seeds {
        for &level in &config.levels {
            let sigma2 = level_to_sigma2(PerturbationSource::Input, level)?;
            let noise_seed = seed::derive(run_seed, &[INPUT_NOISE]);
            input.insert((run_seed, level), model.perturb(sigma2, noise_seed)?);
        }
    }
    let branches = Branches { input };

    #[cfg(feature = "parallel")]
    let outcomes: Vec<Result<DocOutcome>> = {
        use rayon::prelude::*;
        eval.par_iter()
            .enumerate()
            .map(|(i, d)| compare_doc(config, model, &branches, i, d))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<Result<DocOutcome>> = eval
        .iter()
        .enumerate()
        .map(|(i, d)| compare_doc(config, model, &branches, i, d))
        .collect();

    let mut records = Vec::new();
    let mut counts = RecordCounts {
        expected: eval.len()
            * config.explainers.len()
            * 2
            * config.levels.len()
            * config.seeds.len(),
        ..Default::default()
    };
    for outcome in outcomes {
        let outcome = outcome?;
        counts.flagged += outcome.flagged;
        counts.skipped += outcome.skipped;
        records.extend(outcome.records);
    }
    counts.complete = records.len() - counts.flagged;
    if counts.skipped > 0 {
        log::warn!(
            "{} comparisons skipped (undefined kendall tau)",
            counts.skipped
        );
    }

    let summaries = if records.is_empty() {
        Vec::new()
    } else {
        metrics::aggregate(&records)?
    };
    let accuracy = level_accuracy(config, model, &branches, eval)?;
    let provenance = Provenance {
        config_hash: config.hash(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        train_docs: prepared.train.len(),
        eval_docs: eval.len(),
        vocab_size: prepared.vocab.len(),
        train_accuracy: prepared.train_accuracy,
        eval_accuracy: crate::blackbox::accuracy(model, eval)?,
    };
    Ok(ResultsTable {
        records,
        summaries,
        accuracy,
        counts,
        provenance,
        config: config.clone(),
    })
}

pub const RECORDS_HEADER: [&str; 10] = [
    "doc_id",
    "explainer",
    "source",
    "level",
    "sigma2",
    "seed",
    "kendall_tau",
    "topk_overlap",
    "k",
    "argmax_flipped",
];

pub const SUMMARY_HEADER: [&str; 7] = [
    "explainer",
    "source",
    "level",
    "metric",
    "mean",
    "stderr",
    "n",
];

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?)
}

/// Writes `records.csv`, `summary.csv`, `accuracy.csv`, `config.json` and
/// `provenance.json` into `dir`.
pub fn emit_results(table: &ResultsTable, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let records_path = dir.join("records.csv");
    let mut w = csv_writer(&records_path)?;
    w.write_record(RECORDS_HEADER)?;
    for r in &table.records {
        w.write_record([
            r.doc_id.to_string(),
            r.explainer.to_string(),
            r.source.to_string(),
            r.level.to_string(),
            r.sigma2.to_string(),
            r.seed.to_string(),
            r.kendall_tau.to_string(),
            r.topk_overlap.to_string(),
            r.k.to_string(),
            r.argmax_flipped.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&records_path, e))?;

    let summary_path = dir.join("summary.csv");
    let mut w = csv_writer(&summary_path)?;
    w.write_record(SUMMARY_HEADER)?;
    for s in &table.summaries {
        w.write_record([
            s.explainer.to_string(),
            s.source.to_string(),
            s.level.to_string(),
            s.metric.to_string(),
            s.mean.to_string(),
            s.stderr.to_string(),
            s.n.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&summary_path, e))?;

    let accuracy_path = dir.join("accuracy.csv");
    let mut w = csv_writer(&accuracy_path)?;
    w.write_record(["source", "level", "sigma2", "accuracy"])?;
    for a in &table.accuracy {
        w.write_record([
            a.source.to_string(),
            a.level.to_string(),
            a.sigma2.to_string(),
            a.accuracy.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&accuracy_path, e))?;

    let config_path = dir.join("config.json");
    let json = serde_json::to_string_pretty(&table.config)? + "\n";
    fs::write(&config_path, json).map_err(|e| Error::io(&config_path, e))?;

    let provenance_path = dir.join("provenance.json");
    let json = serde_json::to_string_pretty(&serde_json::json!({
        "provenance": table.provenance,
        "counts": table.counts,
    }))? + "\n";
    fs::write(&provenance_path, json).map_err(|e| Error::io(&provenance_path, e))?;

    Ok(vec![
        records_path,
        summary_path,
        accuracy_path,
        config_path,
        provenance_path,
    ])
}

/// Parses a `records.csv` back into records.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<DiscrepancyRecord>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().ne(RECORDS_HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: format!("unexpected records header {headers:?}"),
        });
    }
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let bad = |field: &str| Error::Parse {
            line: i + 2,
            message: format!("bad {field}"),
        };
        let num =
            |idx: usize, field: &str| -> Result<f64> { row[idx].parse().map_err(|_| bad(field)) };
        out.push(DiscrepancyRecord {
            doc_id: row[0].parse().map_err(|_| bad("doc_id"))?,
            explainer: row[1].parse().map_err(|_| bad("explainer"))?,
            source: row[2].parse().map_err(|_| bad("source"))?,
            level: row[3].parse().map_err(|_| bad("level"))?,
            sigma2: num(4, "sigma2")?,
            seed: row[5].parse().map_err(|_| bad("seed"))?,
            kendall_tau: num(6, "kendall_tau")?,
            topk_overlap: num(7, "topk_overlap")?,
            k: row[8].parse().map_err(|_| bad("k"))?,
            argmax_flipped: row[9].parse().map_err(|_| bad("argmax_flipped"))?,
        });
    }
    Ok(out)
}

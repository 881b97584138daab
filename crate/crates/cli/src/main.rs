use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use explstab::attribution::{explain, ExplainerKind, DEFAULT_SAMPLES};
use explstab::blackbox::{EmbeddingClassifier, ProbabilityModel};
use explstab::conditioning::{run_simulation, ProximityWeight, SimulationConfig};
use explstab::corpus::{self, Vocabulary};
use explstab::harness::{self, ExperimentConfig};
use explstab::synthetic::{self, SyntheticSpec};

const MODEL_FILE: &str = "model.ckpt";
const VOCAB_FILE: &str = "vocab.tsv";

#[derive(Parser)]
#[command(
    name = "explstab",
    version,
    about = "Explanation stability under input and output perturbation"
)]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's seed(s).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the classifier and write `model.ckpt` and `vocab.tsv`.
    Train {
        /// Training TSV; defaults to the config's dataset.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Explain one document and print per-token scores, highest first.
    Explain {
        #[arg(long, value_enum, default_value = "lime")]
        method: Method,
        #[arg(long)]
        text: String,
        /// Directory holding `model.ckpt` and `vocab.tsv`.
        #[arg(long, default_value = "model")]
        model_dir: PathBuf,
        /// Class to explain; defaults to the predicted one.
        #[arg(long)]
        target: Option<usize>,
        /// Pseudo examples (LIME, Kernel Shapley) or orderings (Sample Shapley).
        #[arg(long, default_value_t = DEFAULT_SAMPLES)]
        budget: usize,
    },
    /// Run the input-vs-output comparison experiment.
    Compare,
    /// Condition numbers of LIME's weighted design matrix.
    Conditioning {
        #[arg(long, value_delimiter = ',', default_value = "20,30,40")]
        lengths: Vec<usize>,
        #[arg(long, default_value_t = 500)]
        iters: usize,
        #[arg(long, default_value_t = 200)]
        m: usize,
        /// Proximity weight: `distance` or `similarity`.
        #[arg(long, default_value = "distance")]
        pi: String,
    },
    /// Write a synthetic labelled corpus.
    Synth {
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 1200)]
        count: usize,
    },
    /// Print the version.
    Version,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Lime,
    KernelShap,
    SampleShapley,
    ExactShapley,
}

impl From<Method> for ExplainerKind {
    fn from(m: Method) -> Self {
        match m {
            Method::Lime => ExplainerKind::Lime,
            Method::KernelShap => ExplainerKind::KernelShap,
            Method::SampleShapley => ExplainerKind::SampleShapley,
            Method::ExactShapley => ExplainerKind::ExactShapley,
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)
            .with_context(|| format!("reading config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seeds = vec![seed];
        config.model.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    Ok(config)
}

fn train(cli: &Cli, data: Option<&Path>) -> Result<()> {
    let mut config = load_config(cli)?;
    if let Some(data) = data {
        config.dataset = data.to_path_buf();
    }
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("model"));
    let prepared = harness::prepare(&config)?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    prepared.model.save(out.join(MODEL_FILE))?;
    prepared.vocab.write_dump(out.join(VOCAB_FILE))?;
    let eval_acc = explstab::blackbox::accuracy(&prepared.model, &prepared.eval)?;
    println!(
        "trained on {} docs, vocab {}: train accuracy {:.4}, held-out accuracy {:.4}",
        prepared.train.len(),
        prepared.vocab.len(),
        prepared.train_accuracy,
        eval_acc
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn explain_text(
    cli: &Cli,
    method: Method,
    text: &str,
    model_dir: &Path,
    target: Option<usize>,
    budget: usize,
) -> Result<()> {
    let config = load_config(cli)?;
    let model = EmbeddingClassifier::load(model_dir.join(MODEL_FILE))?;
    let vocab = Vocabulary::read_dump(model_dir.join(VOCAB_FILE))?;
    let doc = corpus::encode_text(text, 0, &vocab, config.max_length)?;
    let probs = model.predict_proba(&doc.token_ids, None)?;
    let target = target.unwrap_or_else(|| probs.argmax());
    let seed = cli.seed.unwrap_or(config.seeds[0]);
    let e = explain(method.into(), &model, &doc.token_ids, target, budget, seed)?;
    println!("class {target} (p = {:.4})", probs.prob(target));
    for &i in &e.ranking {
        println!("{}\t{:+.6}", doc.tokens[i], e.scores[i]);
    }
    Ok(())
}

fn compare(cli: &Cli) -> Result<()> {
    if cli.config.is_none() {
        bail!("compare needs --config <path>");
    }
    let config = load_config(cli)?;
    let table = harness::run_comparison(&config)?;
    let files = harness::emit_results(&table, &config.out_dir)?;
    let c = &table.counts;
    println!(
        "{} records ({} complete, {} flagged short, {} skipped) from {} docs",
        table.records.len(),
        c.complete,
        c.flagged,
        c.skipped,
        table.provenance.eval_docs
    );
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn conditioning(cli: &Cli, lengths: &[usize], iters: usize, m: usize, pi: &str) -> Result<()> {
    let config = SimulationConfig {
        lengths: lengths.to_vec(),
        iterations: iters,
        m,
        seed: cli.seed.unwrap_or(0),
        weight: pi.parse::<ProximityWeight>()?,
    };
    let report = run_simulation(&config)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("results"));
    report.write_csv(&out)?;
    println!("length\tmean\tmin\tmax\tkappa<30");
    for s in report.summary() {
        println!(
            "{}\t{:.3}\t{:.3}\t{:.3}\t{}/{}",
            s.length, s.mean, s.min, s.max, s.well_conditioned, iters
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn synth(cli: &Cli, classes: usize, count: usize) -> Result<()> {
    let spec = SyntheticSpec {
        classes,
        count,
        seed: cli.seed.unwrap_or(SyntheticSpec::default().seed),
        ..SyntheticSpec::default()
    };
    let examples = synthetic::generate(&spec)?;
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("data/synthetic.tsv"));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    corpus::write_dataset(&out, &examples)?;
    println!("wrote {} examples to {}", examples.len(), out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train { data } => train(cli, data.as_deref()),
        Command::Explain {
            method,
            text,
            model_dir,
            target,
            budget,
        } => explain_text(cli, *method, text, model_dir, *target, *budget),
        Command::Compare => compare(cli),
        Command::Conditioning {
            lengths,
            iters,
            m,
            pi,
        } => conditioning(cli, lengths, *iters, *m, pi),
        Command::Synth { classes, count } => synth(cli, *classes, *count),
        Command::Version => {
            println!("explstab {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

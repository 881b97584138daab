//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! Exits nonzero when a criterion fails, except for those listed in
//! `KNOWN_GAPS`, which are still reported as FAIL. Set
//! `EXPLSTAB_ACCEPTANCE_STRICT=1` to make every failure fatal.

mod common;

use std::collections::{BTreeMap, HashSet};
use std::time::{Duration, Instant};

use common::TableGame;
use explstab::attribution::{
    all_orders, exact_shapley, kernel_shap_with_masks, sample_shapley_with_orders, ExplainerKind,
    MaskDesign, MaskMatrix,
};
use explstab::blackbox::ProbabilityVector;
use explstab::conditioning::{run_simulation, SimulationConfig, WELL_CONDITIONED};
use explstab::harness::{emit_results, run_comparison, ExperimentConfig, ResultsTable};
use explstab::metrics::{kendall_tau, topk_overlap};
use explstab::perturbation::{level_to_sigma2, noise_vector, perturb_probs, PerturbationSource};
use explstab::seed;
use rand::seq::SliceRandom;
use rand::Rng;

const OUTPUT_MIN_OVERLAP: f64 = 0.95;
const OUTPUT_MIN_TAU: f64 = 0.90;
const OUTPUT_MIN_DOCS: usize = 30;
const OUTPUT_MAX_RUNTIME: Duration = Duration::from_secs(600);

const GAP_MIN: f64 = 0.05;
const GAP_FROM_LEVEL: u8 = 2;
const INPUT_TAU_MAX_INVERSION: f64 = 0.02;

const KAPPA_SHARE_BELOW_8: f64 = 0.95;
const KAPPA_MAX: f64 = 13.0;
const KAPPA_MAX_RUNTIME: Duration = Duration::from_secs(300);

const KERNEL_SHAP_TOL: f64 = 1e-4;
const SAMPLE_SHAPLEY_TOL: f64 = 1e-9;
const EFFICIENCY_TOL: f64 = 1e-9;
const SIMPLEX_TOL: f64 = 1e-9;
const SIMPLEX_DRAWS: usize = 10_000;

const KNOWN_GAPS: &[&str] = &["output-stability"];

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn check(name: &'static str, pass: bool, detail: String) -> Check {
    Check { name, pass, detail }
}

fn experiment_config(dir: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        dataset: common::write_synthetic(dir, 1200, 17),
        eval_doc_count: 50,
        explainers: ExplainerKind::ESTIMATORS.to_vec(),
        seeds: vec![0, 1, 2],
        out_dir: dir.join("results"),
        ..ExperimentConfig::default()
    }
}

/// Mean (tau, overlap) per (source, level), pooled over explainers, docs and seeds.
fn level_means(table: &ResultsTable) -> BTreeMap<(PerturbationSource, u8), (f64, f64)> {
    let mut sums: BTreeMap<(PerturbationSource, u8), (f64, f64, usize)> = BTreeMap::new();
    for r in &table.records {
        let e = sums.entry((r.source, r.level)).or_default();
        e.0 += r.kendall_tau;
        e.1 += r.topk_overlap;
        e.2 += 1;
    }
    sums.into_iter()
        .map(|(k, (t, o, n))| (k, (t / n as f64, o / n as f64)))
        .collect()
}

fn output_stability(table: &ResultsTable, elapsed: Duration) -> Check {
    let means = level_means(table);
    let mut pass = table.provenance.eval_docs >= OUTPUT_MIN_DOCS && elapsed <= OUTPUT_MAX_RUNTIME;
    let mut parts = Vec::new();
    for level in 0..=4u8 {
        let (tau, overlap) = means[&(PerturbationSource::Output, level)];
        pass &= tau >= OUTPUT_MIN_TAU && overlap >= OUTPUT_MIN_OVERLAP;
        parts.push(format!("L{level} tau={tau:.3} top5={overlap:.3}"));
    }
    check(
        "output-stability",
        pass,
        format!(
            "{} docs, {:.1}s; {} (need tau>={OUTPUT_MIN_TAU}, top5>={OUTPUT_MIN_OVERLAP})",
            table.provenance.eval_docs,
            elapsed.as_secs_f64(),
            parts.join(", ")
        ),
    )
}

fn input_output_gap(table: &ResultsTable) -> Check {
    let means = level_means(table);
    let mut pass = true;
    let mut parts = Vec::new();
    for level in GAP_FROM_LEVEL..=4 {
        let (ti, oi) = means[&(PerturbationSource::Input, level)];
        let (to, oo) = means[&(PerturbationSource::Output, level)];
        pass &= to - ti >= GAP_MIN && oo - oi >= GAP_MIN;
        parts.push(format!("L{level} dtau={:.3} dtop5={:.3}", to - ti, oo - oi));
    }
    let taus: Vec<f64> = (0..=4u8)
        .map(|l| means[&(PerturbationSource::Input, l)].0)
        .collect();
    let rises: Vec<f64> = taus
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|d| *d > 0.0)
        .collect();
    let monotone = rises.is_empty() || (rises.len() == 1 && rises[0] <= INPUT_TAU_MAX_INVERSION);
    pass &= monotone;
    let taus: Vec<String> = taus.iter().map(|t| format!("{t:.3}")).collect();
    check(
        "input-output-gap",
        pass,
        format!(
            "{}; input tau by level [{}]",
            parts.join(", "),
            taus.join(", ")
        ),
    )
}

fn conditioning() -> Check {
    let start = Instant::now();
    let report = run_simulation(&SimulationConfig::default()).expect("simulation runs");
    let elapsed = start.elapsed();
    let k20 = report.kappas(20);
    let below_30 = k20.iter().filter(|&&k| k < WELL_CONDITIONED).count();
    let below_8 = k20.iter().filter(|&&k| k < 8.0).count();
    let summary = report.summary();
    let max = summary.iter().map(|s| s.max).fold(f64::MIN, f64::max);
    let means: Vec<f64> = summary.iter().map(|s| s.mean).collect();
    let nondecreasing = means.windows(2).all(|w| w[1] >= w[0]);
    let pass = k20.len() == 500
        && below_30 == k20.len()
        && below_8 as f64 >= KAPPA_SHARE_BELOW_8 * k20.len() as f64
        && max < KAPPA_MAX
        && nondecreasing
        && elapsed <= KAPPA_MAX_RUNTIME;
    let means: Vec<String> = summary
        .iter()
        .map(|s| format!("l={} {:.2}", s.length, s.mean))
        .collect();
    check(
        "conditioning",
        pass,
        format!(
            "l=20: {below_30}/500 < 30, {below_8}/500 < 8; max {max:.2}; means [{}]; {:.1}s",
            means.join(", "),
            elapsed.as_secs_f64()
        ),
    )
}

fn shapley_oracles() -> Check {
    let mut worst_ks = 0.0f64;
    let mut worst_ss = 0.0f64;
    let mut worst_eff = 0.0f64;
    for g in 0..20u64 {
        let l = 2 + (g as usize % 9);
        let game = TableGame::random(l, 31_000 + g);
        let exact = exact_shapley(&game, &game.ids(), 0).unwrap();
        let masks = MaskMatrix::exhaustive(l).unwrap();
        let ks =
            kernel_shap_with_masks(&game, &game.ids(), 0, &masks, MaskDesign::Exhaustive).unwrap();
        for (a, b) in ks.scores.iter().zip(&exact.scores) {
            worst_ks = worst_ks.max((a - b).abs());
        }
        let total: f64 = exact.scores.iter().sum();
        worst_eff = worst_eff.max((total - (game.value((1 << l) - 1) - game.value(0))).abs());
        if l <= 6 {
            let ss = sample_shapley_with_orders(&game, &game.ids(), 0, &all_orders(l)).unwrap();
            for (a, b) in ss.scores.iter().zip(&exact.scores) {
                worst_ss = worst_ss.max((a - b).abs());
            }
        }
    }
    check(
        "shapley-oracles",
        worst_ks <= KERNEL_SHAP_TOL && worst_ss <= SAMPLE_SHAPLEY_TOL && worst_eff <= EFFICIENCY_TOL,
        format!("20 games: kernel max err {worst_ks:.2e}, all-orders max err {worst_ss:.2e}, efficiency max err {worst_eff:.2e}"),
    )
}

fn tau_by_pairs(a: &[f64], b: &[f64]) -> Option<f64> {
    let (mut c, mut d, mut ta, mut tb) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            let sa = (a[i] - a[j]).signum() * f64::from(u8::from(a[i] != a[j]));
            let sb = (b[i] - b[j]).signum() * f64::from(u8::from(b[i] != b[j]));
            match (sa == 0.0, sb == 0.0) {
                (true, true) => {}
                (true, false) => ta += 1,
                (false, true) => tb += 1,
                _ if sa == sb => c += 1,
                _ => d += 1,
            }
        }
    }
    let (na, nb) = ((c + d + tb) as f64, (c + d + ta) as f64);
    (na > 0.0 && nb > 0.0).then(|| ((c - d) as f64 / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

fn metric_oracles() -> Check {
    let mut rng = seed::rng(2024);
    let mut tau_mismatch = 0;
    for _ in 0..100 {
        let l = rng.random_range(2..=50);
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            (0..l)
                .map(|_| {
                    if rng.random_bool(0.3) {
                        f64::from(rng.random_range(-2i32..=2))
                    } else {
                        rng.random_range(-1.0..1.0)
                    }
                })
                .collect()
        };
        let a = draw(&mut rng);
        let b = draw(&mut rng);
        if kendall_tau(&a, &b).ok() != tau_by_pairs(&a, &b) {
            tau_mismatch += 1;
        }
    }
    let mut overlap_mismatch = 0;
    for _ in 0..100 {
        let l = rng.random_range(1..=50);
        let k = rng.random_range(1..=l);
        let mut ra: Vec<usize> = (0..l).collect();
        let mut rb = ra.clone();
        ra.shuffle(&mut rng);
        rb.shuffle(&mut rng);
        let sa: HashSet<usize> = ra[..k].iter().copied().collect();
        let sb: HashSet<usize> = rb[..k].iter().copied().collect();
        let oracle = sa.intersection(&sb).count() as f64 / k as f64;
        if topk_overlap(&ra, &rb, k).unwrap() != oracle {
            overlap_mismatch += 1;
        }
    }
    // "I love classical music": top two {love, classical} vs {classical, music}
    let fig = topk_overlap(&[1, 2, 0, 3], &[2, 3, 1, 0], 2).unwrap();
    check(
        "metric-oracles",
        tau_mismatch == 0 && overlap_mismatch == 0 && fig == 0.5,
        format!("tau mismatches {tau_mismatch}/100, overlap mismatches {overlap_mismatch}/100, top-2 example {fig}"),
    )
}

fn output_perturbation_contract() -> Check {
    let p = ProbabilityVector::new(vec![0.7, 0.3]).unwrap();
    let q = perturb_probs(&p, 0.25, &[0.1, -0.05]).unwrap();
    let example_err = (q.prob(0) - 0.761905)
        .abs()
        .max((q.prob(1) - 0.238095).abs());

    let mut rng = seed::rng(77);
    let mut worst_sum = 0.0f64;
    let mut negatives = 0;
    for i in 0..SIMPLEX_DRAWS {
        let classes = rng.random_range(2..=5);
        let raw: Vec<f64> = (0..classes)
            .map(|_| rng.random_range(0.0..1.0f64).powi(3))
            .collect();
        let total: f64 = raw.iter().sum();
        let p = ProbabilityVector::from_logits(
            &raw.iter()
                .map(|x| (x / total).max(1e-300).ln())
                .collect::<Vec<_>>(),
        );
        let level = (i % 5) as u8;
        let sigma2 = level_to_sigma2(PerturbationSource::Output, level).unwrap();
        let noise = noise_vector(sigma2, classes, i as u64);
        let q = perturb_probs(&p, sigma2, &noise).unwrap();
        worst_sum = worst_sum.max((q.as_slice().iter().sum::<f64>() - 1.0).abs());
        negatives += q.as_slice().iter().filter(|&&x| x < 0.0).count();
    }
    check(
        "output-perturbation-contract",
        example_err <= 1e-6 && worst_sum <= SIMPLEX_TOL && negatives == 0,
        format!(
            "example err {example_err:.1e}; {SIMPLEX_DRAWS} draws up to sigma2=1: max |sum-1| {worst_sum:.1e}, {negatives} negative entries"
        ),
    )
}

fn determinism(config: &ExperimentConfig, first: &ResultsTable, dir: &std::path::Path) -> Check {
    let second = run_comparison(config).expect("replay runs");
    emit_results(first, dir.join("first")).unwrap();
    emit_results(&second, dir.join("second")).unwrap();
    let a = std::fs::read(dir.join("first/records.csv")).unwrap();
    let b = std::fs::read(dir.join("second/records.csv")).unwrap();
    check(
        "determinism",
        a == b && !first.records.is_empty(),
        format!(
            "records.csv {} bytes, replay identical: {}",
            a.len(),
            a == b
        ),
    )
}

fn main() {
    // cargo passes harness flags such as --nocapture; none apply here
    let strict = std::env::var("EXPLSTAB_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let dir = tempfile::tempdir().expect("temp dir");
    let config = experiment_config(dir.path());
    let start = Instant::now();
    let table = run_comparison(&config).expect("comparison runs");
    let elapsed = start.elapsed();

    let checks = vec![
        output_stability(&table, elapsed),
        input_output_gap(&table),
        conditioning(),
        shapley_oracles(),
        metric_oracles(),
        output_perturbation_contract(),
        determinism(&config, &table, dir.path()),
    ];

    let mut fatal = 0;
    println!();
    for c in &checks {
        let known = KNOWN_GAPS.contains(&c.name);
        let tag = match (c.pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known gap)",
            (false, false) => "FAIL",
        };
        println!("{tag:<16} {:<30} {}", c.name, c.detail);
        if !c.pass && (strict || !known) {
            fatal += 1;
        }
    }
    let passed = checks.iter().filter(|c| c.pass).count();
    println!("\nacceptance: {passed}/{} criteria pass\n", checks.len());
    if fatal > 0 {
        std::process::exit(1);
    }
}

//! Explanation discrepancy metrics and their aggregation.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::attribution::ExplainerKind;
use crate::error::{Error, Result};
use crate::perturbation::PerturbationSource;

/// Default top-K size.
pub const DEFAULT_K: usize = 5;

/// Kendall's tau-b, computed with Knight's merge-sort algorithm.
///
/// Ties are exact float equality. Returns an error when either vector is
/// constant (the denominator vanishes).
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "score lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::invalid("kendall tau needs at least two positions"));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::invalid("kendall tau on NaN scores"));
    }

    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| a[i].total_cmp(&a[j]).then(b[i].total_cmp(&b[j])));

    let total_pairs = (n * (n - 1) / 2) as i64;
    let (mut tied_a, mut tied_both) = (0i64, 0i64);
    let mut run_a = 1i64;
    let mut run_ab = 1i64;
    for w in 1..n {
        let (p, q) = (idx[w - 1], idx[w]);
        if a[p] == a[q] {
            run_a += 1;
            if b[p] == b[q] {
                run_ab += 1;
            } else {
                tied_both += run_ab * (run_ab - 1) / 2;
                run_ab = 1;
            }
        } else {
            tied_a += run_a * (run_a - 1) / 2;
            tied_both += run_ab * (run_ab - 1) / 2;
            run_a = 1;
            run_ab = 1;
        }
    }
    tied_a += run_a * (run_a - 1) / 2;
    tied_both += run_ab * (run_ab - 1) / 2;

    // Sorting the a-ordered sequence by b counts the discordant pairs as
    // swaps.
    let mut keys: Vec<f64> = idx.iter().map(|&i| b[i]).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut keys, &mut buf);

    let mut tied_b = 0i64;
    let mut run_b = 1i64;
    for w in 1..n {
        if keys[w - 1] == keys[w] {
            run_b += 1;
        } else {
            tied_b += run_b * (run_b - 1) / 2;
            run_b = 1;
        }
    }
    tied_b += run_b * (run_b - 1) / 2;

    let untied_a = total_pairs - tied_a;
    let untied_b = total_pairs - tied_b;
    if untied_a == 0 || untied_b == 0 {
        return Err(Error::UndefinedCorrelation);
    }
    let concordant_minus_discordant = total_pairs - tied_a - tied_b + tied_both - 2 * swaps;
    Ok(tau_b_from_counts(
        concordant_minus_discordant,
        untied_a,
        untied_b,
    ))
}

/// `(C - D) / sqrt((C + D + T_b) (C + D + T_a))`, clamped to `[-1, 1]`.
pub fn tau_b_from_counts(concordant_minus_discordant: i64, untied_a: i64, untied_b: i64) -> f64 {
    let tau = concordant_minus_discordant as f64 / ((untied_a as f64) * (untied_b as f64)).sqrt();
    tau.clamp(-1.0, 1.0)
}

/// Stable merge sort of `v` returning the number of inversions (pairs with
/// `v[i] > v[j]`, `i < j`).
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> i64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (lo, hi) = v.split_at_mut(mid);
        let (blo, bhi) = buf.split_at_mut(mid);
        merge_count(lo, blo) + merge_count(hi, bhi)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as i64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Fraction of positions shared by the first `k` entries of two rankings.
pub fn topk_overlap(ranking_a: &[usize], ranking_b: &[usize], k: usize) -> Result<f64> {
    let l = ranking_a.len().min(ranking_b.len());
    if k == 0 || k > l {
        return Err(Error::invalid(format!("k = {k} must lie in 1..={l}")));
    }
    let shared = ranking_a[..k]
        .iter()
        .filter(|p| ranking_b[..k].contains(p))
        .count();
    Ok(shared as f64 / k as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyRecord {
    pub doc_id: usize,
    pub explainer: ExplainerKind,
    pub source: PerturbationSource,
    pub level: u8,
    pub sigma2: f64,
    pub seed: u64,
    pub kendall_tau: f64,
    pub topk_overlap: f64,
    pub k: usize,
    pub argmax_flipped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    KendallTau,
    TopkOverlap,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::KendallTau, Metric::TopkOverlap];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::KendallTau => "kendall_tau",
            Self::TopkOverlap => "topk_overlap",
        }
    }

    pub fn of(self, record: &DiscrepancyRecord) -> f64 {
        match self {
            Self::KendallTau => record.kendall_tau,
            Self::TopkOverlap => record.topk_overlap,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub explainer: ExplainerKind,
    pub source: PerturbationSource,
    pub level: u8,
    pub metric: Metric,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

/// Mean and standard error (sample standard deviation over `sqrt(n)`) per
/// (explainer, source, level, metric), ordered by that key.
pub fn aggregate(records: &[DiscrepancyRecord]) -> Result<Vec<SummaryRow>> {
    if records.is_empty() {
        return Err(Error::invalid("no records to aggregate"));
    }
    let mut groups: BTreeMap<(ExplainerKind, PerturbationSource, u8), Vec<&DiscrepancyRecord>> =
        BTreeMap::new();
    for r in records {
        groups
            .entry((r.explainer, r.source, r.level))
            .or_default()
            .push(r);
    }
    let mut rows = Vec::with_capacity(groups.len() * 2);
    for ((explainer, source, level), group) in groups {
        for metric in Metric::ALL {
            let values: Vec<f64> = group.iter().map(|r| metric.of(r)).collect();
            let (mean, stderr) = mean_stderr(&values);
            rows.push(SummaryRow {
                explainer,
                source,
                level,
                metric,
                mean,
                stderr,
                n: values.len(),
            });
        }
    }
    Ok(rows)
}

pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

//! Condition-number simulation for the LIME kernel matrix.
//!
//! Row `j` of the kernel matrix is a pseudo-example mask scaled by its
//! proximity weight. The condition number is `sigma_max / sigma_min`, with
//! singular values taken as square roots of the eigenvalues of the Gram
//! matrix `A^T A` (cyclic Jacobi).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attribution::{cosine_to_full, sample_row};
use crate::error::{Error, Result};
use crate::seed;

/// Condition numbers below this are treated as well conditioned.
pub const WELL_CONDITIONED: f64 = 30.0;
/// Off-diagonal stopping tolerance for Jacobi, relative to the Frobenius
/// norm.
pub const JACOBI_TOL: f64 = 1e-12;
/// Gram eigenvalues below this fraction of the largest count as zero.
pub const RANK_TOL: f64 = 1e-12;

const MAX_SWEEPS: usize = 64;

/// Proximity weight applied to each simulated row.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProximityWeight {
    /// `1 - cos(row, full)`.
    #[default]
    CosineDistance,
    /// `cos(row, full)`.
    CosineSimilarity,
}

impl ProximityWeight {
    pub fn weight(self, ones: usize, l: usize) -> f64 {
        let sim = cosine_to_full(ones, l);
        match self {
            Self::CosineDistance => 1.0 - sim,
            Self::CosineSimilarity => sim,
        }
    }
}

impl std::str::FromStr for ProximityWeight {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "distance" | "cosine_distance" => Ok(Self::CosineDistance),
            "similarity" | "cosine_similarity" => Ok(Self::CosineSimilarity),
            other => Err(Error::invalid(format!(
                "unknown proximity weight {other:?}"
            ))),
        }
    }
}

/// Dense row-major `rows x cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl KernelMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if cols == 0 || rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid(
                "kernel matrix rows must be nonempty and equally sized",
            ));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.cols..(j + 1) * self.cols]
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            data: self.data.iter().map(|v| v * c).collect(),
            ..self.clone()
        }
    }

    /// `A^T A`, row-major `cols x cols`.
    pub fn gram(&self) -> Vec<f64> {
        let n = self.cols;
        let mut g = vec![0.0; n * n];
        for r in self.data.chunks(n) {
            for i in 0..n {
                if r[i] == 0.0 {
                    continue;
                }
                for k in i..n {
                    g[i * n + k] += r[i] * r[k];
                }
            }
        }
        for i in 0..n {
            for k in 0..i {
                g[i * n + k] = g[k * n + i];
            }
        }
        g
    }
}

/// `m` random mask rows over `l` tokens drawn like the explainers' masks
/// (subset size uniform in `1..=l`), each scaled by its proximity weight.
/// The original example is not prepended.
pub fn build_kernel_matrix(
    l: usize,
    m: usize,
    seed: u64,
    weight: ProximityWeight,
) -> Result<KernelMatrix> {
    if l < 2 {
        return Err(Error::invalid("kernel matrix needs l >= 2"));
    }
    if m < l {
        return Err(Error::invalid(format!("need m >= l, got m = {m}, l = {l}")));
    }
    let mut rng = seed::rng(seed);
    let mut data = Vec::with_capacity(m * l);
    for _ in 0..m {
        let row = sample_row(&mut rng, l, l);
        let ones = row.iter().filter(|b| **b).count();
        let pi = weight.weight(ones, l);
        data.extend(row.into_iter().map(|b| if b { pi } else { 0.0 }));
    }
    Ok(KernelMatrix {
        rows: m,
        cols: l,
        data,
    })
}

/// Eigenvalues of a symmetric row-major `n x n` matrix by cyclic Jacobi
/// rotations, in ascending order.
pub fn symmetric_eigenvalues(matrix: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(matrix.len(), n * n, "matrix must be n x n");
    let mut a = matrix.to_vec();
    let frob: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for k in 0..n {
                if i != k {
                    s += a[i * n + k] * a[i * n + k];
                }
            }
        }
        s.sqrt()
    };
    for _ in 0..MAX_SWEEPS {
        if off(&a) <= JACOBI_TOL * frob {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let (app, aqq) = (a[p * n + p], a[q * n + q]);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    eig.sort_by(f64::total_cmp);
    eig
}

/// Singular values in ascending order.
pub fn singular_values(a: &KernelMatrix) -> Vec<f64> {
    symmetric_eigenvalues(&a.gram(), a.cols)
        .into_iter()
        .map(|l| l.max(0.0).sqrt())
        .collect()
}

pub fn condition_number(a: &KernelMatrix) -> Result<f64> {
    let eig = symmetric_eigenvalues(&a.gram(), a.cols);
    let max = eig.last().copied().unwrap_or(0.0);
    let rank = eig.iter().filter(|&&l| l > RANK_TOL * max).count();
    if max <= 0.0 || rank < a.cols {
        return Err(Error::RankDeficient { rank, cols: a.cols });
    }
    Ok((max / eig[0]).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaSample {
    pub length: usize,
    pub iteration: usize,
    pub kappa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KappaBin {
    pub length: usize,
    pub bin_lo: u32,
    pub bin_hi: u32,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthSummary {
    pub length: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub well_conditioned: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub m: usize,
    pub iterations: usize,
    pub weight: ProximityWeight,
    pub samples: Vec<KappaSample>,
    pub bins: Vec<KappaBin>,
}

impl ConditionReport {
    pub fn kappas(&self, length: usize) -> Vec<f64> {
        self.samples
            .iter()
            .filter(|s| s.length == length)
            .map(|s| s.kappa)
            .collect()
    }

    pub fn lengths(&self) -> Vec<usize> {
        let mut ls: Vec<usize> = self.samples.iter().map(|s| s.length).collect();
        ls.dedup();
        ls
    }

    pub fn summary(&self) -> Vec<LengthSummary> {
        self.lengths()
            .into_iter()
            .map(|length| {
                let k = self.kappas(length);
                LengthSummary {
                    length,
                    mean: k.iter().sum::<f64>() / k.len() as f64,
                    min: k.iter().copied().fold(f64::INFINITY, f64::min),
                    max: k.iter().copied().fold(0.0, f64::max),
                    well_conditioned: k.iter().filter(|&&v| v < WELL_CONDITIONED).count(),
                }
            })
            .collect()
    }

    /// Writes `kappa.csv` (length, iteration, kappa) and `kappa_bins.csv`
    /// (length, bin_lo, bin_hi, count).
    pub fn write_csv(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(dir.join("kappa.csv"))?;
        w.write_record(["length", "iteration", "kappa"])?;
        for s in &self.samples {
            w.write_record([
                s.length.to_string(),
                s.iteration.to_string(),
                s.kappa.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(dir.join("kappa.csv"), e))?;

        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(dir.join("kappa_bins.csv"))?;
        w.write_record(["length", "bin_lo", "bin_hi", "count"])?;
        for b in &self.bins {
            w.write_record([
                b.length.to_string(),
                b.bin_lo.to_string(),
                b.bin_hi.to_string(),
                b.count.to_string(),
            ])?;
        }
        w.flush()
            .map_err(|e| Error::io(dir.join("kappa_bins.csv"), e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub lengths: Vec<usize>,
    pub iterations: usize,
    pub m: usize,
    pub seed: u64,
    pub weight: ProximityWeight,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            lengths: vec![20, 30, 40],
            iterations: 500,
            m: 200,
            seed: 0,
            weight: ProximityWeight::CosineDistance,
        }
    }
}

fn draw(config: &SimulationConfig, length: usize, iteration: usize) -> Result<KappaSample> {
    let seed = seed::derive(config.seed, &[length as u64, iteration as u64]);
    let a = build_kernel_matrix(length, config.m, seed, config.weight)?;
    Ok(KappaSample {
        length,
        iteration,
        kappa: condition_number(&a)?,
    })
}

/// Draws `iterations` kernel matrices per length. Each draw has its own
/// derived seed, so parallel and sequential runs agree exactly.
pub fn run_simulation(config: &SimulationConfig) -> Result<ConditionReport> {
    if config.lengths.is_empty() || config.iterations == 0 {
        return Err(Error::invalid(
            "simulation needs at least one length and one iteration",
        ));
    }
    let jobs: Vec<(usize, usize)> = config
        .lengths
        .iter()
        .flat_map(|&l| (0..config.iterations).map(move |i| (l, i)))
        .collect();

    #[cfg(feature = "parallel")]
    let samples: Result<Vec<KappaSample>> = {
        use rayon::prelude::*;
        jobs.par_iter().map(|&(l, i)| draw(config, l, i)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let samples: Result<Vec<KappaSample>> = jobs.iter().map(|&(l, i)| draw(config, l, i)).collect();
    let samples = samples?;

    let mut counts: BTreeMap<(usize, u32), usize> = BTreeMap::new();
    for s in &samples {
        *counts
            .entry((s.length, s.kappa.floor() as u32))
            .or_default() += 1;
    }
    // keep the requested length order
    let mut bins = Vec::with_capacity(counts.len());
    for &l in &config.lengths {
        for (&(length, lo), &count) in counts.range((l, 0)..=(l, u32::MAX)) {
            bins.push(KappaBin {
                length,
                bin_lo: lo,
                bin_hi: lo + 1,
                count,
            });
        }
    }
    Ok(ConditionReport {
        m: config.m,
        iterations: config.iterations,
        weight: config.weight,
        samples,
        bins,
    })
}

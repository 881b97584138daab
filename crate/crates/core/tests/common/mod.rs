#![allow(dead_code)]

use std::path::Path;

use explstab::blackbox::{ProbabilitySource, ProbabilityVector};
use explstab::corpus::write_dataset;
use explstab::seed;
use explstab::synthetic::{generate, SyntheticSpec};
use explstab::Result;
use rand::Rng;

/// A cooperative game given by a value table over coalitions, exposed as a
/// two-class probability source (`p_0 = v(S)`).
pub struct TableGame {
    pub players: usize,
    pub values: Vec<f64>,
}

impl TableGame {
    pub fn random(players: usize, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let values = (0..1usize << players)
            .map(|_| rng.random_range(0.0..1.0))
            .collect();
        Self { players, values }
    }

    pub fn value(&self, bits: usize) -> f64 {
        self.values[bits]
    }

    pub fn ids(&self) -> Vec<u32> {
        (0..self.players as u32).map(|i| i + 2).collect()
    }
}

impl ProbabilitySource for TableGame {
    fn num_classes(&self) -> usize {
        2
    }

    fn query(
        &self,
        _query_index: u64,
        _token_ids: &[u32],
        mask: &[bool],
    ) -> Result<ProbabilityVector> {
        let bits = mask
            .iter()
            .enumerate()
            .fold(0usize, |acc, (i, &b)| acc | (usize::from(b) << i));
        let v = self.values[bits];
        ProbabilityVector::new(vec![v, 1.0 - v])
    }
}

/// Shapley values straight from the definition: average marginal
/// contribution over all `l!` orderings.
pub fn shapley_by_permutations(game: &TableGame) -> Vec<f64> {
    let l = game.players;
    let mut phi = vec![0.0; l];
    let mut order: Vec<usize> = (0..l).collect();
    let mut count = 0usize;
    permute(&mut order, 0, &mut |ord| {
        let mut bits = 0usize;
        for &i in ord {
            let before = game.value(bits);
            bits |= 1 << i;
            phi[i] += game.value(bits) - before;
        }
        count += 1;
    });
    phi.iter().map(|p| p / count as f64).collect()
}

fn permute(v: &mut [usize], k: usize, f: &mut dyn FnMut(&[usize])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, f);
        v.swap(k, i);
    }
}

pub fn write_synthetic(dir: &Path, count: usize, seed: u64) -> std::path::PathBuf {
    let path = dir.join("corpus.tsv");
    let spec = SyntheticSpec {
        count,
        seed,
        ..SyntheticSpec::default()
    };
    write_dataset(&path, &generate(&spec).unwrap()).unwrap();
    path
}

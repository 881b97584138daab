//! Output-probability perturbation and the shared level schedule.
//!
//! A perturbed probability vector adds Gaussian noise to every class
//! probability and renormalizes onto the simplex:
//!
//! ```text
//! p~_k = max(p_k + e_k, FLOOR) / sum_i max(p_i + e_i, FLOOR)
//! ```

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::blackbox::{ProbabilitySource, ProbabilityVector};
use crate::error::{Error, Result};
use crate::seed;

/// Lower bound applied to each perturbed numerator before normalizing.
pub const NUMERATOR_FLOOR: f64 = 1e-6;

pub const LEVELS: std::ops::RangeInclusive<u8> = 0..=4;

const INPUT_SIGMA2: [f64; 5] = [0.0, 0.05, 0.1, 0.15, 0.2];
const OUTPUT_SIGMA2: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationSource {
    Input,
    Output,
}

impl PerturbationSource {
    pub const ALL: [PerturbationSource; 2] = [Self::Input, Self::Output];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Input => "input",
            Self::Output => "output",
        }
    }
}

impl fmt::Display for PerturbationSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PerturbationSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "input" => Ok(Self::Input),
            "output" => Ok(Self::Output),
            other => Err(Error::invalid(format!(
                "unknown perturbation source {other:?}"
            ))),
        }
    }
}

pub fn level_to_sigma2(source: PerturbationSource, level: u8) -> Result<f64> {
    let table = match source {
        PerturbationSource::Input => &INPUT_SIGMA2,
        PerturbationSource::Output => &OUTPUT_SIGMA2,
    };
    table
        .get(level as usize)
        .copied()
        .ok_or_else(|| Error::invalid(format!("perturbation level {level} outside 0..=4")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub source: PerturbationSource,
    pub level: u8,
    pub sigma2: f64,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn new(source: PerturbationSource, level: u8, seed: u64) -> Result<Self> {
        Ok(Self {
            source,
            level,
            sigma2: level_to_sigma2(source, level)?,
            seed,
        })
    }
}

/// How noise vectors are assigned to the queries of one explanation run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// One noise vector shared by every query of the run.
    #[default]
    PerExplanation,
    /// An independent noise vector for each query index.
    PerQuery,
}

impl FromStr for NoiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_explanation" | "per-explanation" => Ok(Self::PerExplanation),
            "per_query" | "per-query" => Ok(Self::PerQuery),
            other => Err(Error::invalid(format!("unknown noise mode {other:?}"))),
        }
    }
}

/// Adds `noise` to `p`, floors each numerator and renormalizes. An all-zero
/// noise vector (or `sigma2 == 0`) returns `p` untouched.
pub fn perturb_probs(
    p: &ProbabilityVector,
    sigma2: f64,
    noise: &[f64],
) -> Result<ProbabilityVector> {
    if noise.len() != p.num_classes() {
        return Err(Error::invalid(format!(
            "noise has {} entries for {} classes",
            noise.len(),
            p.num_classes()
        )));
    }
    if sigma2 == 0.0 || noise.iter().all(|e| *e == 0.0) {
        return Ok(p.clone());
    }
    let numerators: Vec<f64> = p
        .as_slice()
        .iter()
        .zip(noise)
        .map(|(pk, ek)| (pk + ek).max(NUMERATOR_FLOOR))
        .collect();
    let total: f64 = numerators.iter().sum();
    Ok(ProbabilityVector::from_normalized_unchecked(
        numerators.into_iter().map(|v| v / total).collect(),
    ))
}

/// Draws the noise vector for one query.
pub fn noise_vector(sigma2: f64, classes: usize, seed: u64) -> Vec<f64> {
    if sigma2 <= 0.0 {
        return vec![0.0; classes];
    }
    let normal = Normal::new(0.0, sigma2.sqrt()).expect("valid normal");
    let mut rng = seed::rng(seed);
    (0..classes).map(|_| normal.sample(&mut rng)).collect()
}

/// Wraps a source so that every query's probabilities are perturbed. The
/// wrapped model is never modified. Noise is a pure function of
/// `(spec.seed, query_index)`, so replaying a query sequence reproduces the
/// stream exactly.
#[derive(Debug, Clone)]
pub struct PerturbedProbabilitySource<S> {
    inner: S,
    spec: PerturbationSpec,
    mode: NoiseMode,
}

impl<S: ProbabilitySource> PerturbedProbabilitySource<S> {
    pub fn spec(&self) -> &PerturbationSpec {
        &self.spec
    }

    pub fn mode(&self) -> NoiseMode {
        self.mode
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }

    pub fn noise_for(&self, query_index: u64) -> Vec<f64> {
        let key = match self.mode {
            NoiseMode::PerExplanation => 0,
            NoiseMode::PerQuery => query_index,
        };
        noise_vector(
            self.spec.sigma2,
            self.inner.num_classes(),
            seed::derive(self.spec.seed, &[key]),
        )
    }
}

impl<S: ProbabilitySource> ProbabilitySource for PerturbedProbabilitySource<S> {
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    fn query(
        &self,
        query_index: u64,
        token_ids: &[u32],
        mask: &[bool],
    ) -> Result<ProbabilityVector> {
        let p = self.inner.query(query_index, token_ids, mask)?;
        perturb_probs(&p, self.spec.sigma2, &self.noise_for(query_index))
    }
}

pub fn wrap_output_perturbed<S: ProbabilitySource>(
    inner: S,
    spec: PerturbationSpec,
    mode: NoiseMode,
) -> Result<PerturbedProbabilitySource<S>> {
    if spec.source != PerturbationSource::Output {
        return Err(Error::invalid(
            "output wrapper needs an output perturbation spec",
        ));
    }
    Ok(PerturbedProbabilitySource { inner, spec, mode })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blackbox::ProbabilityModel;
    use proptest::prelude::*;

    struct Fixed;

    impl ProbabilityModel for Fixed {
        fn num_classes(&self) -> usize {
            3
        }

        fn predict_proba(&self, _ids: &[u32], mask: Option<&[bool]>) -> Result<ProbabilityVector> {
            let on = mask.map_or(1, |m| m.iter().filter(|b| **b).count()) as f64;
            ProbabilityVector::new(vec![0.2, 0.3, 0.5]).map(|p| {
                let a = 0.1 * on / (1.0 + on);
                ProbabilityVector::new(vec![p.prob(0) + a, p.prob(1), p.prob(2) - a]).unwrap()
            })
        }
    }

    fn pv(v: &[f64]) -> ProbabilityVector {
        ProbabilityVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn tabulated_variances() {
        use PerturbationSource::*;
        assert_eq!(level_to_sigma2(Input, 2).unwrap(), 0.1);
        assert_eq!(level_to_sigma2(Input, 3).unwrap(), 0.15);
        assert_eq!(level_to_sigma2(Output, 3).unwrap(), 0.75);
        assert_eq!(level_to_sigma2(Output, 0).unwrap(), 0.0);
        assert_eq!(level_to_sigma2(Input, 0).unwrap(), 0.0);
        assert!(level_to_sigma2(Output, 5).is_err());
    }

    #[test]
    fn worked_example() {
        let out = perturb_probs(&pv(&[0.7, 0.3]), 0.25, &[0.1, -0.05]).unwrap();
        assert!((out.prob(0) - 0.761905).abs() < 1e-6);
        assert!((out.prob(1) - 0.238095).abs() < 1e-6);
    }

    #[test]
    fn zero_noise_is_identity() {
        let p = pv(&[0.123456789, 0.876543211]);
        assert_eq!(perturb_probs(&p, 0.0, &[0.0, 0.0]).unwrap(), p);
        assert_eq!(perturb_probs(&p, 0.5, &[0.0, 0.0]).unwrap(), p);
    }

    #[test]
    fn symmetric_noise_cancels() {
        for c in [-0.49, -0.1, 0.0, 0.3, 5.0] {
            let out = perturb_probs(&pv(&[0.5, 0.5]), 1.0, &[c, c]).unwrap();
            assert!((out.prob(0) - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn level_zero_wrapper_matches_model() {
        let spec = PerturbationSpec::new(PerturbationSource::Output, 0, 5).unwrap();
        for mode in [NoiseMode::PerQuery, NoiseMode::PerExplanation] {
            let w = wrap_output_perturbed(&Fixed, spec, mode).unwrap();
            for q in 0..20 {
                let mask = [q % 2 == 0, true, q % 3 == 0];
                assert_eq!(
                    w.query(q, &[1, 2, 3], &mask).unwrap(),
                    Fixed.query(q, &[1, 2, 3], &mask).unwrap()
                );
            }
        }
    }

    #[test]
    fn per_query_noise_is_independent_and_replayable() {
        let spec = PerturbationSpec::new(PerturbationSource::Output, 2, 5).unwrap();
        let w = wrap_output_perturbed(&Fixed, spec, NoiseMode::PerQuery).unwrap();
        let mask = [true, false, true];
        let a = w.query(3, &[1, 2, 3], &mask).unwrap();
        let b = w.query(4, &[1, 2, 3], &mask).unwrap();
        assert_ne!(a, b);
        let replay = wrap_output_perturbed(&Fixed, spec, NoiseMode::PerQuery).unwrap();
        for q in 0..50 {
            assert_eq!(
                w.query(q, &[1, 2, 3], &mask).unwrap(),
                replay.query(q, &[1, 2, 3], &mask).unwrap()
            );
        }
    }

    #[test]
    fn per_explanation_noise_is_shared() {
        let spec = PerturbationSpec::new(PerturbationSource::Output, 2, 5).unwrap();
        let w = wrap_output_perturbed(&Fixed, spec, NoiseMode::PerExplanation).unwrap();
        assert_eq!(w.noise_for(0), w.noise_for(17));
        let mask = [true, false, true];
        assert_eq!(
            w.query(3, &[1, 2, 3], &mask).unwrap(),
            w.query(4, &[1, 2, 3], &mask).unwrap()
        );
    }

    #[test]
    fn rejects_input_spec() {
        let spec = PerturbationSpec::new(PerturbationSource::Input, 1, 0).unwrap();
        assert!(wrap_output_perturbed(&Fixed, spec, NoiseMode::PerQuery).is_err());
    }

    fn simplex(c: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, c).prop_filter_map("nonzero mass", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-9).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn output_stays_on_simplex(
            (p, noise) in (2usize..6).prop_flat_map(|c| (simplex(c), prop::collection::vec(-3.0f64..3.0, c)))
        ) {
            let p = ProbabilityVector::from_normalized_unchecked(p);
            let out = perturb_probs(&p, 1.0, &noise).unwrap();
            let total: f64 = out.as_slice().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(out.as_slice().iter().all(|v| *v >= 0.0));
        }

        #[test]
        fn common_shift_is_invisible(
            (p, noise) in (2usize..5).prop_flat_map(|c| (simplex(c), prop::collection::vec(-0.05f64..0.3, c))),
            shift in 0.0f64..0.5,
        ) {
            let p = ProbabilityVector::from_normalized_unchecked(p);
            // keep every numerator above the floor
            prop_assume!(p.as_slice().iter().zip(&noise).all(|(a, e)| a + e > 1e-3));
            let shifted: Vec<f64> = noise.iter().map(|e| e + shift).collect();
            let a = perturb_probs(&p, 1.0, &noise).unwrap();
            let b = perturb_probs(&p, 1.0, &shifted).unwrap();
            let c = p.num_classes() as f64;
            // adding `shift` to each entry is the same as mixing with the
            // uniform distribution, so compare against that mixture
            let mass = 1.0 + noise.iter().sum::<f64>();
            let mixed_mass = mass + c * shift;
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                let expected = (x * mass + shift) / mixed_mass;
                prop_assert!((y - expected).abs() < 1e-12);
            }
        }
    }
}

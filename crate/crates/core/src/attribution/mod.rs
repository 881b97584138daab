//! Model-agnostic feature attribution: LIME, Kernel Shapley, Sample Shapley
//! and an exact Shapley oracle.
//!
//! Every explainer is a pure function of the probabilities returned by a
//! [`ProbabilitySource`], the mask design and the seed. Queries are numbered
//! in a fixed order so that sources keyed on the query index (such as the
//! output-perturbing wrapper) see a reproducible stream.

mod kernels;
mod masks;
mod wls;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use kernels::{
    binomial, cosine_to_full, lime_weights, shapley_kernel, shapley_kernel_weights,
    shapley_sampling_weights, KernelWeights, W_MAX,
};
pub(crate) use masks::sample_row;
pub use masks::{generate_masks, MaskMatrix};
pub use wls::{weighted_least_squares, WlsSolution, RIDGE};

use crate::blackbox::ProbabilitySource;
use crate::error::{Error, Result};
use crate::seed;

/// Default number of pseudo examples per explanation.
pub const DEFAULT_SAMPLES: usize = 200;
/// Largest document handled by [`exact_shapley`].
pub const MAX_EXACT_PLAYERS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplainerKind {
    Lime,
    KernelShap,
    SampleShapley,
    ExactShapley,
}

impl ExplainerKind {
    pub const ESTIMATORS: [ExplainerKind; 3] = [Self::Lime, Self::KernelShap, Self::SampleShapley];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Lime => "lime",
            Self::KernelShap => "kernel_shap",
            Self::SampleShapley => "sample_shapley",
            Self::ExactShapley => "exact_shapley",
        }
    }
}

impl fmt::Display for ExplainerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExplainerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lime" => Ok(Self::Lime),
            "kernel_shap" | "kernel-shap" | "kernelshap" => Ok(Self::KernelShap),
            "sample_shapley" | "sample-shapley" => Ok(Self::SampleShapley),
            "exact_shapley" | "exact-shapley" | "exact" => Ok(Self::ExactShapley),
            other => Err(Error::invalid(format!("unknown explainer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub scores: Vec<f64>,
    /// Positions by descending score, ties broken by position.
    pub ranking: Vec<usize>,
    pub explainer: ExplainerKind,
    pub target: usize,
    /// Fitted intercept (LIME) or empty-coalition value (Shapley family).
    pub base_value: Option<f64>,
}

impl Explanation {
    pub fn new(
        scores: Vec<f64>,
        explainer: ExplainerKind,
        target: usize,
        base_value: Option<f64>,
    ) -> Result<Self> {
        if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::invalid(format!("non-finite attribution score {s}")));
        }
        let ranking = rank_descending(&scores);
        Ok(Self {
            scores,
            ranking,
            explainer,
            target,
            base_value,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn record(&self, doc_id: usize, seed: u64, m: usize) -> ExplanationRecord {
        ExplanationRecord {
            doc_id,
            explainer: self.explainer,
            target: self.target,
            scores: self.scores.clone(),
            ranking: self.ranking.clone(),
            seed,
            m,
        }
    }
}

/// JSON form of an explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub doc_id: usize,
    pub explainer: ExplainerKind,
    pub target: usize,
    pub scores: Vec<f64>,
    pub ranking: Vec<usize>,
    pub seed: u64,
    pub m: usize,
}

pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

fn check_target<S: ProbabilitySource + ?Sized>(source: &S, target: usize) -> Result<()> {
    if target >= source.num_classes() {
        return Err(Error::invalid(format!(
            "target {target} out of range for {} classes",
            source.num_classes()
        )));
    }
    Ok(())
}

fn check_doc(token_ids: &[u32]) -> Result<usize> {
    if token_ids.is_empty() {
        return Err(Error::Unexplainable);
    }
    Ok(token_ids.len())
}

/// Target-class probability of every mask row; row `j` is query `j`.
fn query_rows<S: ProbabilitySource + ?Sized>(
    source: &S,
    token_ids: &[u32],
    target: usize,
    masks: &MaskMatrix,
) -> Result<Vec<f64>> {
    masks
        .rows()
        .enumerate()
        .map(|(j, row)| Ok(source.query(j as u64, token_ids, row)?.prob(target)))
        .collect()
}

fn query_empty<S: ProbabilitySource + ?Sized>(
    source: &S,
    query_index: u64,
    token_ids: &[u32],
    target: usize,
) -> Result<f64> {
    let empty = vec![false; token_ids.len()];
    Ok(source.query(query_index, token_ids, &empty)?.prob(target))
}

/// LIME with a caller-supplied mask design.
///
/// Queries: row `j` of `masks` is query `j`; the empty coalition (used only
/// for single-token documents, where the intercept is not identifiable) is
/// query `masks.len()`.
pub fn lime_with_masks<S: ProbabilitySource + ?Sized>(
    source: &S,
    token_ids: &[u32],
    target: usize,
    masks: &MaskMatrix,
) -> Result<Explanation> {
    check_target(source, target)?;
    let l = check_doc(token_ids)?;
    if masks.width() != l {
        return Err(Error::invalid(format!(
            "mask width {} != document length {l}",
            masks.width()
        )));
    }
    let targets = query_rows(source, token_ids, target, masks)?;
    if l == 1 {
        let empty = query_empty(source, masks.len() as u64, token_ids, target)?;
        return Explanation::new(
            vec![targets[0] - empty],
            ExplainerKind::Lime,
            target,
            Some(empty),
        );
    }
    let sol = weighted_least_squares(masks, &targets, &lime_weights(masks), true)?;
    Explanation::new(sol.coefficients, ExplainerKind::Lime, target, sol.intercept)
}

pub fn explain_lime<S: ProbabilitySource + ?Sized>(
    source: &S,
    token_ids: &[u32],
    target: usize,
    m: usize,
    seed: u64,
) -> Result<Explanation> {
    let masks = generate_masks(check_doc(token_ids)?, m, seed)?;
    lime_with_masks(source, token_ids, target, &masks)
}

/// How the rows of a Kernel Shapley design were obtained; decides whether
/// kernel weights need the importance correction for the mask law.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskDesign {
    /// Each nonempty coalition appears once.
    Exhaustive,
    /// Rows drawn by [`generate_masks`].
    Sampled,
}

/// Kernel Shapley with a caller-supplied mask design.
///
/// The empty-coalition value `f(∅)` is query `masks.len()` and is
/// subtracted from every target, so the regression has no free intercept
/// and the attributions sum to `f(full) - f(∅)` up to the finite endpoint
/// weight.
pub fn kernel_shap_with_masks<S: ProbabilitySource + ?Sized>(
    source: &S,
    token_ids: &[u32],
    target: usize,
    masks: &MaskMatrix,
    design: MaskDesign,
) -> Result<Explanation> {
    check_target(source, target)?;
    let l = check_doc(token_ids)?;
    if masks.width() != l {
        return Err(Error::invalid(format!(
            "mask width {} != document length {l}",
            masks.width()
        )));
    }
    let mut targets = query_rows(source, token_ids, target, masks)?;
    let empty = query_empty(source, masks.len() as u64, token_ids, target)?;
    targets.iter_mut().for_each(|t| *t -= empty);
    let weights = match design {
        MaskDesign::Exhaustive => shapley_kernel_weights(masks),
        MaskDesign::Sampled => shapley_sampling_weights(masks),
    };
    let sol = weighted_least_squares(masks, &targets, &weights, false)?;
    Explanation::new(
        sol.coefficients,
        ExplainerKind::KernelShap,
        target,
        Some(empty),
    )
}

pub fn explain_kernel_shap<S: ProbabilitySource + ?Sized>(
    source: &S,
    token_ids: &[u32],
    target: usize,
    m: usize,
    seed: u64,
) -> Result<Explanation> {
    let masks = generate_masks(check_doc(token_ids)?, m, seed)?;
    kernel_shap_with_masks(source, token_ids, target, &masks, MaskDesign::Sampled)
}

/// Permutation-sampling Shapley estimate over the given orderings.
///
/// For ordering `p` the queries are numbered `p * (l + 1) + step`, with
/// step 0 the empty coalition and step `t` the first `t` players.
pub fn sample_shapley_with_orders<S: ProbabilitySource + ?Sized>(
    source: &S,
    token_ids: &[u32],
    target: usize,
    orders: &[Vec<usize>],
) -> Result<Explanation> {
    check_target(source, target)?;
    let l = check_doc(token_ids)?;
    if orders.is_empty() {
        return Err(Error::invalid("need at least one permutation"));
    }
    let mut sums = vec![0.0; l];
    let mut base_sum = 0.0;
    let mut mask = vec![false; l];
    for (p, order) in orders.iter().enumerate() {
        if order.len() != l {
            return Err(Error::invalid(format!(
                "ordering {p} has length {}, want {l}",
                order.len()
            )));
        }
        mask.fill(false);
        let first = (p * (l + 1)) as u64;
        let mut prev = source.query(first, token_ids, &mask)?.prob(target);
        base_sum += prev;
        for (step, &player) in order.iter().enumerate() {
            if player >= l || mask[player] {
                return Err(Error::invalid(format!("ordering {p} is not a permutation")));
            }
            mask[player] = true;
            let value = source
                .query(first + step as u64 + 1, token_ids, &mask)?
                .prob(target);
            sums[player] += value - prev;
            prev = value;
        }
    }
    let n = orders.len() as f64;
    Explanation::new(
        sums.into_iter().map(|s| s / n).collect(),
        ExplainerKind::SampleShapley,
        target,
        Some(base_sum / n),
    )
}

pub fn sample_orders(l: usize, permutations: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = seed::rng(seed);
    (0..permutations)
        .map(|_| {
            let mut order: Vec<usize> = (0..l).collect();
            order.shuffle(&mut rng);
            order
        })
        .collect()
}

/// All `l!` orderings in lexicographic order.
pub fn all_orders(l: usize) -> Vec<Vec<usize>> {
    fn extend(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                extend(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    extend(&mut Vec::with_capacity(l), &mut vec![false; l], &mut out);
    out
}

pub fn explain_sample_shapley<S: ProbabilitySource + ?Sized>(
    source: &S,
    token_ids: &[u32],
    target: usize,
    permutations: usize,
    seed: u64,
) -> Result<Explanation> {
    if permutations == 0 {
        return Err(Error::invalid("need at least one permutation"));
    }
    let orders = sample_orders(check_doc(token_ids)?, permutations, seed);
    sample_shapley_with_orders(source, token_ids, target, &orders)
}

/// Textbook Shapley values by enumerating all `2^l` coalitions; coalition
/// `S` (as a bit pattern) is query `S`.
pub fn exact_shapley<S: ProbabilitySource + ?Sized>(
    source: &S,
    token_ids: &[u32],
    target: usize,
) -> Result<Explanation> {
    check_target(source, target)?;
    let l = check_doc(token_ids)?;
    if l > MAX_EXACT_PLAYERS {
        return Err(Error::TooManyPlayers {
            len: l,
            max: MAX_EXACT_PLAYERS,
        });
    }
    let n = 1usize << l;
    let mut values = vec![0.0; n];
    let mut mask = vec![false; l];
    for (bits, v) in values.iter_mut().enumerate() {
        for (i, b) in mask.iter_mut().enumerate() {
            *b = bits >> i & 1 == 1;
        }
        *v = source.query(bits as u64, token_ids, &mask)?.prob(target);
    }
    // |S|! (l - |S| - 1)! / l!
    let coalition_weight: Vec<f64> = (0..l)
        .map(|s| 1.0 / (l as f64 * binomial(l - 1, s)))
        .collect();
    let mut phi = vec![0.0; l];
    for (bits, &v) in values.iter().enumerate() {
        let size = bits.count_ones() as usize;
        for (i, p) in phi.iter_mut().enumerate() {
            if bits >> i & 1 == 0 {
                *p += coalition_weight[size] * (values[bits | 1 << i] - v);
            }
        }
    }
    Explanation::new(phi, ExplainerKind::ExactShapley, target, Some(values[0]))
}

/// Dispatches on `kind`; `budget` is the pseudo-example count for the
/// regression explainers and the permutation count for Sample Shapley.
pub fn explain<S: ProbabilitySource + ?Sized>(
    kind: ExplainerKind,
    source: &S,
    token_ids: &[u32],
    target: usize,
    budget: usize,
    seed: u64,
) -> Result<Explanation> {
    match kind {
        ExplainerKind::Lime => explain_lime(source, token_ids, target, budget, seed),
        ExplainerKind::KernelShap => explain_kernel_shap(source, token_ids, target, budget, seed),
        ExplainerKind::SampleShapley => {
            explain_sample_shapley(source, token_ids, target, budget, seed)
        }
        ExplainerKind::ExactShapley => exact_shapley(source, token_ids, target),
    }
}

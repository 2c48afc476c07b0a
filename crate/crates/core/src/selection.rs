//! Labeled-data selection strategies: greedy similar selection, EMD binning and
//! beta soft weighting, plus hardening and resampling transforms.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;

use crate::clustering::{category_centroids, kmeans, CentroidSet, DEFAULT_MAX_ITER};
use crate::data::{EmbeddingSet, WeightAssignment};
use crate::error::{DselError, Result};
use crate::transport::{
    pairwise_cost, per_source_distance, solve_emd, FlowMatrix, MarginalWeights, Metric,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityReduce {
    #[default]
    Min,
    Median,
    Max,
}

impl FromStr for SimilarityReduce {
    type Err = DselError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min" => Ok(SimilarityReduce::Min),
            "median" => Ok(SimilarityReduce::Median),
            "max" => Ok(SimilarityReduce::Max),
            other => Err(DselError::InvalidArgument(format!(
                "unknown reduce {other}"
            ))),
        }
    }
}

/// Mass convention for transport marginals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginalMode {
    #[default]
    Counts,
    Uniform,
}

impl MarginalMode {
    fn weights(self, counts: &[usize]) -> Result<MarginalWeights> {
        match self {
            MarginalMode::Counts => MarginalWeights::from_counts(counts),
            MarginalMode::Uniform => MarginalWeights::uniform(counts.len()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub alpha: f64,
    pub beta: f64,
    pub reduce: SimilarityReduce,
    /// x = scale * s + offset maps a similarity onto the pdf domain.
    pub rescale_scale: f64,
    pub rescale_offset: f64,
}

impl Default for BetaParams {
    fn default() -> Self {
        Self::new(5.0, 5.0)
    }
}

impl BetaParams {
    pub fn new(alpha: f64, beta: f64) -> Self {
        Self {
            alpha,
            beta,
            reduce: SimilarityReduce::Min,
            rescale_scale: 0.5,
            rescale_offset: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0)
            || !self.alpha.is_finite()
            || !self.beta.is_finite()
        {
            return Err(DselError::InvalidArgument(format!(
                "beta parameters must be positive, got alpha={}, beta={}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }

    pub fn rescale(&self, s: f64) -> f64 {
        self.rescale_scale * s + self.rescale_offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinningParams {
    pub chunks: usize,
    pub n_splits: usize,
    /// 1-based chunk index receiving weight 1.
    pub select_chunk: usize,
    pub seed: u64,
    pub marginals: MarginalMode,
}

impl Default for BinningParams {
    fn default() -> Self {
        Self {
            chunks: 2,
            n_splits: 10,
            select_chunk: 2,
            seed: 0,
            marginals: MarginalMode::Counts,
        }
    }
}

impl BinningParams {
    pub fn validate(&self) -> Result<()> {
        if self.chunks < 2 {
            return Err(DselError::InvalidArgument(
                "at least two chunks are required".into(),
            ));
        }
        if self.select_chunk == 0 || self.select_chunk > self.chunks {
            return Err(DselError::InvalidArgument(format!(
                "select_chunk {} outside 1..={}",
                self.select_chunk, self.chunks
            )));
        }
        if self.n_splits == 0 {
            return Err(DselError::InvalidArgument(
                "n_splits must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Similarity (beta) or distance (greedy, binning) per category.
    pub scores: Vec<f64>,
    pub threshold: Option<f64>,
    pub discarded: Vec<usize>,
    /// Splits in which each category survived the threshold (binning only).
    pub keep_votes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub weights: WeightAssignment,
    pub diagnostics: Diagnostics,
}

impl SelectionResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn ones_at(n: usize, chosen: &[usize]) -> Result<WeightAssignment> {
    let mut w = vec![0.0; n];
    for &c in chosen {
        w[c] = 1.0;
    }
    WeightAssignment::from_vec(&w)
}

/// Indices sorted by ascending value, ties by index.
fn ascending(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    idx
}

/// Keeps the `budget` source categories with the smallest flow-weighted distance to the target.
pub fn greedy_similar_selection(
    source: &CentroidSet,
    target: &CentroidSet,
    budget: usize,
    metric: Metric,
    marginals: MarginalMode,
) -> Result<SelectionResult> {
    if budget > source.len() {
        return Err(DselError::InvalidArgument(format!(
            "budget {budget} exceeds {} source categories",
            source.len()
        )));
    }
    let cost = pairwise_cost(source, target, metric)?;
    let sol = solve_emd(
        &cost,
        &marginals.weights(&source.counts)?,
        &marginals.weights(&target.counts)?,
    )?;
    let d = per_source_distance(&sol.flow, &cost)?.distances;
    let order = ascending(&d);
    let chosen = &order[..budget];
    let discarded = order[budget..].to_vec();
    Ok(SelectionResult {
        weights: ones_at(source.len(), chosen)?,
        diagnostics: Diagnostics {
            scores: d,
            threshold: None,
            discarded,
            keep_votes: Vec::new(),
        },
    })
}

/// Beta density; endpoints where the density diverges are clamped to 0.
pub fn beta_pdf(x: f64, p: &BetaParams) -> Result<f64> {
    p.validate()?;
    if !(0.0..=1.0).contains(&x) {
        return Err(DselError::InvalidArgument(format!(
            "beta_pdf argument {x} outside [0, 1]"
        )));
    }
    let (a, b) = (p.alpha, p.beta);
    if (x == 0.0 && a < 1.0) || (x == 1.0 && b < 1.0) {
        log::warn!("beta_pdf clamped a divergent endpoint to 0");
        return Ok(0.0);
    }
    if let Some(inv_b) = inverse_beta_integer(a, b) {
        return Ok(x.powi(a as i32 - 1) * (1.0 - x).powi(b as i32 - 1) * inv_b);
    }
    let term = |e: f64, v: f64| if e == 0.0 { 0.0 } else { e * v.ln() };
    let log_pdf = term(a - 1.0, x) + term(b - 1.0, 1.0 - x) - ln_beta(a, b);
    Ok(log_pdf.exp())
}

/// 1/B(a, b) = (a+b-1)·C(a+b-2, a-1) for small integer parameters, exact in f64.
fn inverse_beta_integer(a: f64, b: f64) -> Option<f64> {
    if a.fract() != 0.0 || b.fract() != 0.0 || a + b > 60.0 {
        return None;
    }
    let (n, k) = (a as u64 + b as u64 - 2, a as u64 - 1);
    let k = k.min(n - k);
    let binom = (1..=k).fold(1u64, |acc, i| acc * (n - k + i) / i);
    Some((n + 1) as f64 * binom as f64)
}

fn cosine(a: &[f64], b: &[f64], na: f64) -> Result<f64> {
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nb == 0.0 {
        return Err(DselError::ZeroNorm("target instance"));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

/// Reduced cosine similarity of every labeled centroid to the target instances.
pub fn category_similarity(
    labeled_centroids: &CentroidSet,
    target: &EmbeddingSet,
    reduce: SimilarityReduce,
) -> Result<Vec<f64>> {
    if target.is_empty() {
        return Err(DselError::EmptyInput);
    }
    if labeled_centroids.dim() != target.dim() {
        return Err(DselError::DimensionMismatch {
            expected: labeled_centroids.dim(),
            found: target.dim(),
            row: 0,
        });
    }
    (0..labeled_centroids.len())
        .into_par_iter()
        .map(|i| {
            let c = labeled_centroids.centroids.row(i).to_vec();
            let nc = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nc == 0.0 {
                return Err(DselError::ZeroNorm("centroid"));
            }
            let mut sims = target
                .features()
                .outer_iter()
                .map(|x| cosine(&c, x.as_slice().expect("standard layout"), nc))
                .collect::<Result<Vec<f64>>>()?;
            Ok(match reduce {
                SimilarityReduce::Min => sims.iter().copied().fold(f64::INFINITY, f64::min),
                SimilarityReduce::Max => sims.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                SimilarityReduce::Median => {
                    sims.sort_by(f64::total_cmp);
                    let n = sims.len();
                    if n % 2 == 1 {
                        sims[n / 2]
                    } else {
                        0.5 * (sims[n / 2 - 1] + sims[n / 2])
                    }
                }
            })
        })
        .collect()
}

/// ω^c = beta_pdf(rescale(γ_c)).
pub fn beta_weights(similarities: &[f64], p: &BetaParams) -> Result<SelectionResult> {
    p.validate()?;
    let mut w = Vec::with_capacity(similarities.len());
    for (c, &s) in similarities.iter().enumerate() {
        if !s.is_finite() {
            return Err(DselError::InvalidWeight {
                category: c,
                value: s,
            });
        }
        if !(-1.0 - 1e-9..=1.0 + 1e-9).contains(&s) {
            return Err(DselError::InvalidArgument(format!(
                "similarity {s} outside [-1, 1]"
            )));
        }
        let x = p.rescale(s.clamp(-1.0, 1.0)).clamp(0.0, 1.0);
        w.push(beta_pdf(x, p)?);
    }
    let discarded = w
        .iter()
        .enumerate()
        .filter(|(_, v)| **v == 0.0)
        .map(|(c, _)| c)
        .collect();
    Ok(SelectionResult {
        weights: WeightAssignment::from_vec(&w)?,
        diagnostics: Diagnostics {
            scores: similarities.to_vec(),
            threshold: None,
            discarded,
            keep_votes: Vec::new(),
        },
    })
}

struct SplitOutcome {
    distances: Vec<f64>,
    threshold: f64,
    flow: FlowMatrix,
}

/// EMD binning: threshold labeled categories against within-target distances over
/// random bisections of the target clusters, then keep one chunk of the survivors
/// ranked by distance.
pub fn binning_select(
    labeled: &EmbeddingSet,
    unlabeled: &EmbeddingSet,
    k_unlabeled: usize,
    p: &BinningParams,
    metric: Metric,
) -> Result<SelectionResult> {
    binning_select_with_flows(labeled, unlabeled, k_unlabeled, p, metric).map(|(r, _)| r)
}

/// As [`binning_select`], also returning the flow matrix of every split.
pub fn binning_select_with_flows(
    labeled: &EmbeddingSet,
    unlabeled: &EmbeddingSet,
    k_unlabeled: usize,
    p: &BinningParams,
    metric: Metric,
) -> Result<(SelectionResult, Vec<FlowMatrix>)> {
    p.validate()?;
    if k_unlabeled < 2 {
        return Err(DselError::InvalidArgument(
            "binning needs at least two target clusters".into(),
        ));
    }
    if k_unlabeled % 2 == 1 {
        log::warn!("odd cluster count {k_unlabeled}: the extra cluster joins the second half");
    }
    let source = category_centroids(labeled)?;
    let (clusters, _) = kmeans(unlabeled, k_unlabeled, p.seed, DEFAULT_MAX_ITER)?;
    let n_cat = source.len();
    let half = k_unlabeled / 2;

    let outcomes: Vec<SplitOutcome> = (0..p.n_splits)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(
                p.seed.wrapping_mul(0x9E37_79B9).wrapping_add(s as u64 + 1),
            );
            let mut order: Vec<usize> = (0..k_unlabeled).collect();
            order.shuffle(&mut rng);
            let d0 = clusters.select(&order[..half]);
            let d1 = clusters.select(&order[half..]);
            let src = source.stack(&d0)?;
            let cost = pairwise_cost(&src, &d1, metric)?;
            let sol = solve_emd(
                &cost,
                &p.marginals.weights(&src.counts)?,
                &p.marginals.weights(&d1.counts)?,
            )?;
            let d = per_source_distance(&sol.flow, &cost)?.distances;
            let threshold = d[n_cat..].iter().sum::<f64>() / half as f64;
            Ok(SplitOutcome {
                distances: d[..n_cat].to_vec(),
                threshold,
                flow: sol.flow,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut votes = vec![0usize; n_cat];
    let mut sum = vec![0.0; n_cat];
    for o in &outcomes {
        for c in 0..n_cat {
            sum[c] += o.distances[c];
            if o.distances[c] <= o.threshold {
                votes[c] += 1;
            }
        }
    }
    let scores: Vec<f64> = sum.iter().map(|s| s / p.n_splits as f64).collect();
    let kept: Vec<usize> = (0..n_cat).filter(|&c| 2 * votes[c] > p.n_splits).collect();
    let discarded: Vec<usize> = (0..n_cat).filter(|&c| 2 * votes[c] <= p.n_splits).collect();
    if kept.is_empty() {
        log::warn!("binning discarded every labeled category");
    }
    let mut ranked = kept.clone();
    ranked.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let chosen = chunk(&ranked, p.chunks, p.select_chunk);
    let threshold = outcomes.iter().map(|o| o.threshold).sum::<f64>() / outcomes.len() as f64;
    let result = SelectionResult {
        weights: ones_at(n_cat, chosen)?,
        diagnostics: Diagnostics {
            scores,
            threshold: Some(threshold),
            discarded,
            keep_votes: votes,
        },
    };
    Ok((result, outcomes.into_iter().map(|o| o.flow).collect()))
}

/// The `select`-th (1-based) of `chunks` equal chunks; the last chunk takes the remainder.
pub fn chunk<T>(ranked: &[T], chunks: usize, select: usize) -> &[T] {
    let size = ranked.len() / chunks;
    let start = (select - 1) * size;
    let end = if select == chunks {
        ranked.len()
    } else {
        start + size
    };
    &ranked[start..end]
}

/// Maps each weight to 1 when it reaches `threshold`, otherwise 0.
pub fn harden_weights(w: &WeightAssignment, threshold: f64) -> Result<WeightAssignment> {
    if !(threshold >= 0.0) {
        return Err(DselError::InvalidArgument(format!(
            "threshold {threshold} must be non-negative"
        )));
    }
    WeightAssignment::new(
        w.category_weights()
            .iter()
            .map(|(&c, &v)| (c, if v >= threshold { 1.0 } else { 0.0 }))
            .collect(),
    )
}

/// Per-category sampling probabilities proportional to the weights.
pub fn resampling_distribution(w: &WeightAssignment) -> Result<BTreeMap<usize, f64>> {
    let total: f64 = w.category_weights().values().sum();
    if total <= 0.0 {
        return Err(DselError::AllZeroWeights);
    }
    Ok(w.category_weights()
        .iter()
        .map(|(&c, &v)| (c, v / total))
        .collect())
}

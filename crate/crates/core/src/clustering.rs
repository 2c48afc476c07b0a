//! Centroids, k-means with k-means++ seeding, and semi-supervised k-means.

use ndarray::{Array2, ArrayView2, Axis};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::EmbeddingSet;
use crate::error::{DselError, Result};

pub const DEFAULT_MAX_ITER: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CentroidOrigin {
    LabeledCategories,
    UnlabeledClusters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentroidSet {
    pub centroids: Array2<f64>,
    pub counts: Vec<usize>,
    pub origin: CentroidOrigin,
}

impl CentroidSet {
    pub fn len(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.centroids.ncols()
    }

    /// Rows `idx` of this set, in the given order.
    pub fn select(&self, idx: &[usize]) -> CentroidSet {
        CentroidSet {
            centroids: self.centroids.select(Axis(0), idx),
            counts: idx.iter().map(|&i| self.counts[i]).collect(),
            origin: self.origin,
        }
    }

    /// Stacks `self` on top of `other`.
    pub fn stack(&self, other: &CentroidSet) -> Result<CentroidSet> {
        if self.dim() != other.dim() {
            return Err(DselError::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
                row: 0,
            });
        }
        let centroids =
            ndarray::concatenate(Axis(0), &[self.centroids.view(), other.centroids.view()])
                .expect("dims checked above");
        let mut counts = self.counts.clone();
        counts.extend_from_slice(&other.counts);
        Ok(CentroidSet {
            centroids,
            counts,
            origin: self.origin,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub inertia: f64,
    pub n_iter: usize,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn row<'a>(x: &ArrayView2<'a, f64>, i: usize) -> &'a [f64] {
    let d = x.ncols();
    let all = x.to_slice().expect("standard layout");
    &all[i * d..(i + 1) * d]
}

/// Per-category mean feature vectors.
pub fn category_centroids(d: &EmbeddingSet) -> Result<CentroidSet> {
    let labels = d.require_labels()?;
    let k = d.n_categories();
    let mut sums = Array2::<f64>::zeros((k, d.dim()));
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        sums.row_mut(l).zip_mut_with(&d.row(i), |s, v| *s += v);
        counts[l] += 1;
    }
    for (c, mut r) in sums.outer_iter_mut().enumerate() {
        r /= counts[c] as f64;
    }
    Ok(CentroidSet {
        centroids: sums,
        counts,
        origin: CentroidOrigin::LabeledCategories,
    })
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 {
        return Err(DselError::InvalidArgument("k must be positive".into()));
    }
    if k > n {
        return Err(DselError::InvalidArgument(format!(
            "k={k} exceeds {n} instances"
        )));
    }
    Ok(())
}

/// D² seeding of `k` new centers from rows of `x`, continuing from `existing` centers.
/// With `trials > 1` each step draws that many D² candidates and keeps the one that
/// minimizes the resulting potential (greedy k-means++). Returns the chosen row indices.
pub(crate) fn kmeans_pp_indices<R: Rng>(
    x: ArrayView2<'_, f64>,
    existing: ArrayView2<'_, f64>,
    k: usize,
    trials: usize,
    rng: &mut R,
) -> Vec<usize> {
    let n = x.nrows();
    let mut chosen = Vec::with_capacity(k);
    let mut d2: Vec<f64> = vec![f64::INFINITY; n];
    let update = |d2: &mut Vec<f64>, c: &[f64]| {
        d2.par_iter_mut().enumerate().for_each(|(i, d)| {
            let v = sq_dist(row(&x, i), c);
            if v < *d {
                *d = v;
            }
        });
    };
    let potential = |d2: &[f64], c: usize| -> f64 {
        let cand = row(&x, c);
        let per: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| d2[i].min(sq_dist(row(&x, i), cand)))
            .collect();
        per.iter().sum()
    };
    for c in existing.outer_iter() {
        update(&mut d2, c.to_slice().expect("standard layout"));
    }
    while chosen.len() < k {
        let pick = if existing.nrows() == 0 && chosen.is_empty() {
            rng.random_range(0..n)
        } else {
            let candidates: Vec<usize> = match WeightedIndex::new(&d2) {
                Ok(dist) => (0..trials.max(1)).map(|_| dist.sample(rng)).collect(),
                Err(_) => (0..trials.max(1)).map(|_| rng.random_range(0..n)).collect(),
            };
            if candidates.len() == 1 {
                candidates[0]
            } else {
                let scores: Vec<f64> = candidates.iter().map(|&c| potential(&d2, c)).collect();
                let best =
                    (0..candidates.len()).fold(0, |b, i| if scores[i] < scores[b] { i } else { b });
                candidates[best]
            }
        };
        chosen.push(pick);
        update(&mut d2, row(&x, pick));
    }
    chosen
}

/// Candidate count per step for greedy seeding.
pub(crate) fn greedy_trials(k: usize) -> usize {
    2 + (k.max(1) as f64).ln() as usize
}

/// k-means++ seeding: first center uniform, then proportional to squared distance.
pub fn kmeans_pp_init(d: &EmbeddingSet, k: usize, seed: u64) -> Result<CentroidSet> {
    check_k(d.len(), k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = d.features().view();
    let idx = kmeans_pp_indices(x, Array2::zeros((0, d.dim())).view(), k, 1, &mut rng);
    Ok(CentroidSet {
        centroids: d.features().select(Axis(0), &idx),
        counts: vec![1; k],
        origin: CentroidOrigin::UnlabeledClusters,
    })
}

fn assign(x: ArrayView2<'_, f64>, centroids: &Array2<f64>) -> Vec<(usize, f64)> {
    (0..x.nrows())
        .into_par_iter()
        .map(|i| nearest(row(&x, i), centroids))
        .collect()
}

fn nearest(p: &[f64], centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cr) in centroids.outer_iter().enumerate() {
        let d = sq_dist(p, cr.to_slice().expect("standard layout"));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Mean of member rows per cluster, accumulated in row order.
fn recompute(x: ArrayView2<'_, f64>, labels: &[usize], k: usize) -> (Array2<f64>, Vec<usize>) {
    let mut sums = Array2::<f64>::zeros((k, x.ncols()));
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        sums.row_mut(l).zip_mut_with(&x.row(i), |s, v| *s += v);
        counts[l] += 1;
    }
    for (c, mut r) in sums.outer_iter_mut().enumerate() {
        if counts[c] > 0 {
            r /= counts[c] as f64;
        }
    }
    (sums, counts)
}

/// Moves each empty cluster onto the instance farthest from its current centroid.
/// `movable` restricts which instances may be reassigned.
fn repair_empty(
    x: ArrayView2<'_, f64>,
    labels: &mut [usize],
    centroids: &mut Array2<f64>,
    counts: &mut [usize],
    movable: impl Fn(usize) -> bool,
) {
    for c in 0..counts.len() {
        if counts[c] > 0 {
            continue;
        }
        let far = (0..x.nrows())
            .filter(|&i| movable(i) && counts[labels[i]] > 1)
            .map(|i| {
                (
                    i,
                    sq_dist(row(&x, i), centroids.row(labels[i]).to_slice().unwrap()),
                )
            })
            .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((i, d)),
            });
        if let Some((i, _)) = far {
            let old = labels[i];
            counts[old] -= 1;
            counts[c] = 1;
            labels[i] = c;
            centroids.row_mut(c).assign(&x.row(i));
        }
    }
}

fn inertia_of(x: ArrayView2<'_, f64>, labels: &[usize], centroids: &Array2<f64>) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sq_dist(row(&x, i), centroids.row(l).to_slice().unwrap()))
        .sum()
}

/// Lloyd iterations from k-means++ seeds until the assignment is a fixpoint or `max_iter`.
pub fn kmeans(
    d: &EmbeddingSet,
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<(CentroidSet, ClusterAssignment)> {
    check_k(d.len(), k)?;
    let x = d.features().view();
    let mut centroids = kmeans_pp_init(d, k, seed)?.centroids;
    let mut labels: Vec<usize> = vec![usize::MAX; d.len()];
    let mut history = Vec::new();
    let mut n_iter = 0;
    let mut counts = vec![0; k];
    for it in 0..max_iter.max(1) {
        n_iter = it + 1;
        let assigned = assign(x, &centroids);
        let changed = assigned.iter().zip(&labels).any(|((a, _), l)| a != l);
        labels = assigned.iter().map(|(a, _)| *a).collect();
        history.push(assigned.iter().map(|(_, d)| d).sum());
        if !changed {
            break;
        }
        let (c, n) = recompute(x, &labels, k);
        centroids = c;
        counts = n;
        repair_empty(x, &mut labels, &mut centroids, &mut counts, |_| true);
    }
    let (centroids, final_counts) = recompute(x, &labels, k);
    if final_counts.iter().all(|&c| c > 0) {
        counts = final_counts;
    }
    let inertia = inertia_of(x, &labels, &centroids);
    Ok((
        CentroidSet {
            centroids,
            counts,
            origin: CentroidOrigin::UnlabeledClusters,
        },
        ClusterAssignment {
            labels,
            inertia,
            n_iter,
            inertia_history: history,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SemiSupervisedOptions {
    pub seed: u64,
    pub max_iter: usize,
    /// Keep the centroids of labeled categories fixed at their labeled means.
    pub freeze_labeled_centroids: bool,
}

impl Default for SemiSupervisedOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            max_iter: DEFAULT_MAX_ITER,
            freeze_labeled_centroids: false,
        }
    }
}

/// k-means over `labeled ∪ unlabeled` (labeled rows first) where labeled rows stay in
/// the cluster of their ground-truth category.
pub fn semi_supervised_kmeans(
    labeled: &EmbeddingSet,
    unlabeled: &EmbeddingSet,
    k: usize,
    opts: SemiSupervisedOptions,
) -> Result<(CentroidSet, ClusterAssignment)> {
    semi_supervised_kmeans_observed(labeled, unlabeled, k, opts, |_| {})
}

/// As [`semi_supervised_kmeans`], calling `observe` with the full assignment after every step.
pub fn semi_supervised_kmeans_observed(
    labeled: &EmbeddingSet,
    unlabeled: &EmbeddingSet,
    k: usize,
    opts: SemiSupervisedOptions,
    mut observe: impl FnMut(&[usize]),
) -> Result<(CentroidSet, ClusterAssignment)> {
    let y = labeled.require_labels()?;
    let n_cat = labeled.n_categories();
    if k < n_cat {
        return Err(DselError::InvalidArgument(format!(
            "k={k} is smaller than the {n_cat} labeled categories"
        )));
    }
    if labeled.dim() != unlabeled.dim() {
        return Err(DselError::DimensionMismatch {
            expected: labeled.dim(),
            found: unlabeled.dim(),
            row: 0,
        });
    }
    if k - n_cat > unlabeled.len() {
        return Err(DselError::InvalidArgument(format!(
            "cannot seed {} clusters from {} unlabeled instances",
            k - n_cat,
            unlabeled.len()
        )));
    }
    let nl = labeled.len();
    let all = ndarray::concatenate(
        Axis(0),
        &[labeled.features().view(), unlabeled.features().view()],
    )
    .expect("dims checked above");
    let x = all.view();
    let xu = unlabeled.features().view();
    let labeled_means = category_centroids(labeled)?.centroids;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let seeds = kmeans_pp_indices(xu, labeled_means.view(), k - n_cat, 1, &mut rng);
    let mut centroids = ndarray::concatenate(
        Axis(0),
        &[labeled_means.view(), xu.select(Axis(0), &seeds).view()],
    )
    .expect("dims agree");

    let mut labels: Vec<usize> = y.to_vec();
    labels.extend(std::iter::repeat_n(usize::MAX, unlabeled.len()));
    let mut history = Vec::new();
    let mut n_iter = 0;
    let mut counts = vec![0; k];
    for it in 0..opts.max_iter.max(1) {
        n_iter = it + 1;
        let assigned = assign(xu, &centroids);
        let changed = assigned.iter().zip(&labels[nl..]).any(|((a, _), l)| a != l);
        for (j, (a, _)) in assigned.iter().enumerate() {
            labels[nl + j] = *a;
        }
        history.push(inertia_of(x, &labels, &centroids));
        observe(&labels);
        if !changed {
            break;
        }
        let (mut c, n) = recompute(x, &labels, k);
        if opts.freeze_labeled_centroids {
            c.slice_mut(ndarray::s![..n_cat, ..]).assign(&labeled_means);
        }
        for cl in 0..k {
            if n[cl] == 0 {
                c.row_mut(cl).assign(&centroids.row(cl));
            }
        }
        centroids = c;
        counts = n;
        repair_empty(x, &mut labels, &mut centroids, &mut counts, |i| i >= nl);
    }
    let (mut final_c, final_counts) = recompute(x, &labels, k);
    if opts.freeze_labeled_centroids {
        final_c
            .slice_mut(ndarray::s![..n_cat, ..])
            .assign(&labeled_means);
    }
    for cl in 0..k {
        if final_counts[cl] == 0 {
            final_c.row_mut(cl).assign(&centroids.row(cl));
        }
    }
    let inertia = inertia_of(x, &labels, &final_c);
    counts = final_counts.iter().map(|&c| c.max(1)).collect();
    Ok((
        CentroidSet {
            centroids: final_c,
            counts,
            origin: CentroidOrigin::UnlabeledClusters,
        },
        ClusterAssignment {
            labels,
            inertia,
            n_iter,
            inertia_history: history,
        },
    ))
}

//! Clustering accuracy under optimal cluster-to-class matching, All/Old/New splits,
//! and the novel-instance error taxonomy.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{DselError, Result};

/// Minimum-cost perfect assignment on a square matrix; returns the column of each row.
pub fn linear_sum_assignment(cost: &Array2<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "square cost matrix required");
    if n == 0 {
        return Vec::new();
    }
    // Shortest augmenting path with potentials; 1-based with a virtual column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        row_to_col[p[j] - 1] = j - 1;
    }
    row_to_col
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matching {
    /// Predicted cluster id to true class id.
    pub permutation: BTreeMap<usize, usize>,
    pub matched: usize,
}

/// Contingency counts with predicted clusters as rows and true classes as columns.
pub fn contingency(true_labels: &[usize], predicted: &[usize]) -> Array2<usize> {
    let n_pred = predicted.iter().max().map_or(0, |m| m + 1);
    let n_true = true_labels.iter().max().map_or(0, |m| m + 1);
    let mut m = Array2::zeros((n_pred, n_true));
    for (&t, &p) in true_labels.iter().zip(predicted) {
        m[[p, t]] += 1;
    }
    m
}

fn check_inputs(true_labels: &[usize], predicted: &[usize]) -> Result<()> {
    if true_labels.is_empty() {
        return Err(DselError::EmptyInput);
    }
    if true_labels.len() != predicted.len() {
        return Err(DselError::ShapeMismatch(format!(
            "{} true labels vs {} predictions",
            true_labels.len(),
            predicted.len()
        )));
    }
    Ok(())
}

/// Cluster-to-class matching maximizing the number of agreeing instances.
pub fn hungarian_match(true_labels: &[usize], predicted: &[usize]) -> Result<Matching> {
    check_inputs(true_labels, predicted)?;
    let table = contingency(true_labels, predicted);
    let (n_pred, n_true) = table.dim();
    let size = n_pred.max(n_true);
    let max = *table.iter().max().unwrap_or(&0) as f64;
    let cost = Array2::from_shape_fn((size, size), |(r, c)| {
        if r < n_pred && c < n_true {
            max - table[[r, c]] as f64
        } else {
            max
        }
    });
    let assignment = linear_sum_assignment(&cost);
    let mut permutation = BTreeMap::new();
    let mut matched = 0;
    for (r, &c) in assignment.iter().enumerate() {
        if r < n_pred && c < n_true {
            permutation.insert(r, c);
            matched += table[[r, c]];
        }
    }
    Ok(Matching {
        permutation,
        matched,
    })
}

pub fn clustering_accuracy(true_labels: &[usize], predicted: &[usize]) -> Result<f64> {
    let m = hungarian_match(true_labels, predicted)?;
    Ok(m.matched as f64 / true_labels.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub misclassified_as_new: usize,
    pub misclassified_as_old: usize,
}

impl ErrorCounts {
    pub fn total(&self) -> usize {
        self.misclassified_as_new + self.misclassified_as_old
    }

    /// Share of novel-instance errors landing in old-matched clusters.
    pub fn as_old_fraction(&self) -> Option<f64> {
        (self.total() > 0).then(|| self.misclassified_as_old as f64 / self.total() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub acc_all: f64,
    /// `None` when no instance belongs to the split.
    pub acc_old: Option<f64>,
    pub acc_new: Option<f64>,
    pub permutation: BTreeMap<usize, usize>,
    pub error_counts: ErrorCounts,
    pub n_all: usize,
    pub n_old: usize,
    pub n_new: usize,
}

pub const CSV_HEADER: &str = "method,dataset,acc_all,acc_old,acc_new,err_as_new,err_as_old";

fn opt_field(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

impl EvalReport {
    pub fn csv_row(&self, method: &str, dataset: &str) -> String {
        format!(
            "{method},{dataset},{:.6},{},{},{},{}",
            self.acc_all,
            opt_field(self.acc_old),
            opt_field(self.acc_new),
            self.error_counts.misclassified_as_new,
            self.error_counts.misclassified_as_old
        )
    }
}

/// All/Old/New accuracy from one global matching, with `new` = observed classes not in `old`.
pub fn split_accuracy(
    true_labels: &[usize],
    predicted: &[usize],
    old: &BTreeSet<usize>,
) -> Result<EvalReport> {
    let observed: BTreeSet<usize> = true_labels.iter().copied().collect();
    if let Some(c) = old.iter().find(|c| !observed.contains(c)) {
        return Err(DselError::InvalidArgument(format!(
            "old class {c} never occurs"
        )));
    }
    let new: BTreeSet<usize> = observed.difference(old).copied().collect();
    split_accuracy_partitioned(true_labels, predicted, old, &new)
}

/// Like [`split_accuracy`] with explicit old and new class sets. Classes in neither set
/// count toward All only; clusters matched to an `old` class are the Old clusters.
pub fn split_accuracy_partitioned(
    true_labels: &[usize],
    predicted: &[usize],
    old: &BTreeSet<usize>,
    new: &BTreeSet<usize>,
) -> Result<EvalReport> {
    let matching = hungarian_match(true_labels, predicted)?;
    let mut hits_old = 0;
    let mut hits_new = 0;
    let mut n_old = 0;
    let mut n_new = 0;
    let mut errors = ErrorCounts::default();
    for (&t, &p) in true_labels.iter().zip(predicted) {
        let dest = matching.permutation.get(&p).copied();
        let correct = dest == Some(t);
        if old.contains(&t) {
            n_old += 1;
            hits_old += usize::from(correct);
        } else if new.contains(&t) {
            n_new += 1;
            if correct {
                hits_new += 1;
            } else if dest.is_some_and(|c| old.contains(&c)) {
                errors.misclassified_as_old += 1;
            } else {
                errors.misclassified_as_new += 1;
            }
        }
    }
    let ratio = |h: usize, n: usize| (n > 0).then(|| h as f64 / n as f64);
    Ok(EvalReport {
        acc_all: matching.matched as f64 / true_labels.len() as f64,
        acc_old: ratio(hits_old, n_old),
        acc_new: ratio(hits_new, n_new),
        permutation: matching.permutation,
        error_counts: errors,
        n_all: true_labels.len(),
        n_old,
        n_new,
    })
}

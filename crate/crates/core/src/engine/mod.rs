//! Weighted prototype-based category discovery on frozen features.
//!
//! Features pass through an optional trainable linear adapter, are unit-normalized,
//! and are scored against cosine-normalized prototypes. Training minimizes the
//! mixed contrastive and self-distillation objective of [`loss::objective`].

mod checkpoint;
pub mod loss;
mod train;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::data::EmbeddingSet;
use crate::error::{DselError, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use loss::{
    loss_cls_l, loss_cls_u, loss_rep_s, loss_rep_u, objective, prototype_gradient, total_loss,
    Batch, Gradients, LossBreakdown,
};
pub use train::{train, train_with_observer, EpochMetrics, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrototypeInit {
    /// Labeled category means for seen categories, greedy k-means++ seeds over unlabeled data for the rest.
    #[default]
    CentroidsKmeansPp,
    /// Semi-supervised k-means centroids from the same seeding.
    SemiSupervisedKmeans,
    /// Standard normal draws.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    pub tau_u: f64,
    pub tau_s: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// View noise std as a fraction of the mean feature norm.
    pub aug_std: f64,
    /// Train the linear adapter; the contrastive losses then drive updates too.
    pub train_adapter: bool,
    pub init: PrototypeInit,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            tau_u: 0.07,
            tau_s: 0.1,
            lambda: 0.35,
            epsilon: 1.0,
            lr: 0.1,
            momentum: 0.9,
            epochs: 200,
            batch_size: 128,
            seed: 0,
            aug_std: 0.05,
            train_adapter: false,
            init: PrototypeInit::CentroidsKmeansPp,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DselError::InvalidArgument(m.to_string()));
        if !(self.tau_u > 0.0 && self.tau_s > 0.0) {
            return bad("temperatures must be positive");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if !(self.epsilon >= 0.0) {
            return bad("epsilon must be non-negative");
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return bad("lr must be positive and momentum in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.aug_std >= 0.0) {
            return bad("augmentation std must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscoveryModel {
    /// K × dim prototype matrix.
    pub prototypes: Array2<f64>,
    /// dim × dim linear map applied to features before both heads.
    pub adapter: Option<Array2<f64>>,
    pub hyper: HyperParams,
    pub n_labeled_categories: usize,
}

impl DiscoveryModel {
    pub fn k(&self) -> usize {
        self.prototypes.nrows()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.ncols()
    }

    /// Adapter output for every row of `x`.
    pub fn project(&self, x: &Array2<f64>) -> Array2<f64> {
        match &self.adapter {
            Some(w) => x.dot(&w.t()),
            None => x.clone(),
        }
    }

    pub(crate) fn normalized_prototypes(&self) -> Result<(Array2<f64>, Array1<f64>)> {
        normalize_rows(&self.prototypes, "prototype")
    }
}

pub(crate) fn normalize_rows(
    x: &Array2<f64>,
    what: &'static str,
) -> Result<(Array2<f64>, Array1<f64>)> {
    let norms: Array1<f64> = x.outer_iter().map(|r| r.dot(&r).sqrt()).collect();
    if norms.iter().any(|&n| n == 0.0) {
        return Err(DselError::ZeroNorm(what));
    }
    let mut z = x.clone();
    for (mut r, &n) in z.outer_iter_mut().zip(norms.iter()) {
        r /= n;
    }
    Ok((z, norms))
}

/// Softmax over cosine similarities between `h` and the prototypes at temperature `tau`.
pub fn soft_labels(h: ArrayView1<'_, f64>, model: &DiscoveryModel, tau: f64) -> Result<Vec<f64>> {
    if h.len() != model.dim() {
        return Err(DselError::DimensionMismatch {
            expected: model.dim(),
            found: h.len(),
            row: 0,
        });
    }
    let n = h.dot(&h).sqrt();
    if n == 0.0 {
        return Err(DselError::ZeroNorm("feature"));
    }
    let (cn, _) = model.normalized_prototypes()?;
    let logits: Vec<f64> = cn.outer_iter().map(|c| c.dot(&h) / n / tau).collect();
    Ok(loss::softmax(&logits))
}

/// Index of the most probable prototype for every instance, lowest index on ties.
pub fn assign_labels(model: &DiscoveryModel, unlabeled: &EmbeddingSet) -> Result<Vec<usize>> {
    let h = model.project(unlabeled.features());
    let (cn, _) = model.normalized_prototypes()?;
    h.outer_iter()
        .map(|row| {
            let n = row.dot(&row).sqrt();
            if n == 0.0 {
                return Err(DselError::ZeroNorm("feature"));
            }
            let mut best = (0, f64::NEG_INFINITY);
            for (k, c) in cn.outer_iter().enumerate() {
                let s = c.dot(&row) / n;
                if s > best.1 {
                    best = (k, s);
                }
            }
            Ok(best.0)
        })
        .collect()
}

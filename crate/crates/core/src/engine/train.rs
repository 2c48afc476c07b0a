use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::loss::{objective, Batch, LossBreakdown};
use super::{DiscoveryModel, HyperParams, PrototypeInit};
use crate::clustering::{
    category_centroids, greedy_trials, kmeans_pp_indices, semi_supervised_kmeans,
    SemiSupervisedOptions,
};
use crate::data::{instance_weights, EmbeddingSet, MissingWeight, WeightAssignment};
use crate::error::{DselError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean of each loss term over the epoch's batches.
    pub losses: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: DiscoveryModel,
    pub history: Vec<EpochMetrics>,
}

pub fn train(
    labeled: &EmbeddingSet,
    unlabeled: &EmbeddingSet,
    weights: &WeightAssignment,
    hp: &HyperParams,
    k: usize,
) -> Result<TrainOutcome> {
    train_with_observer(labeled, unlabeled, weights, hp, k, |_| {})
}

fn initial_prototypes(
    labeled: &EmbeddingSet,
    unlabeled: &EmbeddingSet,
    hp: &HyperParams,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Array2<f64>> {
    let n_cat = labeled.n_categories();
    let dim = labeled.dim();
    let protos = match hp.init {
        PrototypeInit::CentroidsKmeansPp => {
            let means = if n_cat > 0 {
                category_centroids(labeled)?.centroids
            } else {
                Array2::zeros((0, dim))
            };
            let xu = unlabeled.features().view();
            let seeds = kmeans_pp_indices(xu, means.view(), k - n_cat, greedy_trials(k), rng);
            ndarray::concatenate(Axis(0), &[means.view(), xu.select(Axis(0), &seeds).view()])
                .expect("dims agree")
        }
        PrototypeInit::SemiSupervisedKmeans => {
            let opts = SemiSupervisedOptions {
                seed: hp.seed,
                ..Default::default()
            };
            semi_supervised_kmeans(labeled, unlabeled, k, opts)?
                .0
                .centroids
        }
        PrototypeInit::Random => {
            Array2::from_shape_simple_fn((k, dim), || StandardNormal.sample(rng))
        }
    };
    if protos.outer_iter().any(|r| r.dot(&r) == 0.0) {
        return Err(DselError::ZeroNorm("initial prototype"));
    }
    Ok(protos)
}

/// Mini-batch SGD with momentum over `labeled ∪ unlabeled`; `observe` sees every epoch.
pub fn train_with_observer(
    labeled: &EmbeddingSet,
    unlabeled: &EmbeddingSet,
    weights: &WeightAssignment,
    hp: &HyperParams,
    k: usize,
    mut observe: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    hp.validate()?;
    let labels = labeled.require_labels()?;
    let n_cat = labeled.n_categories();
    if k < n_cat {
        return Err(DselError::InvalidArgument(format!(
            "K={k} is smaller than the {n_cat} labeled categories"
        )));
    }
    if labeled.dim() != unlabeled.dim() {
        return Err(DselError::DimensionMismatch {
            expected: labeled.dim(),
            found: unlabeled.dim(),
            row: 0,
        });
    }
    if unlabeled.len() < k - n_cat {
        return Err(DselError::InvalidArgument(
            "fewer unlabeled instances than novel prototypes".into(),
        ));
    }
    let omega = instance_weights(weights, labeled, MissingWeight::Error)?;
    let dim = labeled.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);

    let prototypes = initial_prototypes(labeled, unlabeled, hp, k, &mut rng)?;
    let mut model = DiscoveryModel {
        prototypes,
        adapter: hp.train_adapter.then(|| Array2::eye(dim)),
        hyper: *hp,
        n_labeled_categories: n_cat,
    };

    let x = ndarray::concatenate(
        Axis(0),
        &[labeled.features().view(), unlabeled.features().view()],
    )
    .expect("dims checked above");
    let n = x.nrows();
    let nl = labeled.len();
    let mean_norm = x.outer_iter().map(|r| r.dot(&r).sqrt()).sum::<f64>() / n as f64;
    let noise = hp.aug_std * mean_norm;

    let mut vel_p = Array2::<f64>::zeros(model.prototypes.dim());
    let mut vel_a = Array2::<f64>::zeros((dim, dim));
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(hp.epochs);
    for epoch in 0..hp.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let mut n_batches = 0;
        for idx in order.chunks(hp.batch_size) {
            let base = x.select(Axis(0), idx);
            let mut view1 = base.clone();
            let mut view2 = base;
            for v in view1.iter_mut().chain(view2.iter_mut()) {
                let e: f64 = StandardNormal.sample(&mut rng);
                *v += noise * e;
            }
            let batch = Batch {
                view1,
                view2,
                labels: idx.iter().map(|&i| (i < nl).then(|| labels[i])).collect(),
                weights: idx
                    .iter()
                    .map(|&i| if i < nl { omega[i] } else { 1.0 })
                    .collect(),
            };
            let (parts, grads) = objective(&batch, &model, hp, true)?;
            if !parts.total.is_finite() {
                return Err(DselError::Diverged {
                    epoch,
                    detail: format!("non-finite loss {parts:?}"),
                });
            }
            let grads = grads.expect("gradients requested");
            vel_p = &vel_p * hp.momentum + &grads.prototypes;
            model.prototypes.scaled_add(-hp.lr, &vel_p);
            if let (Some(w), Some(g)) = (model.adapter.as_mut(), grads.adapter.as_ref()) {
                vel_a = &vel_a * hp.momentum + g;
                w.scaled_add(-hp.lr, &vel_a);
            }
            sum.rep_u += parts.rep_u;
            sum.rep_s += parts.rep_s;
            sum.cls_l += parts.cls_l;
            sum.cls_u += parts.cls_u;
            sum.entropy += parts.entropy;
            sum.total += parts.total;
            n_batches += 1;
        }
        if model
            .prototypes
            .outer_iter()
            .any(|r| !r.dot(&r).is_finite())
        {
            return Err(DselError::Diverged {
                epoch,
                detail: "prototype norm overflowed".into(),
            });
        }
        let nb = n_batches as f64;
        let metrics = EpochMetrics {
            epoch,
            losses: LossBreakdown {
                rep_u: sum.rep_u / nb,
                rep_s: sum.rep_s / nb,
                cls_l: sum.cls_l / nb,
                cls_u: sum.cls_u / nb,
                entropy: sum.entropy / nb,
                total: sum.total / nb,
            },
        };
        log::debug!("epoch {epoch}: total {:.5}", metrics.losses.total);
        observe(&metrics);
        history.push(metrics);
    }
    Ok(TrainOutcome { model, history })
}

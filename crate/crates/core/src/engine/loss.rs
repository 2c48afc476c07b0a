//! Contrastive, classification and self-distillation losses with analytic gradients.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{normalize_rows, DiscoveryModel, HyperParams};
use crate::error::{DselError, Result};

/// Two noisy views of a mini-batch; `labels[i]` is `Some` for labeled members.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub view1: Array2<f64>,
    pub view2: Array2<f64>,
    pub labels: Vec<Option<usize>>,
    /// ω_i per member; only read for labeled members.
    pub weights: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.view1.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.view1.nrows() == 0
    }

    fn validate(&self, dim: usize) -> Result<()> {
        let b = self.len();
        if b == 0 {
            return Err(DselError::EmptyInput);
        }
        if self.view2.dim() != self.view1.dim() || self.labels.len() != b || self.weights.len() != b
        {
            return Err(DselError::ShapeMismatch(
                "batch views, labels and weights disagree".into(),
            ));
        }
        if self.view1.ncols() != dim {
            return Err(DselError::DimensionMismatch {
                expected: dim,
                found: self.view1.ncols(),
                row: 0,
            });
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(DselError::InvalidArgument(
                "batch weights must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    fn labeled_rows(&self) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut weights = Vec::new();
        for (i, l) in self.labels.iter().enumerate() {
            if let Some(y) = l {
                rows.push(i);
                labels.push(*y);
                weights.push(self.weights[i]);
            }
        }
        (rows, labels, weights)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rep_u: f64,
    pub rep_s: f64,
    pub cls_l: f64,
    pub cls_u: f64,
    /// Entropy of the batch-mean prediction.
    pub entropy: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub prototypes: Array2<f64>,
    pub adapter: Option<Array2<f64>>,
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn log_sum_exp<I: Iterator<Item = f64> + Clone>(values: I) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Row-wise log-softmax.
fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut r in out.outer_iter_mut() {
        let lse = log_sum_exp(r.iter().copied());
        r.mapv_inplace(|v| v - lse);
    }
    out
}

/// Self-supervised contrastive loss over unit-normalized views; the denominator for
/// member i runs over the first views of every member.
pub fn loss_rep_u(z1: &Array2<f64>, z2: &Array2<f64>, tau_u: f64) -> f64 {
    rep_u_parts(z1, z2, tau_u).0
}

/// Value and column-softmax matrix of `S = z1 z2ᵀ / τ`.
fn rep_u_parts(z1: &Array2<f64>, z2: &Array2<f64>, tau: f64) -> (f64, Array2<f64>) {
    let b = z1.nrows();
    let s = z1.dot(&z2.t()) / tau;
    let mut q = Array2::zeros((b, b));
    let mut total = 0.0;
    for i in 0..b {
        let col = s.column(i);
        let lse = log_sum_exp(col.iter().copied());
        total += lse - s[[i, i]];
        for j in 0..b {
            q[[j, i]] = (s[[j, i]] - lse).exp();
        }
    }
    (total / b as f64, q)
}

/// Weighted supervised contrastive loss over the labeled members. Positives of anchor i
/// are the other members sharing its label; the denominator runs over all n ≠ i.
/// Anchors without positives contribute 0. `weights = None` means ω_i = 1.
pub fn loss_rep_s(
    z1: &Array2<f64>,
    z2: &Array2<f64>,
    labels: &[usize],
    weights: Option<&[f64]>,
    tau_s: f64,
) -> f64 {
    rep_s_parts(z1, z2, labels, weights, tau_s).0
}

fn rep_s_parts(
    z1: &Array2<f64>,
    z2: &Array2<f64>,
    labels: &[usize],
    weights: Option<&[f64]>,
    tau: f64,
) -> (f64, Array2<f64>) {
    let m = labels.len();
    let mut grad = Array2::zeros((m, m));
    if m == 0 {
        return (0.0, grad);
    }
    let t = z1.dot(&z2.t()) / tau;
    let mut total = 0.0;
    let mut skipped = 0;
    for i in 0..m {
        let positives: Vec<usize> = (0..m)
            .filter(|&p| p != i && labels[p] == labels[i])
            .collect();
        if positives.is_empty() {
            skipped += 1;
            continue;
        }
        let w = weights.map_or(1.0, |w| w[i]);
        let lse = log_sum_exp((0..m).filter(|&n| n != i).map(|n| t[[i, n]]));
        let mean_term =
            positives.iter().map(|&p| lse - t[[i, p]]).sum::<f64>() / positives.len() as f64;
        total += w * mean_term;
        let inv_pos = 1.0 / positives.len() as f64;
        for n in (0..m).filter(|&n| n != i) {
            let r = (t[[i, n]] - lse).exp();
            let pos = if labels[n] == labels[i] { inv_pos } else { 0.0 };
            grad[[i, n]] = w * (r - pos) / m as f64;
        }
    }
    if skipped > 0 {
        log::debug!("{skipped} labeled anchors without positives");
    }
    (total / m as f64, grad)
}

/// Weighted cross-entropy of the first-view predictions on the true labels.
pub fn loss_cls_l(logits: &Array2<f64>, labels: &[usize], weights: Option<&[f64]>) -> f64 {
    let m = labels.len();
    if m == 0 {
        return 0.0;
    }
    let logp = log_softmax_rows(logits);
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| weights.map_or(1.0, |w| w[i]) * -logp[[i, y]])
        .sum();
    total / m as f64
}

/// Cross-entropy from the second-view targets to the first-view predictions minus
/// ε times the entropy of the mean prediction over both views.
/// Returns (loss, entropy).
pub fn loss_cls_u(logits1: &Array2<f64>, logits2: &Array2<f64>, epsilon: f64) -> (f64, f64) {
    let b = logits1.nrows() as f64;
    let logp1 = log_softmax_rows(logits1);
    let p1 = logp1.mapv(f64::exp);
    let p2 = log_softmax_rows(logits2).mapv(f64::exp);
    let ce = -(&p2 * &logp1).sum() / b;
    let mean = mean_prediction(&p1, &p2);
    let h = entropy(&mean);
    (ce - epsilon * h, h)
}

fn mean_prediction(p1: &Array2<f64>, p2: &Array2<f64>) -> Array1<f64> {
    let b = p1.nrows() as f64;
    (p1.sum_axis(Axis(0)) + p2.sum_axis(Axis(0))) / (2.0 * b)
}

pub(crate) fn entropy(p: &Array1<f64>) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

/// (1 − λ)(rep_u + cls_u) + λ(rep_s + cls_l).
pub fn total_loss(parts: &LossBreakdown, lambda: f64) -> f64 {
    (1.0 - lambda) * (parts.rep_u + parts.cls_u) + lambda * (parts.rep_s + parts.cls_l)
}

/// Backpropagates through row normalization: dh = (dz − z (z·dz)) / ‖h‖.
fn normalize_backward(z: &Array2<f64>, norms: &Array1<f64>, dz: &Array2<f64>) -> Array2<f64> {
    let mut out = dz.clone();
    for ((mut o, zr), &n) in out.outer_iter_mut().zip(z.outer_iter()).zip(norms.iter()) {
        let proj = zr.dot(&o);
        o.zip_mut_with(&zr, |g, &zv| *g = (*g - zv * proj) / n);
    }
    out
}

/// Every loss term for `batch`, plus gradients with respect to the prototypes and,
/// when the adapter is trained, the adapter matrix.
pub fn objective(
    batch: &Batch,
    model: &DiscoveryModel,
    hp: &HyperParams,
    need_grad: bool,
) -> Result<(LossBreakdown, Option<Gradients>)> {
    batch.validate(model.dim())?;
    let lam = hp.lambda;
    let b = batch.len();
    let bf = b as f64;
    let h1 = model.project(&batch.view1);
    let h2 = model.project(&batch.view2);
    let (z1, n1) = normalize_rows(&h1, "feature")?;
    let (z2, n2) = normalize_rows(&h2, "feature")?;
    let (cn, c_norms) = model.normalized_prototypes()?;
    let s1 = z1.dot(&cn.t()) / hp.tau_s;
    let s2 = z2.dot(&cn.t()) / hp.tau_s;

    let (rows, labels, weights) = batch.labeled_rows();
    let (cls_u, ent) = loss_cls_u(&s1, &s2, hp.epsilon);
    let s1_lab = s1.select(Axis(0), &rows);
    let cls_l = loss_cls_l(&s1_lab, &labels, Some(&weights));
    let (rep_u, q) = rep_u_parts(&z1, &z2, hp.tau_u);
    let z1_lab = z1.select(Axis(0), &rows);
    let z2_lab = z2.select(Axis(0), &rows);
    let (rep_s, dt) = rep_s_parts(&z1_lab, &z2_lab, &labels, Some(&weights), hp.tau_s);
    let mut parts = LossBreakdown {
        rep_u,
        rep_s,
        cls_l,
        cls_u,
        entropy: ent,
        total: 0.0,
    };
    parts.total = total_loss(&parts, lam);
    if !need_grad {
        return Ok((parts, None));
    }

    let p1 = log_softmax_rows(&s1).mapv(f64::exp);
    let p2 = log_softmax_rows(&s2).mapv(f64::exp);
    let mean = mean_prediction(&p1, &p2);
    // g_k = −(ln p̄_k + 1) is dH/dp̄_k.
    let g: Array1<f64> = mean.mapv(|v| if v > 0.0 { -(v.ln() + 1.0) } else { 0.0 });

    let mut g1 = (&p1 - &p2) * ((1.0 - lam) / bf);
    let mut g2 = Array2::zeros(p2.dim());
    let ent_scale = -(1.0 - lam) * hp.epsilon / (2.0 * bf);
    for (p, gmat) in [(&p1, &mut g1), (&p2, &mut g2)] {
        for (pr, mut gr) in p.outer_iter().zip(gmat.outer_iter_mut()) {
            let pg = pr.dot(&g);
            for k in 0..pr.len() {
                gr[k] += ent_scale * pr[k] * (g[k] - pg);
            }
        }
    }
    let m = rows.len() as f64;
    for (li, &i) in rows.iter().enumerate() {
        let coef = lam * weights[li] / m;
        if coef == 0.0 {
            continue;
        }
        for k in 0..p1.ncols() {
            let target = if k == labels[li] { 1.0 } else { 0.0 };
            g1[[i, k]] += coef * (p1[[i, k]] - target);
        }
    }

    let d_cn = (g1.t().dot(&z1) + g2.t().dot(&z2)) / hp.tau_s;
    let d_protos = normalize_backward(&cn, &c_norms, &d_cn);

    let adapter = match (&model.adapter, hp.train_adapter) {
        (Some(_), true) => {
            let mut dz1 = g1.dot(&cn) / hp.tau_s;
            let mut dz2 = g2.dot(&cn) / hp.tau_s;
            let mut ds = q;
            for i in 0..b {
                ds[[i, i]] -= 1.0;
            }
            ds *= (1.0 - lam) / bf;
            dz1 += &(ds.dot(&z2) / hp.tau_u);
            dz2 += &(ds.t().dot(&z1) / hp.tau_u);
            let dt = dt * lam;
            let dz1_lab = dt.dot(&z2_lab) / hp.tau_s;
            let dz2_lab = dt.t().dot(&z1_lab) / hp.tau_s;
            for (li, &i) in rows.iter().enumerate() {
                dz1.row_mut(i)
                    .zip_mut_with(&dz1_lab.row(li), |a, b| *a += b);
                dz2.row_mut(i)
                    .zip_mut_with(&dz2_lab.row(li), |a, b| *a += b);
            }
            let dh1 = normalize_backward(&z1, &n1, &dz1);
            let dh2 = normalize_backward(&z2, &n2, &dz2);
            Some(dh1.t().dot(&batch.view1) + dh2.t().dot(&batch.view2))
        }
        _ => None,
    };
    Ok((
        parts,
        Some(Gradients {
            prototypes: d_protos,
            adapter,
        }),
    ))
}

/// Gradient of (1 − λ)·cls_u + λ·cls_l with respect to the prototypes.
pub fn prototype_gradient(
    batch: &Batch,
    model: &DiscoveryModel,
    hp: &HyperParams,
) -> Result<Array2<f64>> {
    let (_, g) = objective(batch, model, hp, true)?;
    Ok(g.expect("gradients requested").prototypes)
}

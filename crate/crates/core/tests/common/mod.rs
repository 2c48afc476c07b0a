#![allow(dead_code)]
//! Scalar reference implementations used as independent oracles.

use dsel::engine::{Batch, DiscoveryModel, HyperParams};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    v.iter().map(|x| x / n).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn apply(model: &DiscoveryModel, x: &[f64]) -> Vec<f64> {
    match &model.adapter {
        None => x.to_vec(),
        Some(w) => (0..w.nrows())
            .map(|r| dot(w.row(r).as_slice().unwrap(), x))
            .collect(),
    }
}

pub fn probs(z: &[f64], protos: &[Vec<f64>], tau: f64) -> Vec<f64> {
    let e: Vec<f64> = protos.iter().map(|c| (dot(z, c) / tau).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub struct Views {
    pub z1: Vec<Vec<f64>>,
    pub z2: Vec<Vec<f64>>,
    pub p1: Vec<Vec<f64>>,
    pub p2: Vec<Vec<f64>>,
}

pub fn views(batch: &Batch, model: &DiscoveryModel, tau_s: f64) -> Views {
    let protos: Vec<Vec<f64>> = model
        .prototypes
        .outer_iter()
        .map(|r| unit(&r.to_vec()))
        .collect();
    let z = |v: &ndarray::Array2<f64>| -> Vec<Vec<f64>> {
        v.outer_iter()
            .map(|r| unit(&apply(model, &r.to_vec())))
            .collect()
    };
    let z1 = z(&batch.view1);
    let z2 = z(&batch.view2);
    let p1 = z1.iter().map(|v| probs(v, &protos, tau_s)).collect();
    let p2 = z2.iter().map(|v| probs(v, &protos, tau_s)).collect();
    Views { z1, z2, p1, p2 }
}

pub fn rep_u(z1: &[Vec<f64>], z2: &[Vec<f64>], tau: f64) -> f64 {
    let b = z1.len();
    let mut total = 0.0;
    for i in 0..b {
        let num = (dot(&z1[i], &z2[i]) / tau).exp();
        let den: f64 = (0..b).map(|j| (dot(&z1[j], &z2[i]) / tau).exp()).sum();
        total += -(num / den).ln();
    }
    total / b as f64
}

pub fn rep_s(z1: &[Vec<f64>], z2: &[Vec<f64>], labels: &[usize], w: &[f64], tau: f64) -> f64 {
    let m = labels.len();
    if m == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..m {
        let pos: Vec<usize> = (0..m)
            .filter(|&p| p != i && labels[p] == labels[i])
            .collect();
        if pos.is_empty() {
            continue;
        }
        let den: f64 = (0..m)
            .filter(|&n| n != i)
            .map(|n| (dot(&z1[i], &z2[n]) / tau).exp())
            .sum();
        let mut s = 0.0;
        for &p in &pos {
            s += -((dot(&z1[i], &z2[p]) / tau).exp() / den).ln();
        }
        total += w[i] * s / pos.len() as f64;
    }
    total / m as f64
}

/// Full objective with the distillation targets optionally frozen to `targets`.
pub fn objective(
    batch: &Batch,
    model: &DiscoveryModel,
    hp: &HyperParams,
    targets: Option<&[Vec<f64>]>,
) -> f64 {
    let v = views(batch, model, hp.tau_s);
    let b = batch.labels.len();
    let k = model.prototypes.nrows();
    let p2 = targets.map_or(v.p2.clone(), |t| t.to_vec());
    let mut ce = 0.0;
    for i in 0..b {
        for c in 0..k {
            ce -= p2[i][c] * v.p1[i][c].ln();
        }
    }
    ce /= b as f64;
    let mut mean = vec![0.0; k];
    for i in 0..b {
        for c in 0..k {
            mean[c] += (v.p1[i][c] + v.p2[i][c]) / (2.0 * b as f64);
        }
    }
    let h: f64 = -mean.iter().map(|p| p * p.ln()).sum::<f64>();
    let cls_u = ce - hp.epsilon * h;
    let lab: Vec<usize> = (0..b).filter(|&i| batch.labels[i].is_some()).collect();
    let ys: Vec<usize> = lab.iter().map(|&i| batch.labels[i].unwrap()).collect();
    let ws: Vec<f64> = lab.iter().map(|&i| batch.weights[i]).collect();
    let cls_l = if lab.is_empty() {
        0.0
    } else {
        lab.iter()
            .zip(&ys)
            .zip(&ws)
            .map(|((&i, &y), &w)| -w * v.p1[i][y].ln())
            .sum::<f64>()
            / lab.len() as f64
    };
    let ru = rep_u(&v.z1, &v.z2, hp.tau_u);
    let z1l: Vec<Vec<f64>> = lab.iter().map(|&i| v.z1[i].clone()).collect();
    let z2l: Vec<Vec<f64>> = lab.iter().map(|&i| v.z2[i].clone()).collect();
    let rs = rep_s(&z1l, &z2l, &ys, &ws, hp.tau_s);
    (1.0 - hp.lambda) * (ru + cls_u) + hp.lambda * (rs + cls_l)
}

/// (1 − λ)·cls_u + λ·cls_l with frozen targets.
pub fn classifier_objective(
    batch: &Batch,
    model: &DiscoveryModel,
    hp: &HyperParams,
    targets: &[Vec<f64>],
) -> f64 {
    let full = objective(batch, model, hp, Some(targets));
    let v = views(batch, model, hp.tau_s);
    let lab: Vec<usize> = (0..batch.labels.len())
        .filter(|&i| batch.labels[i].is_some())
        .collect();
    let ys: Vec<usize> = lab.iter().map(|&i| batch.labels[i].unwrap()).collect();
    let ws: Vec<f64> = lab.iter().map(|&i| batch.weights[i]).collect();
    let z1l: Vec<Vec<f64>> = lab.iter().map(|&i| v.z1[i].clone()).collect();
    let z2l: Vec<Vec<f64>> = lab.iter().map(|&i| v.z2[i].clone()).collect();
    full - (1.0 - hp.lambda) * rep_u(&v.z1, &v.z2, hp.tau_u)
        - hp.lambda * rep_s(&z1l, &z2l, &ys, &ws, hp.tau_s)
}

/// `k` isotropic unit-variance Gaussian clusters whose centers are `sep` apart along
/// distinct axes (dim ≥ k), `per` points each; returns rows and planted labels.
pub fn planted(
    k: usize,
    per: usize,
    dim: usize,
    sep: f64,
    seed: u64,
) -> (ndarray::Array2<f64>, Vec<usize>) {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut x = ndarray::Array2::<f64>::zeros((k * per, dim));
    let mut labels = Vec::with_capacity(k * per);
    for c in 0..k {
        for i in 0..per {
            let mut row = x.row_mut(c * per + i);
            for v in row.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            row[c] += sep / std::f64::consts::SQRT_2;
            labels.push(c);
        }
    }
    (x, labels)
}

/// Minimum-cost matching over all permutations; `cost[i][j]` for row i to column j.
pub fn brute_force_assignment(cost: &[Vec<f64>]) -> f64 {
    fn rec(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
        if row == cost.len() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                best = best.min(cost[row][j] + rec(cost, row + 1, used));
                used[j] = false;
            }
        }
        best
    }
    let cols = cost.first().map_or(0, |r| r.len());
    rec(cost, 0, &mut vec![false; cols])
}

fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// Optimal transportation cost by enumerating every basic feasible solution of the LP
/// (all supports of size n + m − 1 whose equality system has a non-negative solution).
pub fn transport_by_vertices(cost: &[Vec<f64>], src: &[f64], tgt: &[f64]) -> f64 {
    transport_vertex_solution(cost, src, tgt).0
}

/// Optimal value and flow (rows = sources) by vertex enumeration.
pub fn transport_vertex_solution(
    cost: &[Vec<f64>],
    src: &[f64],
    tgt: &[f64],
) -> (f64, Vec<Vec<f64>>) {
    let (n, m) = (src.len(), tgt.len());
    let rank = n + m - 1;
    // row sums for every source, column sums for all but the last target (redundant)
    let constraint = |var: usize, row: usize| -> f64 {
        let (i, j) = (var / m, var % m);
        if row < n {
            (i == row) as u8 as f64
        } else {
            (j == row - n) as u8 as f64
        }
    };
    let rhs: Vec<f64> = src.iter().chain(&tgt[..m - 1]).copied().collect();
    let mut best = (f64::INFINITY, vec![vec![0.0; m]; n]);
    for support in combinations(n * m, rank) {
        let a: Vec<Vec<f64>> = (0..rank)
            .map(|r| support.iter().map(|&v| constraint(v, r)).collect())
            .collect();
        if let Some(x) = solve_dense(a, rhs.clone()) {
            if x.iter().all(|&v| v >= -1e-12) {
                let c: f64 = support
                    .iter()
                    .zip(&x)
                    .map(|(&v, f)| cost[v / m][v % m] * f)
                    .sum();
                if c < best.0 {
                    let mut flow = vec![vec![0.0; m]; n];
                    for (&v, &f) in support.iter().zip(&x) {
                        flow[v / m][v % m] = f.max(0.0);
                    }
                    best = (c, flow);
                }
            }
        }
    }
    best
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((r, c), || rng.sample(StandardNormal))
}

/// Random batch and model with K 2..=5, dim 2..=7 and 3..=9 members.
pub fn random_case(rng: &mut ChaCha8Rng, adapter: bool) -> (Batch, DiscoveryModel, HyperParams) {
    let k = rng.random_range(2..=5);
    let dim = rng.random_range(2..=7);
    let b = rng.random_range(3..=9);
    let n_cat = rng.random_range(1..=k);
    let labels = (0..b)
        .map(|_| rng.random_bool(0.6).then(|| rng.random_range(0..n_cat)))
        .collect();
    let weights = (0..b).map(|_| rng.random_range(0.0..3.0)).collect();
    let hp = HyperParams {
        tau_u: rng.random_range(0.3..1.0),
        tau_s: rng.random_range(0.3..1.0),
        lambda: rng.random_range(0.0..1.0),
        epsilon: rng.random_range(0.0..2.0),
        train_adapter: adapter,
        ..Default::default()
    };
    let model = DiscoveryModel {
        prototypes: random_matrix(rng, k, dim),
        adapter: adapter.then(|| Array2::eye(dim) + random_matrix(rng, dim, dim) * 0.3),
        hyper: hp,
        n_labeled_categories: n_cat,
    };
    let batch = Batch {
        view1: random_matrix(rng, b, dim),
        view2: random_matrix(rng, b, dim),
        labels,
        weights,
    };
    (batch, model, hp)
}

pub fn rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff = (a - b).mapv(|v| v * v).sum().sqrt();
    let scale = a
        .mapv(|v| v * v)
        .sum()
        .sqrt()
        .max(b.mapv(|v| v * v).sum().sqrt())
        .max(1e-8);
    diff / scale
}

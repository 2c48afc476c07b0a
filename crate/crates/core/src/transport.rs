//! Ground costs, exact Earth Mover's Distance by the transportation simplex, and
//! domain similarity.

use std::collections::VecDeque;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::CentroidSet;
use crate::data::format_sig9;
use crate::error::{DselError, Result};

pub const MASS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    #[default]
    Euclidean,
    CosineDistance,
    L2normEuclidean,
}

impl FromStr for Metric {
    type Err = DselError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" | "cosine-distance" => Ok(Metric::CosineDistance),
            "l2norm" | "l2norm-euclidean" => Ok(Metric::L2normEuclidean),
            other => Err(DselError::InvalidArgument(format!(
                "unknown metric {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub d: Array2<f64>,
    pub metric: Metric,
}

impl CostMatrix {
    pub fn new(d: Array2<f64>, metric: Metric) -> Result<Self> {
        if d.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(DselError::InvalidArgument(
                "costs must be finite and non-negative".into(),
            ));
        }
        Ok(Self { d, metric })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.d.dim()
    }
}

/// Normalized per-centroid masses.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalWeights(Vec<f64>);

impl MarginalWeights {
    /// Accepts masses as given; they must be finite and non-negative.
    pub fn new(mass: Vec<f64>) -> Result<Self> {
        if mass.is_empty() {
            return Err(DselError::EmptyInput);
        }
        if mass.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(DselError::InvalidArgument(
                "masses must be finite and non-negative".into(),
            ));
        }
        Ok(Self(mass))
    }

    /// Masses proportional to instance counts.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(DselError::AllZeroWeights);
        }
        Self::new(counts.iter().map(|&c| c as f64 / total as f64).collect())
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowMatrix {
    pub k: Array2<f64>,
    pub source_marginals: Vec<f64>,
    pub target_marginals: Vec<f64>,
}

impl FlowMatrix {
    pub fn total_mass(&self) -> f64 {
        self.k.sum()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        let header: Vec<String> = (0..self.k.ncols()).map(|j| format!("t{j}")).collect();
        writeln!(out, "{}", header.join(",")).expect("in-memory write");
        for r in self.k.outer_iter() {
            let line: Vec<String> = r.iter().map(|v| format_sig9(*v)).collect();
            writeln!(out, "{}", line.join(",")).expect("in-memory write");
        }
        fs::write(path, out).map_err(|e| DselError::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmdSolution {
    pub value: f64,
    pub flow: FlowMatrix,
    /// Dual potentials u (rows) and v (columns) with u_i + v_j = d_ij on basic cells.
    pub row_potentials: Vec<f64>,
    pub col_potentials: Vec<f64>,
    pub pivots: usize,
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn pairwise_cost(a: &CentroidSet, b: &CentroidSet, metric: Metric) -> Result<CostMatrix> {
    if a.dim() != b.dim() {
        return Err(DselError::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
            row: 0,
        });
    }
    let prep = |set: &CentroidSet| -> Result<Vec<Vec<f64>>> {
        set.centroids
            .outer_iter()
            .map(|r| {
                let v = r.to_vec();
                match metric {
                    Metric::Euclidean => Ok(v),
                    Metric::CosineDistance | Metric::L2normEuclidean => {
                        let n = l2(&v);
                        if n == 0.0 {
                            Err(DselError::ZeroNorm("centroid"))
                        } else {
                            Ok(v.iter().map(|x| x / n).collect())
                        }
                    }
                }
            })
            .collect()
    };
    let ra = prep(a)?;
    let rb = prep(b)?;
    let rows: Vec<Vec<f64>> = ra
        .par_iter()
        .map(|x| {
            rb.iter()
                .map(|y| match metric {
                    Metric::Euclidean | Metric::L2normEuclidean => {
                        crate::clustering::sq_dist(x, y).sqrt()
                    }
                    Metric::CosineDistance => {
                        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
                        (1.0 - dot).max(0.0)
                    }
                })
                .collect()
        })
        .collect();
    let d = Array2::from_shape_fn((ra.len(), rb.len()), |(i, j)| rows[i][j]);
    CostMatrix::new(d, metric)
}

/// Exact EMD between two discrete distributions. Masses must each sum to 1.
pub fn solve_emd(
    cost: &CostMatrix,
    src: &MarginalWeights,
    tgt: &MarginalWeights,
) -> Result<EmdSolution> {
    let (n, m) = cost.shape();
    if src.len() != n || tgt.len() != m {
        return Err(DselError::ShapeMismatch(format!(
            "cost {n}x{m} with marginals of length {} and {}",
            src.len(),
            tgt.len()
        )));
    }
    let (sa, sb) = (src.total(), tgt.total());
    if (sa - sb).abs() > MASS_TOL || (sa - 1.0).abs() > MASS_TOL {
        return Err(DselError::InfeasibleMarginals {
            source_mass: sa,
            target_mass: sb,
        });
    }
    let (a, b) = (src.as_slice(), tgt.as_slice());
    // solve one canonical orientation so that swapping the two sides is exact
    let transposed = prefer_transpose(&cost.d, a, b);
    let (flow, u, v, pivots) = if transposed {
        let ct = cost.d.t().as_standard_layout().into_owned();
        let mut tp = Transportation::northwest(&ct, b, a);
        tp.optimize();
        (tp.flow_matrix().reversed_axes(), tp.v, tp.u, tp.pivots)
    } else {
        let mut tp = Transportation::northwest(&cost.d, a, b);
        tp.optimize();
        (tp.flow_matrix(), tp.u, tp.v, tp.pivots)
    };
    let mass = sorted_sum(flow.iter().copied());
    let weighted = sorted_sum(flow.iter().zip(cost.d.iter()).map(|(k, d)| k * d));
    debug_assert!(
        (mass - 1.0).abs() <= MASS_TOL,
        "flow mass {mass} differs from 1"
    );
    Ok(EmdSolution {
        value: weighted / mass,
        flow: FlowMatrix {
            k: flow.as_standard_layout().into_owned(),
            source_marginals: a.to_vec(),
            target_marginals: b.to_vec(),
        },
        row_potentials: u,
        col_potentials: v,
        pivots,
    })
}

fn prefer_transpose(d: &Array2<f64>, a: &[f64], b: &[f64]) -> bool {
    let (n, m) = d.dim();
    if n != m {
        return n > m;
    }
    let lex = |x: &mut dyn Iterator<Item = (f64, f64)>| {
        x.map(|(p, q)| p.total_cmp(&q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    };
    let by_marginals = lex(&mut a.iter().copied().zip(b.iter().copied()));
    if by_marginals.is_ne() {
        return by_marginals.is_gt();
    }
    lex(&mut d.iter().copied().zip(d.t().iter().copied())).is_gt()
}

fn sorted_sum(terms: impl Iterator<Item = f64>) -> f64 {
    let mut t: Vec<f64> = terms.filter(|v| *v != 0.0).collect();
    t.sort_by(f64::total_cmp);
    t.iter().sum()
}

/// Transportation simplex over a spanning-tree basis of `n + m - 1` cells,
/// with Bland's smallest-index rule for both entering and leaving cells.
struct Transportation<'a> {
    cost: &'a Array2<f64>,
    n: usize,
    m: usize,
    /// Basic cells as (row, col, flow).
    basis: Vec<(usize, usize, f64)>,
    u: Vec<f64>,
    v: Vec<f64>,
    pivots: usize,
}

impl<'a> Transportation<'a> {
    fn northwest(cost: &'a Array2<f64>, a: &[f64], b: &[f64]) -> Self {
        let (n, m) = cost.dim();
        let mut supply = a.to_vec();
        let mut demand = b.to_vec();
        let mut basis = Vec::with_capacity(n + m - 1);
        let (mut i, mut j) = (0, 0);
        loop {
            if i == n - 1 && j == m - 1 {
                basis.push((i, j, supply[i].min(demand[j]).max(0.0)));
                break;
            }
            let move_down = if i == n - 1 {
                false
            } else if j == m - 1 {
                true
            } else {
                supply[i] <= demand[j]
            };
            if move_down {
                let x = supply[i].min(demand[j]).max(0.0);
                basis.push((i, j, x));
                demand[j] -= x;
                supply[i] = 0.0;
                i += 1;
            } else {
                let x = demand[j].min(supply[i]).max(0.0);
                basis.push((i, j, x));
                supply[i] -= x;
                demand[j] = 0.0;
                j += 1;
            }
        }
        Self {
            cost,
            n,
            m,
            basis,
            u: vec![0.0; n],
            v: vec![0.0; m],
            pivots: 0,
        }
    }

    /// Adjacency of the basis tree over nodes `0..n` (rows) and `n..n+m` (columns).
    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.n + self.m];
        for (b, &(i, j, _)) in self.basis.iter().enumerate() {
            adj[i].push((self.n + j, b));
            adj[self.n + j].push((i, b));
        }
        adj
    }

    fn potentials(&mut self, adj: &[Vec<(usize, usize)>]) {
        let total = self.n + self.m;
        let mut pot = vec![f64::NAN; total];
        let mut seen = vec![false; total];
        let mut queue = VecDeque::from([0usize]);
        pot[0] = 0.0;
        seen[0] = true;
        while let Some(node) = queue.pop_front() {
            for &(next, b) in &adj[node] {
                if seen[next] {
                    continue;
                }
                let (i, j, _) = self.basis[b];
                let c = self.cost[[i, j]];
                pot[next] = c - pot[node];
                seen[next] = true;
                queue.push_back(next);
            }
        }
        self.u.copy_from_slice(&pot[..self.n]);
        self.v.copy_from_slice(&pot[self.n..]);
    }

    /// Basis-cell indices on the tree path from row node `i` to column node `n + j`.
    fn path(&self, adj: &[Vec<(usize, usize)>], i: usize, j: usize) -> Vec<usize> {
        let total = self.n + self.m;
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; total];
        let mut seen = vec![false; total];
        let mut queue = VecDeque::from([i]);
        seen[i] = true;
        let goal = self.n + j;
        while let Some(node) = queue.pop_front() {
            if node == goal {
                break;
            }
            for &(next, b) in &adj[node] {
                if !seen[next] {
                    seen[next] = true;
                    parent[next] = Some((node, b));
                    queue.push_back(next);
                }
            }
        }
        let mut cells = Vec::new();
        let mut node = goal;
        while let Some((prev, b)) = parent[node] {
            cells.push(b);
            node = prev;
        }
        cells.reverse();
        cells
    }

    fn optimize(&mut self) {
        let scale = self.cost.iter().fold(1.0f64, |a, &c| a.max(c));
        let tol = 1e-12 * scale;
        let max_pivots = 50 * (self.n * self.m).max(16);
        loop {
            let adj = self.adjacency();
            self.potentials(&adj);
            let mut in_basis = vec![false; self.n * self.m];
            for &(i, j, _) in &self.basis {
                in_basis[i * self.m + j] = true;
            }
            let entering = (0..self.n * self.m).find(|&idx| {
                let (i, j) = (idx / self.m, idx % self.m);
                !in_basis[idx] && self.cost[[i, j]] - self.u[i] - self.v[j] < -tol
            });
            let Some(idx) = entering else { break };
            if self.pivots >= max_pivots {
                log::warn!("transportation simplex stopped after {max_pivots} pivots");
                break;
            }
            let (ei, ej) = (idx / self.m, idx % self.m);
            // The path from row ei to column ej alternates (ei,·) -, (·,·) +, ...
            let cycle = self.path(&adj, ei, ej);
            let leaving = cycle
                .iter()
                .step_by(2)
                .copied()
                .min_by(|&a, &b| {
                    let (ai, aj, af) = self.basis[a];
                    let (bi, bj, bf) = self.basis[b];
                    af.total_cmp(&bf)
                        .then((ai * self.m + aj).cmp(&(bi * self.m + bj)))
                })
                .expect("cycle has a decreasing cell");
            let theta = self.basis[leaving].2;
            for (pos, &b) in cycle.iter().enumerate() {
                if pos % 2 == 0 {
                    self.basis[b].2 -= theta;
                } else {
                    self.basis[b].2 += theta;
                }
            }
            self.basis[leaving] = (ei, ej, theta);
            self.pivots += 1;
        }
    }

    fn flow_matrix(&self) -> Array2<f64> {
        let mut k = Array2::zeros((self.n, self.m));
        for &(i, j, f) in &self.basis {
            k[[i, j]] = f.max(0.0);
        }
        k
    }
}

pub fn domain_similarity(emd_value: f64, gamma: f64) -> f64 {
    (-gamma * emd_value).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceDistances {
    /// d_{i,:}; `f64::INFINITY` for rows that carry no flow.
    pub distances: Vec<f64>,
    pub zero_mass_rows: Vec<usize>,
}

/// Flow-weighted mean ground distance of each source row to the target.
pub fn per_source_distance(flow: &FlowMatrix, cost: &CostMatrix) -> Result<SourceDistances> {
    if flow.k.dim() != cost.d.dim() {
        return Err(DselError::ShapeMismatch(format!(
            "flow {:?} vs cost {:?}",
            flow.k.dim(),
            cost.d.dim()
        )));
    }
    let mut distances = Vec::with_capacity(flow.k.nrows());
    let mut zero_mass_rows = Vec::new();
    for (i, (kr, dr)) in flow.k.outer_iter().zip(cost.d.outer_iter()).enumerate() {
        let mass: f64 = kr.sum();
        if mass <= 0.0 {
            zero_mass_rows.push(i);
            distances.push(f64::INFINITY);
        } else {
            distances.push(kr.iter().zip(dr.iter()).map(|(k, d)| k * d).sum::<f64>() / mass);
        }
    }
    if !zero_mass_rows.is_empty() {
        log::warn!("{} source rows carry no flow", zero_mass_rows.len());
    }
    Ok(SourceDistances {
        distances,
        zero_mass_rows,
    })
}

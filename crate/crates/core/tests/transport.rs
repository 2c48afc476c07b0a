mod common;

use dsel::clustering::{CentroidOrigin, CentroidSet};
use dsel::transport::{
    domain_similarity, pairwise_cost, per_source_distance, solve_emd, CostMatrix, MarginalWeights,
    Metric,
};
use dsel::DselError;
use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cset(c: Array2<f64>) -> CentroidSet {
    let n = c.nrows();
    CentroidSet {
        centroids: c,
        counts: vec![1; n],
        origin: CentroidOrigin::UnlabeledClusters,
    }
}

fn random_masses(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

fn random_points(rng: &mut impl Rng, n: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, dim), || rng.random_range(-5.0..5.0))
}

fn emd(a: &Array2<f64>, wa: &[f64], b: &Array2<f64>, wb: &[f64]) -> f64 {
    let cost = pairwise_cost(&cset(a.clone()), &cset(b.clone()), Metric::Euclidean).unwrap();
    let src = MarginalWeights::new(wa.to_vec()).unwrap();
    let tgt = MarginalWeights::new(wb.to_vec()).unwrap();
    solve_emd(&cost, &src, &tgt).unwrap().value
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

#[test]
fn cost_examples() {
    let a = cset(array![[0.0, 0.0], [1.0, 2.0]]);
    let c = pairwise_cost(&a, &a, Metric::Euclidean).unwrap();
    assert_eq!((c.d[[0, 0]], c.d[[1, 1]]), (0.0, 0.0));
    let c = pairwise_cost(
        &cset(array![[0.0, 0.0]]),
        &cset(array![[3.0, 4.0]]),
        Metric::Euclidean,
    )
    .unwrap();
    assert_eq!(c.d[[0, 0]], 5.0);
    let c = pairwise_cost(
        &cset(array![[1.0, 0.0]]),
        &cset(array![[0.0, 1.0]]),
        Metric::CosineDistance,
    )
    .unwrap();
    assert_eq!(c.d[[0, 0]], 1.0);
    let c = pairwise_cost(
        &cset(array![[2.0, 0.0]]),
        &cset(array![[0.0, 5.0]]),
        Metric::L2normEuclidean,
    )
    .unwrap();
    assert!((c.d[[0, 0]] - 2f64.sqrt()).abs() < 1e-15);
}

#[test]
fn cost_zero_norm_errors() {
    let z = cset(array![[0.0, 0.0]]);
    let o = cset(array![[1.0, 0.0]]);
    for m in [Metric::CosineDistance, Metric::L2normEuclidean] {
        assert!(matches!(
            pairwise_cost(&z, &o, m),
            Err(DselError::ZeroNorm(_))
        ));
    }
    assert!(pairwise_cost(&z, &o, Metric::Euclidean).is_ok());
}

#[test]
fn line_example() {
    let v = emd(&array![[0.0], [2.0]], &[0.5, 0.5], &array![[1.0]], &[1.0]);
    assert!((v - 1.0).abs() < 1e-15);
}

#[test]
fn identical_sets_give_zero_and_diagonal_flow() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = random_points(&mut rng, 5, 3);
    let w = random_masses(&mut rng, 5);
    let cost = pairwise_cost(&cset(a.clone()), &cset(a), Metric::Euclidean).unwrap();
    let s = MarginalWeights::new(w.clone()).unwrap();
    let sol = solve_emd(&cost, &s, &s).unwrap();
    assert_eq!(sol.value, 0.0);
    for i in 0..5 {
        assert!((sol.flow.k[[i, i]] - w[i]).abs() < 1e-12);
    }
}

#[test]
fn infeasible_marginals_rejected() {
    let cost = CostMatrix::new(Array2::ones((2, 2)), Metric::Euclidean).unwrap();
    let a = MarginalWeights::new(vec![0.5, 0.5]).unwrap();
    let b = MarginalWeights::new(vec![0.5, 0.6]).unwrap();
    assert!(matches!(
        solve_emd(&cost, &a, &b),
        Err(DselError::InfeasibleMarginals { .. })
    ));
}

#[test]
fn matches_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..100 {
        let (n, m) = (rng.random_range(1..5), rng.random_range(1..5));
        let cost = Array2::from_shape_simple_fn((n, m), || rng.random_range(0.0..10.0));
        let (a, b) = (random_masses(&mut rng, n), random_masses(&mut rng, m));
        let c = CostMatrix::new(cost.clone(), Metric::Euclidean).unwrap();
        let sol = solve_emd(
            &c,
            &MarginalWeights::new(a.clone()).unwrap(),
            &MarginalWeights::new(b.clone()).unwrap(),
        )
        .unwrap();
        let oracle = common::transport_by_vertices(&rows(&cost), &a, &b);
        assert!(
            (sol.value - oracle).abs() <= 1e-9,
            "trial {trial}: {} vs {oracle}",
            sol.value
        );
    }
}

#[test]
fn duality_certificate() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let (n, m) = (rng.random_range(2..12), rng.random_range(2..12));
        let cost = Array2::from_shape_simple_fn((n, m), || rng.random_range(0.0..10.0));
        let (a, b) = (random_masses(&mut rng, n), random_masses(&mut rng, m));
        let c = CostMatrix::new(cost.clone(), Metric::Euclidean).unwrap();
        let sol = solve_emd(
            &c,
            &MarginalWeights::new(a.clone()).unwrap(),
            &MarginalWeights::new(b.clone()).unwrap(),
        )
        .unwrap();
        let (u, v) = (&sol.row_potentials, &sol.col_potentials);
        for i in 0..n {
            for j in 0..m {
                assert!(u[i] + v[j] <= cost[[i, j]] + 1e-8);
            }
        }
        let dual: f64 = u.iter().zip(&a).map(|(x, y)| x * y).sum::<f64>()
            + v.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>();
        assert!((dual - sol.value).abs() <= 1e-8);
    }
}

/// Greedy cheapest-cell flow: always feasible, never better than the optimum.
fn greedy_flow_cost(cost: &Array2<f64>, a: &[f64], b: &[f64]) -> f64 {
    let (mut a, mut b) = (a.to_vec(), b.to_vec());
    let mut cells: Vec<(usize, usize)> = (0..a.len())
        .flat_map(|i| (0..b.len()).map(move |j| (i, j)))
        .collect();
    cells.sort_by(|x, y| cost[*x].total_cmp(&cost[*y]));
    let mut total = 0.0;
    for (i, j) in cells {
        let f = a[i].min(b[j]);
        if f > 0.0 {
            total += f * cost[[i, j]];
            a[i] -= f;
            b[j] -= f;
        }
    }
    total
}

#[test]
fn per_source_distance_examples() {
    let c = CostMatrix::new(array![[2.0]], Metric::Euclidean).unwrap();
    let w = MarginalWeights::new(vec![1.0]).unwrap();
    let sol = solve_emd(&c, &w, &w).unwrap();
    assert_eq!(per_source_distance(&sol.flow, &c).unwrap().distances, [2.0]);

    let c = CostMatrix::new(
        array![[1.0, 9.0, 9.0], [9.0, 2.0, 9.0], [9.0, 9.0, 3.0]],
        Metric::Euclidean,
    )
    .unwrap();
    let w = MarginalWeights::uniform(3).unwrap();
    let sol = solve_emd(&c, &w, &w).unwrap();
    let d = per_source_distance(&sol.flow, &c).unwrap().distances;
    for (i, v) in d.iter().enumerate() {
        assert!((v - (i + 1) as f64).abs() < 1e-12);
    }
}

#[test]
fn per_source_distance_matches_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..30 {
        let cost = Array2::from_shape_simple_fn((3, 2), || rng.random_range(0.0..10.0));
        let (a, b) = (random_masses(&mut rng, 3), random_masses(&mut rng, 2));
        let c = CostMatrix::new(cost.clone(), Metric::Euclidean).unwrap();
        let sol = solve_emd(
            &c,
            &MarginalWeights::new(a.clone()).unwrap(),
            &MarginalWeights::new(b).unwrap(),
        )
        .unwrap();
        let d = per_source_distance(&sol.flow, &c).unwrap().distances;
        // with 2 targets every source row is fully served, so row mass equals its marginal
        for i in 0..3 {
            let direct = (0..2)
                .map(|j| sol.flow.k[[i, j]] * cost[[i, j]])
                .sum::<f64>()
                / a[i];
            assert!((d[i] - direct).abs() < 1e-9);
        }
    }
}

#[test]
fn zero_flow_rows_are_infinite() {
    let c = CostMatrix::new(array![[1.0], [2.0]], Metric::Euclidean).unwrap();
    let sol = solve_emd(
        &c,
        &MarginalWeights::new(vec![1.0, 0.0]).unwrap(),
        &MarginalWeights::new(vec![1.0]).unwrap(),
    )
    .unwrap();
    let d = per_source_distance(&sol.flow, &c).unwrap();
    assert_eq!(d.distances[0], 1.0);
    assert!(d.distances[1].is_infinite());
    assert_eq!(d.zero_mass_rows, [1]);
    let wrong = CostMatrix::new(Array2::ones((3, 1)), Metric::Euclidean).unwrap();
    assert!(matches!(
        per_source_distance(&sol.flow, &wrong),
        Err(DselError::ShapeMismatch(_))
    ));
}

#[test]
fn similarity_examples() {
    for g in [0.1, 1.0, 7.0] {
        assert_eq!(domain_similarity(0.0, g), 1.0);
    }
    assert!((domain_similarity(2f64.ln(), 1.0) - 0.5).abs() < 1e-15);
}

proptest! {
    #[test]
    fn greedy_flow_never_beats_optimum(seed: u64, n in 1usize..8, m in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cost = Array2::from_shape_simple_fn((n, m), || rng.random_range(0.0..10.0));
        let (a, b) = (random_masses(&mut rng, n), random_masses(&mut rng, m));
        let c = CostMatrix::new(cost.clone(), Metric::Euclidean).unwrap();
        let sol = solve_emd(&c, &MarginalWeights::new(a.clone()).unwrap(), &MarginalWeights::new(b.clone()).unwrap()).unwrap();
        prop_assert!(sol.value <= greedy_flow_cost(&cost, &a, &b) + 1e-12);
        for i in 0..n {
            prop_assert!((sol.flow.k.row(i).sum() - a[i]).abs() <= 1e-8);
        }
        for j in 0..m {
            prop_assert!((sol.flow.k.column(j).sum() - b[j]).abs() <= 1e-8);
        }
        prop_assert!(sol.flow.k.iter().all(|&f| f >= 0.0));
    }

    #[test]
    fn emd_is_a_metric(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes: Vec<usize> = (0..3).map(|_| rng.random_range(1..6)).collect();
        let pts: Vec<Array2<f64>> = sizes.iter().map(|&n| random_points(&mut rng, n, 3)).collect();
        let ws: Vec<Vec<f64>> = sizes.iter().map(|&n| random_masses(&mut rng, n)).collect();
        let d = |i: usize, j: usize| emd(&pts[i], &ws[i], &pts[j], &ws[j]);
        prop_assert_eq!(d(0, 0), 0.0);
        prop_assert_eq!(d(0, 1), d(1, 0));
        prop_assert!(d(0, 2) <= d(0, 1) + d(1, 2) + 1e-8);
    }

    #[test]
    fn similarity_strictly_decreasing(a in 0.0f64..20.0, b in 0.0f64..20.0, g in 0.01f64..5.0) {
        prop_assume!((a - b).abs() > 1e-6);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(domain_similarity(lo, g) > domain_similarity(hi, g));
    }
}

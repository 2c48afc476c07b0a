mod common;

use dsel::clustering::{CentroidOrigin, CentroidSet};
use dsel::data::{EmbeddingSet, WeightAssignment};
use dsel::selection::{
    beta_pdf, beta_weights, binning_select, category_similarity, chunk, greedy_similar_selection,
    harden_weights, resampling_distribution, BetaParams, BinningParams, MarginalMode,
    SimilarityReduce,
};
use dsel::transport::{domain_similarity, pairwise_cost, Metric};
use dsel::DselError;
use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn cset(c: Array2<f64>, counts: Vec<usize>) -> CentroidSet {
    CentroidSet {
        centroids: c,
        counts,
        origin: CentroidOrigin::LabeledCategories,
    }
}

fn factorial(n: u64) -> f64 {
    (1..=n).product::<u64>() as f64
}

/// Beta density with the Beta function evaluated from factorials (integer parameters).
fn beta_closed_form(x: f64, a: u64, b: u64) -> f64 {
    let inv_b = factorial(a + b - 1) / (factorial(a - 1) * factorial(b - 1));
    x.powi(a as i32 - 1) * (1.0 - x).powi(b as i32 - 1) * inv_b
}

fn simpson(f: impl Fn(f64) -> f64, n: usize) -> f64 {
    let h = 1.0 / n as f64;
    let mut s = f(0.0) + f(1.0);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Gaussian blobs of `per` points around each center.
fn blobs(centers: &[[f64; 2]], per: usize, std: f64, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::zeros((centers.len() * per, 2));
    let mut y = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for i in 0..per {
            for j in 0..2 {
                let e: f64 = StandardNormal.sample(&mut rng);
                x[[c * per + i, j]] = center[j] + std * e;
            }
            y.push(c);
        }
    }
    (x, y)
}

const SQUARE: [[f64; 2]; 4] = [[0.0, 0.0], [3.0, 0.0], [0.0, 3.0], [3.0, 3.0]];

#[test]
fn greedy_full_budget_selects_everything() {
    let s = cset(array![[0.0, 0.0], [1.0, 1.0], [5.0, 2.0]], vec![1, 2, 3]);
    let t = cset(array![[0.5, 0.5]], vec![4]);
    let r = greedy_similar_selection(&s, &t, 3, Metric::Euclidean, MarginalMode::Counts).unwrap();
    assert_eq!(r.weights.to_vec(3).unwrap(), [1.0; 3]);
    assert!(greedy_similar_selection(&s, &t, 4, Metric::Euclidean, MarginalMode::Counts).is_err());
}

#[test]
fn greedy_prefers_coincident_category() {
    let s = cset(array![[100.0, 0.0], [1.0, 1.0]], vec![5, 5]);
    let t = cset(array![[1.0, 1.0]], vec![3]);
    let r = greedy_similar_selection(&s, &t, 1, Metric::Euclidean, MarginalMode::Counts).unwrap();
    assert_eq!(r.weights.to_vec(2).unwrap(), [0.0, 1.0]);
}

#[test]
fn greedy_matches_subset_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let src = Array2::from_shape_simple_fn((5, 2), || rng.random_range(-4.0..4.0));
        let tgt = Array2::from_shape_simple_fn((3, 2), || rng.random_range(-4.0..4.0));
        let sc: Vec<usize> = (0..5).map(|_| rng.random_range(1..10)).collect();
        let tc: Vec<usize> = (0..3).map(|_| rng.random_range(1..10)).collect();
        let (s, t) = (cset(src, sc.clone()), cset(tgt, tc.clone()));
        let budget = rng.random_range(1..5);
        let r = greedy_similar_selection(&s, &t, budget, Metric::Euclidean, MarginalMode::Counts)
            .unwrap();

        let cost = pairwise_cost(&s, &t, Metric::Euclidean).unwrap().d;
        let rows: Vec<Vec<f64>> = cost.outer_iter().map(|r| r.to_vec()).collect();
        let norm = |c: &[usize]| -> Vec<f64> {
            let total: usize = c.iter().sum();
            c.iter().map(|&v| v as f64 / total as f64).collect()
        };
        let (_, flow) = common::transport_vertex_solution(&rows, &norm(&sc), &norm(&tc));
        let d: Vec<f64> = (0..5)
            .map(|i| {
                (0..3).map(|j| flow[i][j] * rows[i][j]).sum::<f64>() / flow[i].iter().sum::<f64>()
            })
            .collect();
        let best = (0u32..32)
            .filter(|m| m.count_ones() as usize == budget)
            .min_by(|a, b| {
                let mean = |m: u32| {
                    (0..5)
                        .filter(|i| m & (1 << i) != 0)
                        .map(|i| d[i])
                        .sum::<f64>()
                };
                mean(*a).total_cmp(&mean(*b))
            })
            .unwrap();
        let chosen: u32 = (0..5)
            .filter(|&i| r.weights.get(i) == Some(1.0))
            .map(|i| 1 << i)
            .sum();
        assert_eq!(chosen, best);
    }
}

#[test]
fn beta_uniform_and_spot_values() {
    let uniform = BetaParams::new(1.0, 1.0);
    for i in 0..=20 {
        assert_eq!(beta_pdf(i as f64 / 20.0, &uniform).unwrap(), 1.0);
    }
    assert!((beta_pdf(0.5, &BetaParams::new(2.0, 2.0)).unwrap() - 1.5).abs() < 1e-9);
    assert!((beta_pdf(0.5, &BetaParams::new(5.0, 5.0)).unwrap() - 2.4609375).abs() < 1e-9);
}

#[test]
fn beta_matches_factorial_closed_form() {
    for a in [1u64, 2, 3, 5, 7, 9] {
        for b in [1u64, 2, 3, 5, 7, 9] {
            for x in [0.0, 0.05, 0.3, 0.5, 0.77, 1.0] {
                let got = beta_pdf(x, &BetaParams::new(a as f64, b as f64)).unwrap();
                let want = beta_closed_form(x, a, b);
                assert!(
                    (got - want).abs() <= 1e-9 * want.max(1.0),
                    "({a},{b}) at {x}"
                );
            }
        }
    }
}

#[test]
fn beta_integrates_to_one() {
    for a in [1.0, 2.0, 3.0, 5.0, 7.0, 9.0] {
        for b in [1.0, 2.0, 3.0, 5.0, 7.0, 9.0] {
            let p = BetaParams::new(a, b);
            let area = simpson(|x| beta_pdf(x, &p).unwrap(), 20_000);
            assert!((area - 1.0).abs() < 1e-6, "({a},{b}) -> {area}");
        }
    }
}

#[test]
fn beta_domain_errors() {
    let p = BetaParams::new(2.0, 2.0);
    assert!(beta_pdf(-0.1, &p).is_err());
    assert!(beta_pdf(1.1, &p).is_err());
    assert!(beta_pdf(0.5, &BetaParams::new(0.0, 1.0)).is_err());
    assert_eq!(beta_pdf(0.0, &BetaParams::new(0.5, 2.0)).unwrap(), 0.0);
}

#[test]
fn similarity_reductions() {
    let c = cset(array![[1.0, 0.0]], vec![1]);
    let t = EmbeddingSet::new(array![[1.0, 0.0], [0.0, 1.0]], None).unwrap();
    let sim = |r| category_similarity(&c, &t, r).unwrap()[0];
    assert_eq!(sim(SimilarityReduce::Min), 0.0);
    assert_eq!(sim(SimilarityReduce::Max), 1.0);
    assert_eq!(sim(SimilarityReduce::Median), 0.5);
    let same = EmbeddingSet::new(array![[2.0, 0.0]], None).unwrap();
    for r in [
        SimilarityReduce::Min,
        SimilarityReduce::Median,
        SimilarityReduce::Max,
    ] {
        assert_eq!(category_similarity(&c, &same, r).unwrap()[0], 1.0);
    }
    let zero = EmbeddingSet::new(array![[0.0, 0.0]], None).unwrap();
    assert!(matches!(
        category_similarity(&c, &zero, SimilarityReduce::Min),
        Err(DselError::ZeroNorm(_))
    ));
}

#[test]
fn beta_weight_examples() {
    let sims = [-0.9, 0.0, 0.9];
    let ones = beta_weights(&sims, &BetaParams::new(1.0, 1.0)).unwrap();
    assert_eq!(ones.weights.to_vec(3).unwrap(), [1.0; 3]);

    let r = beta_weights(&[0.0, 0.9], &BetaParams::new(5.0, 5.0)).unwrap();
    let w = r.weights.to_vec(2).unwrap();
    assert!((w[0] - 2.4609375).abs() < 1e-9);
    assert!((w[1] - 630.0 * 0.95f64.powi(4) * 0.05f64.powi(4)).abs() < 1e-9);
    assert!(w[0] > w[1]);

    let grid: Vec<f64> = (0..21).map(|i| -1.0 + i as f64 * 0.1).collect();
    let w = beta_weights(&grid, &BetaParams::new(5.0, 1.0))
        .unwrap()
        .weights
        .to_vec(21)
        .unwrap();
    assert!(w.windows(2).all(|p| p[1] > p[0]));

    assert!(beta_weights(&[f64::NAN], &BetaParams::default()).is_err());
}

#[test]
fn binning_discards_far_category() {
    let (xt, _) = blobs(&SQUARE, 30, 0.1, 1);
    let mut centers = SQUARE.to_vec();
    centers.push([100.0, 100.0]);
    let (xs, ys) = blobs(&centers, 10, 0.1, 2);
    let labeled = EmbeddingSet::new(xs, Some(ys)).unwrap();
    let target = EmbeddingSet::new(xt, None).unwrap();
    let r = binning_select(
        &labeled,
        &target,
        4,
        &BinningParams::default(),
        Metric::Euclidean,
    )
    .unwrap();
    assert!(r.diagnostics.discarded.contains(&4));
    assert_eq!(r.weights.get(4), Some(0.0));
    let threshold = r.diagnostics.threshold.unwrap();
    assert!(threshold > 1.0 && threshold < 10.0);
}

#[test]
fn rank_and_cut() {
    let ranked = [10, 20, 30, 40];
    assert_eq!(chunk(&ranked, 2, 2), [30, 40]);
    assert_eq!(chunk(&ranked, 2, 1), [10, 20]);
    assert_eq!(chunk(&[1, 2, 3, 4, 5], 2, 2), [3, 4, 5]);
}

#[test]
fn binning_stable_across_split_counts() {
    let (xt, _) = blobs(&SQUARE, 30, 0.05, 3);
    let centers = [[1.5, 1.5], [1.4, 1.6], [80.0, 0.0], [0.0, -90.0]];
    let (xs, ys) = blobs(&centers, 10, 0.05, 4);
    let labeled = EmbeddingSet::new(xs, Some(ys)).unwrap();
    let target = EmbeddingSet::new(xt, None).unwrap();
    let kept = |n_splits| {
        let p = BinningParams {
            n_splits,
            seed: 9,
            ..Default::default()
        };
        let r = binning_select(&labeled, &target, 4, &p, Metric::Euclidean).unwrap();
        assert!(r
            .weights
            .category_weights()
            .values()
            .all(|&w| w == 0.0 || w == 1.0));
        r.diagnostics.discarded
    };
    assert_eq!(kept(1), vec![2, 3]);
    assert_eq!(kept(10), vec![2, 3]);
}

#[test]
fn binning_all_discarded_gives_zero_weights() {
    let (xt, _) = blobs(&SQUARE, 20, 0.1, 5);
    let (xs, ys) = blobs(&[[100.0, 0.0], [0.0, 100.0]], 10, 0.1, 6);
    let labeled = EmbeddingSet::new(xs, Some(ys)).unwrap();
    let target = EmbeddingSet::new(xt, None).unwrap();
    let r = binning_select(
        &labeled,
        &target,
        3,
        &BinningParams::default(),
        Metric::Euclidean,
    )
    .unwrap();
    assert_eq!(r.weights.to_vec(2).unwrap(), [0.0, 0.0]);
}

#[test]
fn binning_rejects_bad_params() {
    let (xt, _) = blobs(&SQUARE, 5, 0.1, 5);
    let (xs, ys) = blobs(&SQUARE, 5, 0.1, 6);
    let labeled = EmbeddingSet::new(xs, Some(ys)).unwrap();
    let target = EmbeddingSet::new(xt, None).unwrap();
    assert!(binning_select(
        &labeled,
        &target,
        1,
        &BinningParams::default(),
        Metric::Euclidean
    )
    .is_err());
    let bad = BinningParams {
        select_chunk: 3,
        ..Default::default()
    };
    assert!(binning_select(&labeled, &target, 4, &bad, Metric::Euclidean).is_err());
    assert!(binning_select(
        &target,
        &target,
        4,
        &BinningParams::default(),
        Metric::Euclidean
    )
    .is_err());
}

#[test]
fn harden_examples() {
    let w = WeightAssignment::from_vec(&[0.1, 0.6, 2.4]).unwrap();
    assert_eq!(
        harden_weights(&w, 0.5).unwrap().to_vec(3).unwrap(),
        [0.0, 1.0, 1.0]
    );
    assert_eq!(
        harden_weights(&w, 0.0).unwrap().to_vec(3).unwrap(),
        [1.0; 3]
    );
    assert_eq!(
        harden_weights(&w, 3.0).unwrap().to_vec(3).unwrap(),
        [0.0; 3]
    );
}

#[test]
fn resampling_examples() {
    let probs = |v: &[f64]| -> Vec<f64> {
        resampling_distribution(&WeightAssignment::from_vec(v).unwrap())
            .unwrap()
            .into_values()
            .collect()
    };
    assert_eq!(probs(&[0.0, 3.0, 0.0]), [0.0, 1.0, 0.0]);
    assert_eq!(probs(&[0.7; 4]), [0.25; 4]);
    assert!(matches!(
        resampling_distribution(&WeightAssignment::from_vec(&[0.0, 0.0]).unwrap()),
        Err(DselError::AllZeroWeights)
    ));
}

proptest! {
    #[test]
    fn beta_pdf_symmetry(x in 0.0f64..=1.0, a in 1.0f64..10.0, b in 1.0f64..10.0) {
        let l = beta_pdf(x, &BetaParams::new(a, b)).unwrap();
        let r = beta_pdf(1.0 - x, &BetaParams::new(b, a)).unwrap();
        prop_assert!((l - r).abs() <= 1e-12 * l.abs().max(1.0));
    }

    #[test]
    fn symmetric_beta_reflection_invariant(sims in proptest::collection::vec(-1.0f64..=1.0, 1..10), a in 1.0f64..9.0) {
        let p = BetaParams::new(a, a);
        let w = beta_weights(&sims, &p).unwrap().weights.to_vec(sims.len()).unwrap();
        let neg: Vec<f64> = sims.iter().map(|s| -s).collect();
        let wn = beta_weights(&neg, &p).unwrap().weights.to_vec(sims.len()).unwrap();
        for (u, v) in w.iter().zip(&wn) {
            prop_assert!((u - v).abs() <= 1e-12 * u.max(1.0));
        }
    }

    #[test]
    fn scaling_keeps_distribution_and_extremes(ws in proptest::collection::vec(0.01f64..5.0, 2..10), c in 0.1f64..100.0) {
        let w = WeightAssignment::from_vec(&ws).unwrap();
        let scaled: Vec<f64> = ws.iter().map(|v| v * c).collect();
        let s = WeightAssignment::from_vec(&scaled).unwrap();
        let (p, q) = (resampling_distribution(&w).unwrap(), resampling_distribution(&s).unwrap());
        for (a, b) in p.values().zip(q.values()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let argmax = |v: &[f64]| (0..v.len()).max_by(|&i, &j| v[i].total_cmp(&v[j]).then(j.cmp(&i))).unwrap();
        let argmin = |v: &[f64]| (0..v.len()).min_by(|&i, &j| v[i].total_cmp(&v[j]).then(i.cmp(&j))).unwrap();
        prop_assert_eq!(argmax(&ws), argmax(&scaled));
        prop_assert_eq!(argmin(&ws), argmin(&scaled));
    }

    #[test]
    fn greedy_budget_exact_and_gamma_invariant(seed: u64, budget in 0usize..6, gamma in 0.01f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = cset(Array2::from_shape_simple_fn((6, 3), || rng.random_range(-3.0..3.0)), vec![2; 6]);
        let t = cset(Array2::from_shape_simple_fn((4, 3), || rng.random_range(-3.0..3.0)), vec![3; 4]);
        let r = greedy_similar_selection(&s, &t, budget, Metric::Euclidean, MarginalMode::Counts).unwrap();
        let w = r.weights.to_vec(6).unwrap();
        prop_assert_eq!(w.iter().filter(|&&v| v == 1.0).count(), budget);
        // ranking by similarity exp(-γ d) descending selects the same categories
        let sims: Vec<f64> = r.diagnostics.scores.iter().map(|&d| domain_similarity(d, gamma)).collect();
        let mut order: Vec<usize> = (0..6).collect();
        order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
        for &c in &order[..budget] {
            prop_assert_eq!(w[c], 1.0);
        }
    }
}

//! Tiered synthetic scenes and the experiment harnesses built on them.
//!
//! Every tier holds one category per novel category, displaced from its novel partner
//! by the tier's offset. Tiers before `source_only_from` are also "old" target
//! categories; later tiers exist only in the source. Labeled source sets are fresh
//! draws of each tier's categories. OOD categories lie far from the whole target.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{category_centroids, kmeans, DEFAULT_MAX_ITER};
use crate::data::{merge_sources, EmbeddingSet, HierarchyTier, WeightAssignment};
use crate::engine::{assign_labels, train, HyperParams, PrototypeInit};
use crate::error::{DselError, Result};
use crate::eval::{split_accuracy_partitioned, ErrorCounts, EvalReport, CSV_HEADER};
use crate::selection::{
    beta_weights, binning_select, category_similarity, greedy_similar_selection, harden_weights,
    BetaParams, BinningParams, MarginalMode,
};
use crate::transport::Metric;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TierOffsets {
    pub similar: f64,
    pub medium: f64,
    pub dissimilar: f64,
    pub ood: f64,
}

impl Default for TierOffsets {
    fn default() -> Self {
        Self {
            similar: 0.5,
            medium: 2.0,
            dissimilar: 6.0,
            ood: 30.0,
        }
    }
}

impl TierOffsets {
    pub fn get(&self, tier: HierarchyTier) -> f64 {
        match tier {
            HierarchyTier::Similar => self.similar,
            HierarchyTier::Medium => self.medium,
            HierarchyTier::Dissimilar => self.dissimilar,
            HierarchyTier::Ood => self.ood,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub dim: usize,
    /// Leading dimensions carrying category structure.
    pub signal_dim: usize,
    /// Novel target categories; every tier has the same number of categories.
    pub n_novel: usize,
    pub instances_per_category: usize,
    pub labeled_per_category: usize,
    /// Minimum distance between novel category centers.
    pub base_separation: f64,
    /// Std of novel category centers within the signal dimensions.
    pub spread: f64,
    /// Tier displacement in units of `base_separation`.
    pub tier_offsets: TierOffsets,
    pub noise_std: f64,
    /// Extra noise on the non-signal dimensions except the last.
    pub nuisance_std: f64,
    /// Offset of every target category along the last dimension.
    pub mean_shift: f64,
    /// Backward component (against the mean shift) of the OOD displacement direction.
    pub ood_backward: f64,
    /// First tier whose categories are absent from the target.
    pub source_only_from: HierarchyTier,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            signal_dim: 4,
            n_novel: 6,
            instances_per_category: 100,
            labeled_per_category: 50,
            base_separation: 8.0,
            spread: 6.0,
            tier_offsets: TierOffsets::default(),
            noise_std: 1.0,
            nuisance_std: 3.0,
            mean_shift: 6.0,
            ood_backward: 0.0,
            source_only_from: HierarchyTier::Ood,
            seed: 1,
        }
    }
}

impl SynthConfig {
    /// Scene for the selection comparison: only Similar categories are in the target,
    /// the other tiers are extra labeled sources, and the OOD tier faces away from it.
    pub fn selection_preset() -> Self {
        Self {
            mean_shift: 27.5,
            ood_backward: 3.0,
            source_only_from: HierarchyTier::Medium,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DselError::InvalidArgument(m.to_string()));
        if !(self.base_separation > 0.0) || !(self.spread > 0.0) {
            return bad("separation and spread must be positive");
        }
        let o = &self.tier_offsets;
        if !(0.0 < o.similar
            && o.similar < o.medium
            && o.medium < o.dissimilar
            && o.dissimilar < o.ood)
        {
            return bad("tier offsets must be positive and strictly increasing");
        }
        if self.signal_dim == 0 || self.signal_dim + 2 > self.dim {
            return bad("signal_dim must leave at least two non-signal dimensions");
        }
        if self.n_novel == 0 || self.instances_per_category == 0 || self.labeled_per_category < 2 {
            return bad("category and instance counts are too small");
        }
        if !(self.noise_std > 0.0) || !(self.nuisance_std >= 0.0) {
            return bad("noise must be positive");
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    /// Tiers whose categories are old target categories.
    pub fn target_tiers(&self) -> Vec<HierarchyTier> {
        HierarchyTier::ALL
            .into_iter()
            .filter(|&t| t < self.source_only_from)
            .collect()
    }

    /// Categories in the target: the old categories of every target tier plus the novel ones.
    pub fn n_target_categories(&self) -> usize {
        (self.target_tiers().len() + 1) * self.n_novel
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub config: SynthConfig,
    /// Labeled source set per tier; category c of every tier pairs with novel category c.
    pub sources: BTreeMap<HierarchyTier, EmbeddingSet>,
    /// Target with ground-truth class ids.
    pub target: EmbeddingSet,
    /// Target class id of each source category; empty for source-only tiers.
    pub tier_classes: BTreeMap<HierarchyTier, Vec<usize>>,
    pub old_classes: BTreeSet<usize>,
    pub novel_classes: BTreeSet<usize>,
    pub centers: BTreeMap<HierarchyTier, Array2<f64>>,
    pub novel_centers: Array2<f64>,
}

impl Scene {
    /// Target classes that the labeled source of `tier` covers.
    pub fn seen_classes(&self, tier: HierarchyTier) -> BTreeSet<usize> {
        self.tier_classes[&tier].iter().copied().collect()
    }

    /// Union of all tier sources, in tier order.
    pub fn pooled_source(&self) -> Result<EmbeddingSet> {
        let sets: Vec<EmbeddingSet> = HierarchyTier::ALL
            .iter()
            .map(|t| self.sources[t].clone())
            .collect();
        merge_sources(&sets)
    }

    /// Prototype count for a run labeled by the sources of `tiers`: every target class
    /// plus the source categories absent from the target.
    pub fn model_k(&self, tiers: &[HierarchyTier]) -> usize {
        let external = tiers
            .iter()
            .filter(|&&t| t >= self.config.source_only_from)
            .count();
        self.target.n_categories() + external * self.config.n_novel
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || rng.sample(StandardNormal))
}

pub fn generate_scene(cfg: &SynthConfig) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (d, s, n) = (cfg.dim, cfg.signal_dim, cfg.n_novel);

    let mut novel = Array2::<f64>::zeros((n, d));
    for attempt in 0.. {
        for mut row in novel.outer_iter_mut() {
            row.fill(0.0);
            for j in 0..s {
                row[j] = cfg.spread * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let min_sep = (0..n)
            .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
            .map(|(a, b)| (&novel.row(a) - &novel.row(b)).mapv(|v| v * v).sum().sqrt())
            .fold(f64::INFINITY, f64::min);
        if min_sep > cfg.base_separation {
            break;
        }
        if attempt > 10_000 {
            return Err(DselError::InvalidArgument(
                "spread too small for the requested separation".into(),
            ));
        }
    }
    novel.column_mut(d - 1).fill(cfg.mean_shift);

    let mut centers = BTreeMap::new();
    for tier in HierarchyTier::ALL {
        let off = cfg.tier_offsets.get(tier) * cfg.base_separation;
        let mut c = novel.clone();
        for mut row in c.outer_iter_mut() {
            let mut u = gaussian_vec(&mut rng, d);
            if tier == HierarchyTier::Ood {
                u.slice_mut(ndarray::s![..s]).fill(0.0);
            } else {
                u.slice_mut(ndarray::s![s..]).fill(0.0);
            }
            u[d - 1] = 0.0;
            u /= u.dot(&u).sqrt();
            if tier == HierarchyTier::Ood && cfg.ood_backward > 0.0 {
                u[d - 1] = -cfg.ood_backward;
                u /= u.dot(&u).sqrt();
            }
            row.scaled_add(off, &u);
        }
        centers.insert(tier, c);
    }

    let draw = |rng: &mut ChaCha8Rng,
                center: ndarray::ArrayView1<'_, f64>,
                count: usize,
                out: &mut Vec<f64>| {
        for _ in 0..count {
            for j in 0..d {
                let mut v = center[j] + cfg.noise_std * rng.sample::<f64, _>(StandardNormal);
                if j >= s && j < d - 1 {
                    v += cfg.nuisance_std * rng.sample::<f64, _>(StandardNormal);
                }
                out.push(v);
            }
        }
    };

    let old_tiers = cfg.target_tiers();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut tier_classes = BTreeMap::new();
    let mut class = 0;
    for tier in old_tiers {
        let mut ids = Vec::with_capacity(n);
        for c in centers[&tier].outer_iter() {
            draw(&mut rng, c, cfg.instances_per_category, &mut data);
            labels.extend(std::iter::repeat_n(class, cfg.instances_per_category));
            ids.push(class);
            class += 1;
        }
        tier_classes.insert(tier, ids);
    }
    for tier in HierarchyTier::ALL {
        tier_classes.entry(tier).or_insert_with(Vec::new);
    }
    let old_classes: BTreeSet<usize> = (0..class).collect();
    let mut novel_classes = BTreeSet::new();
    for c in novel.outer_iter() {
        draw(&mut rng, c, cfg.instances_per_category, &mut data);
        labels.extend(std::iter::repeat_n(class, cfg.instances_per_category));
        novel_classes.insert(class);
        class += 1;
    }
    let target = EmbeddingSet::new(
        Array2::from_shape_vec((labels.len(), d), data).expect("row-major fill"),
        Some(labels),
    )?
    .with_source_tag("target");

    let mut sources = BTreeMap::new();
    for tier in HierarchyTier::ALL {
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (c, center) in centers[&tier].outer_iter().enumerate() {
            draw(&mut rng, center, cfg.labeled_per_category, &mut data);
            labels.extend(std::iter::repeat_n(c, cfg.labeled_per_category));
        }
        let set = EmbeddingSet::new(
            Array2::from_shape_vec((labels.len(), d), data).expect("row-major fill"),
            Some(labels),
        )?
        .with_category_names((0..n).map(|c| format!("{tier}-{c}")).collect())?
        .with_source_tag(tier.name());
        sources.insert(tier, set);
    }

    Ok(Scene {
        config: cfg.clone(),
        sources,
        target,
        tier_classes,
        old_classes,
        novel_classes,
        centers,
        novel_centers: novel,
    })
}

/// One (row, seed) evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub name: String,
    pub seed: u64,
    pub report: EvalReport,
}

/// Seed-averaged metrics of one table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowSummary {
    pub name: String,
    pub acc_all: f64,
    pub acc_old: Option<f64>,
    pub acc_new: f64,
    pub errors: ErrorCounts,
    pub per_seed_acc_new: Vec<f64>,
}

impl RowSummary {
    pub fn as_old_fraction(&self) -> Option<f64> {
        self.errors.as_old_fraction()
    }

    pub fn as_new_fraction(&self) -> Option<f64> {
        self.as_old_fraction().map(|f| 1.0 - f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub runs: Vec<RunResult>,
    pub rows: Vec<RowSummary>,
}

impl Table {
    fn from_runs(order: &[String], runs: Vec<RunResult>) -> Table {
        let rows = order
            .iter()
            .map(|name| {
                let mine: Vec<&RunResult> = runs.iter().filter(|r| &r.name == name).collect();
                let n = mine.len() as f64;
                let mean = |f: &dyn Fn(&EvalReport) -> f64| {
                    mine.iter().map(|r| f(&r.report)).sum::<f64>() / n
                };
                let olds: Vec<f64> = mine.iter().filter_map(|r| r.report.acc_old).collect();
                let mut errors = ErrorCounts::default();
                for r in &mine {
                    errors.misclassified_as_new += r.report.error_counts.misclassified_as_new;
                    errors.misclassified_as_old += r.report.error_counts.misclassified_as_old;
                }
                RowSummary {
                    name: name.clone(),
                    acc_all: mean(&|r| r.acc_all),
                    acc_old: (!olds.is_empty())
                        .then(|| olds.iter().sum::<f64>() / olds.len() as f64),
                    acc_new: mean(&|r| r.acc_new.unwrap_or(0.0)),
                    errors,
                    per_seed_acc_new: mine
                        .iter()
                        .map(|r| r.report.acc_new.unwrap_or(0.0))
                        .collect(),
                }
            })
            .collect();
        Table { runs, rows }
    }

    pub fn row(&self, name: &str) -> Option<&RowSummary> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Per-seed rows followed by seed-mean rows, in the evaluation CSV format.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{CSV_HEADER}").expect("string write");
        for r in &self.runs {
            writeln!(
                out,
                "{}",
                r.report.csv_row(&r.name, &format!("seed{}", r.seed))
            )
            .expect("string write");
        }
        for r in &self.rows {
            writeln!(
                out,
                "{},mean,{:.6},{},{:.6},{},{}",
                r.name,
                r.acc_all,
                r.acc_old.map_or_else(String::new, |v| format!("{v:.6}")),
                r.acc_new,
                r.errors.misclassified_as_new,
                r.errors.misclassified_as_old
            )
            .expect("string write");
        }
        out
    }
}

fn evaluate_run(scene: &Scene, predicted: &[usize], seen: &BTreeSet<usize>) -> Result<EvalReport> {
    split_accuracy_partitioned(
        scene.target.require_labels()?,
        predicted,
        seen,
        &scene.novel_classes,
    )
}

/// Trains on `labeled` with `weights` and evaluates on the target.
pub fn discover_and_evaluate(
    scene: &Scene,
    labeled: &EmbeddingSet,
    weights: &WeightAssignment,
    hp: &HyperParams,
    k: usize,
    seen: &BTreeSet<usize>,
) -> Result<EvalReport> {
    let unlabeled = scene.target.unlabeled();
    let outcome = train(labeled, &unlabeled, weights, hp, k)?;
    let predicted = assign_labels(&outcome.model, &unlabeled)?;
    evaluate_run(scene, &predicted, seen)
}

fn kmeans_row(scene: &Scene, seed: u64) -> Result<EvalReport> {
    let k = scene.target.n_categories();
    let (_, a) = kmeans(&scene.target.unlabeled(), k, seed, DEFAULT_MAX_ITER)?;
    evaluate_run(scene, &a.labels, &BTreeSet::new())
}

pub const KMEANS_ROW: &str = "k-means";

/// Hyperparameters used by the benchmark harnesses.
pub fn bench_hyperparams(seed: u64) -> HyperParams {
    HyperParams {
        tau_u: 0.07,
        tau_s: 0.1,
        lambda: 0.35,
        epsilon: 2.0,
        lr: 0.05,
        momentum: 0.9,
        epochs: 30,
        batch_size: 128,
        seed,
        aug_std: 0.05,
        train_adapter: true,
        init: PrototypeInit::CentroidsKmeansPp,
    }
}

/// Trains once per tier (that tier as the only labeled source) and once with plain
/// k-means, for every seed.
pub fn run_sweetspot(cfg: &SynthConfig, hp: &HyperParams, seeds: &[u64]) -> Result<Table> {
    let jobs: Vec<(u64, Option<HierarchyTier>)> = seeds
        .iter()
        .flat_map(|&s| {
            std::iter::once((s, None))
                .chain(HierarchyTier::ALL.into_iter().map(move |t| (s, Some(t))))
        })
        .collect();
    let scenes: BTreeMap<u64, Scene> = seeds
        .iter()
        .map(|&s| generate_scene(&cfg.with_seed(s)).map(|sc| (s, sc)))
        .collect::<Result<_>>()?;
    let runs = jobs
        .par_iter()
        .map(|&(seed, tier)| {
            let scene = &scenes[&seed];
            let hp = HyperParams { seed, ..*hp };
            match tier {
                None => Ok(RunResult {
                    name: KMEANS_ROW.into(),
                    seed,
                    report: kmeans_row(scene, seed)?,
                }),
                Some(t) => {
                    let labeled = &scene.sources[&t];
                    let k = scene.model_k(&[t]);
                    let w = WeightAssignment::ones(labeled.n_categories());
                    let report =
                        discover_and_evaluate(scene, labeled, &w, &hp, k, &scene.seen_classes(t))?;
                    Ok(RunResult {
                        name: t.name().into(),
                        seed,
                        report,
                    })
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let order: Vec<String> = std::iter::once(KMEANS_ROW.to_string())
        .chain(HierarchyTier::ALL.iter().map(|t| t.name().to_string()))
        .collect();
    Ok(Table::from_runs(&order, runs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMethod {
    None,
    Greedy,
    Binning,
    Beta,
    /// Beta weights with α = 5, β = 1.
    BetaFavorSimilar,
    /// Beta weights hardened at 0.2.
    BetaHard,
}

impl SelectionMethod {
    pub const MAIN: [SelectionMethod; 4] = [
        SelectionMethod::None,
        SelectionMethod::Greedy,
        SelectionMethod::Binning,
        SelectionMethod::Beta,
    ];
    pub const ALL: [SelectionMethod; 6] = [
        SelectionMethod::None,
        SelectionMethod::Greedy,
        SelectionMethod::Binning,
        SelectionMethod::Beta,
        SelectionMethod::BetaFavorSimilar,
        SelectionMethod::BetaHard,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SelectionMethod::None => "none",
            SelectionMethod::Greedy => "greedy",
            SelectionMethod::Binning => "bins",
            SelectionMethod::Beta => "beta",
            SelectionMethod::BetaFavorSimilar => "beta-5-1",
            SelectionMethod::BetaHard => "beta-hard-0.2",
        }
    }
}

/// Category weights each strategy assigns to the pooled source of `scene`.
pub fn pooled_weights(
    scene: &Scene,
    pooled: &EmbeddingSet,
    method: SelectionMethod,
) -> Result<WeightAssignment> {
    let n_cat = pooled.n_categories();
    let target = scene.target.unlabeled();
    let k_target = scene.target.n_categories();
    let seed = scene.config.seed;
    let beta = |a: f64, b: f64| -> Result<WeightAssignment> {
        let sims = category_similarity(&category_centroids(pooled)?, &target, Default::default())?;
        Ok(beta_weights(&sims, &BetaParams::new(a, b))?.weights)
    };
    match method {
        SelectionMethod::None => Ok(WeightAssignment::ones(n_cat)),
        SelectionMethod::Greedy => {
            let (clusters, _) = kmeans(&target, k_target, seed, DEFAULT_MAX_ITER)?;
            let r = greedy_similar_selection(
                &category_centroids(pooled)?,
                &clusters,
                n_cat / 2,
                Metric::Euclidean,
                MarginalMode::Counts,
            )?;
            Ok(r.weights)
        }
        SelectionMethod::Binning => {
            let p = BinningParams {
                seed,
                ..Default::default()
            };
            Ok(binning_select(pooled, &target, k_target, &p, Metric::Euclidean)?.weights)
        }
        SelectionMethod::Beta => beta(5.0, 5.0),
        SelectionMethod::BetaFavorSimilar => beta(5.0, 1.0),
        SelectionMethod::BetaHard => harden_weights(&beta(5.0, 5.0)?, 0.2),
    }
}

/// One trained engine per selection strategy on the pooled source, for every seed.
pub fn run_selection_comparison(
    cfg: &SynthConfig,
    hp: &HyperParams,
    seeds: &[u64],
    methods: &[SelectionMethod],
) -> Result<Table> {
    let scenes: BTreeMap<u64, (Scene, EmbeddingSet)> = seeds
        .iter()
        .map(|&s| {
            let scene = generate_scene(&cfg.with_seed(s))?;
            let pooled = scene.pooled_source()?;
            Ok((s, (scene, pooled)))
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(u64, SelectionMethod)> = seeds
        .iter()
        .flat_map(|&s| methods.iter().map(move |&m| (s, m)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(seed, method)| {
            let (scene, pooled) = &scenes[&seed];
            let hp = HyperParams { seed, ..*hp };
            let w = pooled_weights(scene, pooled, method)?;
            let report = discover_and_evaluate(
                scene,
                pooled,
                &w,
                &hp,
                scene.model_k(&HierarchyTier::ALL),
                &scene.old_classes,
            )?;
            Ok(RunResult {
                name: method.name().into(),
                seed,
                report,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let order: Vec<String> = methods.iter().map(|m| m.name().to_string()).collect();
    Ok(Table::from_runs(&order, runs))
}

/// Plot data: tier similarity rank (1 = most similar) against mean novel accuracy.
pub fn sweetspot_plot_data(table: &Table) -> String {
    let mut out = String::from("rank,tier,acc_new\n");
    for (i, t) in HierarchyTier::ALL.iter().enumerate() {
        if let Some(r) = table.row(t.name()) {
            writeln!(out, "{},{},{:.6}", i + 1, t, r.acc_new).expect("string write");
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> MarginCheck {
    MarginCheck {
        name: name.into(),
        passed,
        detail,
    }
}

fn acc(table: &Table, row: &str) -> f64 {
    table.row(row).map_or(f64::NAN, |r| 100.0 * r.acc_new)
}

/// Ordering and error-profile margins for a sweet-spot table (accuracies in points).
pub fn sweetspot_checks(table: &Table) -> Vec<MarginCheck> {
    let (s, m, o) = (
        acc(table, "Similar"),
        acc(table, "Medium"),
        acc(table, "OOD"),
    );
    let frac = |row: &str| {
        table
            .row(row)
            .and_then(|r| r.as_old_fraction())
            .unwrap_or(0.0)
    };
    let (fs, fo) = (frac("Similar"), frac("OOD"));
    vec![
        check(
            "medium-beats-similar",
            m >= s + 5.0,
            format!("Medium {m:.1} vs Similar {s:.1}"),
        ),
        check(
            "medium-beats-ood",
            m >= o + 5.0,
            format!("Medium {m:.1} vs OOD {o:.1}"),
        ),
        check(
            "similar-more-as-old",
            fs > fo,
            format!("as-old share Similar {fs:.3} vs OOD {fo:.3}"),
        ),
        check(
            "ood-errors-as-new",
            1.0 - fo >= 0.9,
            format!("OOD as-new share {:.3}", 1.0 - fo),
        ),
    ]
}

/// Selection-comparison margins (accuracies in points).
pub fn selection_checks(table: &Table) -> Vec<MarginCheck> {
    let none = acc(table, "none");
    let mut out = Vec::new();
    for (row, label) in [("bins", "binning-beats-none"), ("beta", "beta-beats-none")] {
        if table.row(row).is_some() {
            let v = acc(table, row);
            out.push(check(
                label,
                v >= none + 3.0,
                format!("{row} {v:.1} vs none {none:.1}"),
            ));
        }
    }
    if table.row("greedy").is_some() {
        let g = acc(table, "greedy");
        out.push(check(
            "greedy-not-above-none",
            g <= none,
            format!("greedy {g:.1} vs none {none:.1}"),
        ));
    }
    if table.row("beta-5-1").is_some() && table.row("beta").is_some() {
        let (f, b) = (acc(table, "beta-5-1"), acc(table, "beta"));
        out.push(check(
            "favor-similar-below-beta",
            f < b,
            format!("beta-5-1 {f:.1} vs beta {b:.1}"),
        ));
    }
    if table.row("beta-hard-0.2").is_some() && table.row("beta").is_some() {
        let (h, b) = (acc(table, "beta-hard-0.2"), acc(table, "beta"));
        out.push(check(
            "hard-close-to-soft",
            (h - b).abs() <= 3.0,
            format!("beta-hard-0.2 {h:.1} vs beta {b:.1}"),
        ));
    }
    out
}

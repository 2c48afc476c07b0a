use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use dsel::clustering::{category_centroids, kmeans, DEFAULT_MAX_ITER};
use dsel::data::{load_embeddings, EmbeddingSet, Format, HierarchyTier, WeightAssignment};
use dsel::engine::{assign_labels, save_checkpoint, train_with_observer, HyperParams};
use dsel::eval::split_accuracy_partitioned;
use dsel::selection::{
    beta_weights, binning_select_with_flows, category_similarity, greedy_similar_selection,
    harden_weights, BetaParams, BinningParams, SelectionResult,
};
use dsel::synth::{
    bench_hyperparams, generate_scene, run_selection_comparison, run_sweetspot, selection_checks,
    sweetspot_checks, sweetspot_plot_data, MarginCheck, SelectionMethod, SynthConfig, Table,
};
use serde::Serialize;

use crate::config::{require_file, HyperFlags, Method, PipelineConfig, SelectOpts};
use crate::{InputError, MarginFailure};

fn load_set(path: &Path) -> Result<EmbeddingSet> {
    require_file(path)?;
    Ok(load_embeddings(path, Format::from_path(path))?)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text)
}

fn required<T>(value: Option<T>, what: &str) -> Result<T> {
    value.ok_or_else(|| InputError(format!("missing required {what}")).into())
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub labeled: Option<PathBuf>,
    #[arg(long)]
    pub unlabeled: Option<PathBuf>,
    #[command(flatten)]
    pub opts: SelectOpts,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for weights.json and selection.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory receiving one flow-matrix CSV per binning split.
    #[arg(long)]
    pub dump_flow: Option<PathBuf>,
}

pub fn select(args: SelectArgs, cfg: &PipelineConfig) -> Result<()> {
    let labeled = load_set(&required(args.labeled.or(cfg.labeled.clone()), "--labeled")?)?;
    let unlabeled = load_set(&required(args.unlabeled.or(cfg.unlabeled.clone()), "--unlabeled")?)?;
    let out = required(args.out.or(cfg.out.clone()), "--out")?;
    let seed = args.seed.or(cfg.seed).unwrap_or(0);
    let opts = args.opts.or(&cfg.selection);
    let result = run_selection(&labeled, &unlabeled, &opts, seed, args.dump_flow.as_deref())?;
    create_dir(&out)?;
    write_file(&out.join("weights.json"), result.weights.to_json()? + "\n")?;
    write_file(&out.join("selection.json"), result.to_json()? + "\n")?;
    log::info!(
        "kept {} of {} categories",
        labeled.n_categories() - result.diagnostics.discarded.len(),
        labeled.n_categories()
    );
    Ok(())
}

fn run_selection(
    labeled: &EmbeddingSet,
    unlabeled: &EmbeddingSet,
    opts: &SelectOpts,
    seed: u64,
    dump_flow: Option<&Path>,
) -> Result<SelectionResult> {
    let method = required(opts.method, "--method")?;
    let metric = opts.metric.unwrap_or_default();
    let k_unlabeled = || -> Result<usize> {
        match (opts.k_unlabeled, unlabeled.is_labeled()) {
            (Some(k), _) => Ok(k),
            (None, true) => Ok(unlabeled.n_categories()),
            (None, false) => Err(InputError("--k-unlabeled is required for unlabeled data without labels".into()).into()),
        }
    };
    let target = unlabeled.unlabeled();
    if dump_flow.is_some() && method != Method::Bins {
        log::warn!("--dump-flow only applies to binning");
    }
    let n_cat = labeled.n_categories();
    let result = match method {
        Method::None => SelectionResult {
            weights: WeightAssignment::ones(n_cat),
            diagnostics: Default::default(),
        },
        Method::Beta => {
            let mut p = BetaParams::new(opts.alpha.unwrap_or(5.0), opts.beta.unwrap_or(5.0));
            p.reduce = opts.reduce.unwrap_or_default();
            let sims = category_similarity(&category_centroids(labeled)?, &target, p.reduce)?;
            let mut r = beta_weights(&sims, &p)?;
            if let Some(t) = opts.hard_threshold {
                r.weights = harden_weights(&r.weights, t)?;
                r.diagnostics.threshold = Some(t);
            }
            r
        }
        Method::Bins => {
            let p = BinningParams {
                chunks: opts.chunks.unwrap_or(2),
                n_splits: opts.splits.unwrap_or(10),
                select_chunk: opts.select_chunk.unwrap_or(2),
                seed,
                ..Default::default()
            };
            let (r, flows) = binning_select_with_flows(labeled, &target, k_unlabeled()?, &p, metric)?;
            if let Some(dir) = dump_flow {
                create_dir(dir)?;
                for (i, f) in flows.iter().enumerate() {
                    f.write_csv(&dir.join(format!("flow-split{i}.csv")))?;
                }
            }
            r
        }
        Method::Greedy => {
            let (clusters, _) = kmeans(&target, k_unlabeled()?, seed, DEFAULT_MAX_ITER)?;
            greedy_similar_selection(
                &category_centroids(labeled)?,
                &clusters,
                opts.budget.unwrap_or(n_cat / 2),
                metric,
                Default::default(),
            )?
        }
    };
    Ok(result)
}

#[derive(Debug, Args)]
pub struct DiscoverArgs {
    #[arg(long)]
    pub labeled: Option<PathBuf>,
    #[arg(long)]
    pub unlabeled: Option<PathBuf>,
    /// Weight file from `select`, or `all-ones`.
    #[arg(long)]
    pub weights: Option<String>,
    /// Treat categories absent from the weight file as weight 1.
    #[arg(long)]
    pub missing_weight_one: bool,
    /// Total prototype count: labeled categories plus novel ones.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub hyper: HyperFlags,
    /// Ground-truth classes of the unlabeled set counted as old.
    #[arg(long, value_delimiter = ',')]
    pub old_classes: Vec<usize>,
    /// Output directory for model.dsmd, epochs.jsonl, assignments.json and report.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn load_weights(source: Option<&str>, labeled: &EmbeddingSet, missing_one: bool) -> Result<WeightAssignment> {
    let n = labeled.n_categories();
    let mut w = match source {
        None | Some("all-ones") => return Ok(WeightAssignment::ones(n)),
        Some(path) => {
            let path = Path::new(path);
            require_file(path)?;
            WeightAssignment::load(path)?
        }
    };
    if missing_one {
        let mut map = w.category_weights().clone();
        for c in 0..n {
            map.entry(c).or_insert(1.0);
        }
        w = WeightAssignment::new(map)?;
    }
    Ok(w)
}

pub fn discover(args: DiscoverArgs, cfg: &PipelineConfig) -> Result<()> {
    let labeled = load_set(&required(args.labeled.or(cfg.labeled.clone()), "--labeled")?)?;
    let unlabeled = load_set(&required(args.unlabeled.or(cfg.unlabeled.clone()), "--unlabeled")?)?;
    let out = required(args.out.or(cfg.out.clone()), "--out")?;
    let k = args.k.or(cfg.k).ok_or_else(|| {
        InputError(
            "--k is required when labeled data is present: supply the total number of categories (labeled plus novel); cluster-count estimation is not supported"
                .into(),
        )
    })?;
    let weights = load_weights(
        args.weights.as_deref().or(cfg.weights.as_deref()),
        &labeled,
        args.missing_weight_one,
    )?;
    let base = HyperParams {
        seed: args.seed.or(cfg.seed).unwrap_or(0),
        ..HyperParams::default()
    };
    let hp = cfg.hyper(base, &args.hyper)?;
    create_dir(&out)?;
    let mut log = Vec::new();
    let target = unlabeled.unlabeled();
    let outcome = train_with_observer(&labeled, &target, &weights, &hp, k, |m| {
        serde_json::to_writer(&mut log, m).expect("in-memory write");
        log.push(b'\n');
        log::debug!("epoch {} total {:.5}", m.epoch, m.losses.total);
    })?;
    write_file(&out.join("epochs.jsonl"), &log)?;
    save_checkpoint(&outcome.model, &out.join("model.dsmd"))?;
    let predicted = assign_labels(&outcome.model, &target)?;
    write_json(&out.join("assignments.json"), &predicted)?;
    if let Some(truth) = unlabeled.labels() {
        let old: BTreeSet<usize> = args.old_classes.into_iter().collect();
        let novel = (0..unlabeled.n_categories()).filter(|c| !old.contains(c)).collect();
        let report = split_accuracy_partitioned(truth, &predicted, &old, &novel)?;
        write_json(&out.join("report.json"), &report)?;
        log::info!("acc_all {:.4}", report.acc_all);
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Ground-truth labels: a JSON array or a labeled embedding file.
    #[arg(long)]
    pub truth: PathBuf,
    /// Predicted labels: a JSON array or a labeled embedding file.
    #[arg(long)]
    pub predicted: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub old_classes: Vec<usize>,
    /// Report path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn load_labels(path: &Path) -> Result<Vec<usize>> {
    require_file(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return serde_json::from_str(&text)
            .map_err(|e| InputError(format!("{}: expected a JSON array of labels: {e}", path.display())).into());
    }
    Ok(load_set(path)?.require_labels()?.to_vec())
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let truth = load_labels(&args.truth)?;
    let predicted = load_labels(&args.predicted)?;
    let old: BTreeSet<usize> = args.old_classes.into_iter().collect();
    let classes: BTreeSet<usize> = truth.iter().copied().collect();
    let novel = classes.difference(&old).copied().collect();
    let report = split_accuracy_partitioned(&truth, &predicted, &old, &novel)?;
    match args.out {
        Some(path) => write_json(&path, &report),
        None => {
            let mut stdout = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut stdout, &report)?;
            writeln!(stdout)?;
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Sweetspot,
    Selection,
}

impl Preset {
    fn config(self) -> SynthConfig {
        match self {
            Preset::Sweetspot => SynthConfig::default(),
            Preset::Selection => SynthConfig::selection_preset(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FileFormat {
    Binary,
    Csv,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "sweetspot")]
    pub preset: Preset,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value = "binary")]
    pub format: FileFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct SceneManifest<'a> {
    config: &'a SynthConfig,
    files: BTreeMap<String, String>,
    old_classes: &'a BTreeSet<usize>,
    novel_classes: &'a BTreeSet<usize>,
    tier_classes: BTreeMap<String, &'a Vec<usize>>,
    model_k: usize,
}

pub fn synth(args: SynthArgs, cfg: &PipelineConfig) -> Result<()> {
    let out = required(args.out.or(cfg.out.clone()), "--out")?;
    let mut sc = cfg.synth(args.preset.config())?;
    if let Some(seed) = args.seed.or(cfg.seed) {
        sc.seed = seed;
    }
    let scene = generate_scene(&sc)?;
    let (format, ext) = match args.format {
        FileFormat::Binary => (Format::Binary, "dsel"),
        FileFormat::Csv => (Format::Csv, "csv"),
    };
    create_dir(&out)?;
    let mut files = BTreeMap::new();
    let mut save = |name: String, set: &EmbeddingSet| -> Result<()> {
        let file = format!("{name}.{ext}");
        set.save(&out.join(&file), format)?;
        files.insert(name, file);
        Ok(())
    };
    save("target".into(), &scene.target)?;
    for (tier, set) in &scene.sources {
        save(format!("source-{}", tier.name().to_lowercase()), set)?;
    }
    save("pooled".into(), &scene.pooled_source()?)?;
    let manifest = SceneManifest {
        config: &scene.config,
        files,
        old_classes: &scene.old_classes,
        novel_classes: &scene.novel_classes,
        tier_classes: scene
            .tier_classes
            .iter()
            .map(|(t, c)| (t.name().to_string(), c))
            .collect(),
        model_k: scene.model_k(&HierarchyTier::ALL),
    };
    write_json(&out.join("scene.json"), &manifest)
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long, value_enum)]
    pub preset: Preset,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    pub hyper: HyperFlags,
    /// Output directory for sweep.csv, summary.json and plot.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Summary<'a> {
    preset: Preset,
    seeds: &'a [u64],
    synth: &'a SynthConfig,
    hyper: &'a HyperParams,
    rows: &'a [dsel::synth::RowSummary],
    checks: &'a [MarginCheck],
    passed: bool,
}

pub fn pipeline(args: PipelineArgs, cfg: &PipelineConfig) -> Result<()> {
    let out = required(args.out.or(cfg.out.clone()), "--out")?;
    let sc = cfg.synth(args.preset.config())?;
    let hp = cfg.hyper(bench_hyperparams(0), &args.hyper)?;
    if args.seeds.is_empty() {
        return Err(InputError("--seeds must name at least one seed".into()).into());
    }
    let (table, checks): (Table, Vec<MarginCheck>) = match args.preset {
        Preset::Sweetspot => {
            let t = run_sweetspot(&sc, &hp, &args.seeds)?;
            let c = sweetspot_checks(&t);
            (t, c)
        }
        Preset::Selection => {
            let t = run_selection_comparison(&sc, &hp, &args.seeds, &SelectionMethod::ALL)?;
            let c = selection_checks(&t);
            (t, c)
        }
    };
    let passed = checks.iter().all(|c| c.passed);
    create_dir(&out)?;
    write_file(&out.join("sweep.csv"), table.to_csv())?;
    if args.preset == Preset::Sweetspot {
        write_file(&out.join("plot.csv"), sweetspot_plot_data(&table))?;
    }
    let summary = Summary {
        preset: args.preset,
        seeds: &args.seeds,
        synth: &sc,
        hyper: &hp,
        rows: &table.rows,
        checks: &checks,
        passed,
    };
    write_json(&out.join("summary.json"), &summary)?;
    for c in &checks {
        eprintln!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if passed {
        Ok(())
    } else {
        let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        Err(MarginFailure(failed.join(", ")).into())
    }
}

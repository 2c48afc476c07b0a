use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use dsel::engine::HyperParams;
use dsel::selection::SimilarityReduce;
use dsel::synth::SynthConfig;
use dsel::transport::Metric;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::InputError;

/// Contents of a `--config` file; every section is optional and flags win.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub labeled: Option<PathBuf>,
    pub unlabeled: Option<PathBuf>,
    pub weights: Option<String>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub selection: SelectOpts,
    pub hyper: Option<Value>,
    pub synth: Option<Value>,
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = read_input(path)?;
        serde_json::from_str(&text)
            .map_err(|e| InputError(format!("{}: invalid config: {e}", path.display())).into())
    }

    /// Hyperparameters: `base`, then the config's `hyper` section, then `flags`.
    pub fn hyper(&self, base: HyperParams, flags: &HyperFlags) -> Result<HyperParams> {
        let mut hp: HyperParams = overlay_value(&base, self.hyper.as_ref())?;
        if let Some(v) = flags.epochs {
            hp.epochs = v;
        }
        if let Some(v) = flags.lr {
            hp.lr = v;
        }
        if let Some(v) = flags.lambda {
            hp.lambda = v;
        }
        if let Some(v) = flags.batch_size {
            hp.batch_size = v;
        }
        Ok(hp)
    }

    pub fn synth(&self, base: SynthConfig) -> Result<SynthConfig> {
        overlay_value(&base, self.synth.as_ref())
    }
}

/// Reads a user-supplied file, reporting a missing path as an input error.
pub fn read_input(path: &Path) -> Result<String> {
    require_file(path)?;
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(InputError(format!("input file not found: {}", path.display())).into())
    }
}

/// Replaces the fields of `base` present in `patch`.
fn overlay_value<T: Serialize + DeserializeOwned>(base: &T, patch: Option<&Value>) -> Result<T> {
    let mut v = serde_json::to_value(base)?;
    if let Some(patch) = patch {
        let Value::Object(fields) = patch else {
            return Err(InputError("config sections must be JSON objects".into()).into());
        };
        let target = v.as_object_mut().expect("struct serializes to an object");
        for (key, val) in fields {
            if !target.contains_key(key) {
                return Err(InputError(format!("unknown config field {key}")).into());
            }
            target.insert(key.clone(), val.clone());
        }
    }
    serde_json::from_value(v).map_err(|e| InputError(format!("invalid config: {e}")).into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    None,
    Greedy,
    Bins,
    Beta,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectOpts {
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Reduction of per-instance cosine similarity: min, median or max.
    #[arg(long)]
    pub reduce: Option<SimilarityReduce>,
    /// Hard threshold applied to beta weights.
    #[arg(long)]
    pub hard_threshold: Option<f64>,
    /// Number of chunks for binning.
    #[arg(long = "L")]
    pub chunks: Option<usize>,
    #[arg(long)]
    pub splits: Option<usize>,
    /// 1-based chunk kept by binning.
    #[arg(long)]
    pub select_chunk: Option<usize>,
    /// Categories kept by greedy selection; defaults to half.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Cluster count of the unlabeled set; defaults to its label count when labeled.
    #[arg(long)]
    pub k_unlabeled: Option<usize>,
    /// euclidean, cosine-distance or l2norm-euclidean.
    #[arg(long)]
    pub metric: Option<Metric>,
}

impl SelectOpts {
    /// Fields set in `self` win over `base`.
    pub fn or(self, base: &SelectOpts) -> SelectOpts {
        SelectOpts {
            method: self.method.or(base.method),
            alpha: self.alpha.or(base.alpha),
            beta: self.beta.or(base.beta),
            reduce: self.reduce.or(base.reduce),
            hard_threshold: self.hard_threshold.or(base.hard_threshold),
            chunks: self.chunks.or(base.chunks),
            splits: self.splits.or(base.splits),
            select_chunk: self.select_chunk.or(base.select_chunk),
            budget: self.budget.or(base.budget),
            k_unlabeled: self.k_unlabeled.or(base.k_unlabeled),
            metric: self.metric.or(base.metric),
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct HyperFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

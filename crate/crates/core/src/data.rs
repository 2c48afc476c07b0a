//! Embedding sets, category weights and their on-disk formats.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{DselError, Result};

const MAGIC: &[u8; 4] = b"DSEL";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 1;

/// Dense instance-by-dimension feature matrix with optional dense category labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    features: Array2<f64>,
    labels: Option<Vec<usize>>,
    n_categories: usize,
    category_names: Option<Vec<String>>,
    source_tag: Option<String>,
    origins: Option<Vec<usize>>,
    origin_tags: Vec<String>,
}

impl EmbeddingSet {
    /// Builds a validated set. Labels must be dense: every id in `0..=max` occurs.
    pub fn new(features: Array2<f64>, labels: Option<Vec<usize>>) -> Result<Self> {
        if features.ncols() == 0 {
            return Err(DselError::MalformedHeader(
                "dimension must be at least 1".into(),
            ));
        }
        for (r, row) in features.outer_iter().enumerate() {
            if let Some(c) = row.iter().position(|v| !v.is_finite()) {
                return Err(DselError::NonFinite { row: r, col: c });
            }
        }
        let n_categories = match &labels {
            Some(l) => {
                if l.len() != features.nrows() {
                    return Err(DselError::ShapeMismatch(format!(
                        "{} labels for {} rows",
                        l.len(),
                        features.nrows()
                    )));
                }
                dense_category_count(l)?
            }
            None => 0,
        };
        Ok(Self {
            features,
            labels,
            n_categories,
            category_names: None,
            source_tag: None,
            origins: None,
            origin_tags: Vec::new(),
        })
    }

    pub fn with_category_names(mut self, names: Vec<String>) -> Result<Self> {
        if self.labels.is_some() && names.len() != self.n_categories {
            return Err(DselError::ShapeMismatch(format!(
                "{} names for {} categories",
                names.len(),
                self.n_categories
            )));
        }
        self.category_names = Some(names);
        Ok(self)
    }

    pub fn with_source_tag(mut self, tag: impl Into<String>) -> Self {
        self.source_tag = Some(tag.into());
        self
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn require_labels(&self) -> Result<&[usize]> {
        self.labels.as_deref().ok_or(DselError::Unlabeled)
    }

    pub fn is_labeled(&self) -> bool {
        self.labels.is_some()
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_categories(&self) -> usize {
        self.n_categories
    }

    pub fn category_names(&self) -> Option<&[String]> {
        self.category_names.as_deref()
    }

    pub fn source_tag(&self) -> Option<&str> {
        self.source_tag.as_deref()
    }

    /// Per-instance index into [`Self::origin_tags`]; present on merged sets.
    pub fn origins(&self) -> Option<&[usize]> {
        self.origins.as_deref()
    }

    pub fn origin_tags(&self) -> &[String] {
        &self.origin_tags
    }

    /// Instance count per category id.
    pub fn category_counts(&self) -> Result<Vec<usize>> {
        let labels = self.require_labels()?;
        let mut counts = vec![0; self.n_categories];
        for &l in labels {
            counts[l] += 1;
        }
        Ok(counts)
    }

    /// Rows whose label is in `keep`, relabeled densely in ascending id order.
    pub fn subset_categories(&self, keep: &[usize]) -> Result<EmbeddingSet> {
        let labels = self.require_labels()?;
        let mut sorted: Vec<usize> = keep.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut remap = vec![usize::MAX; self.n_categories];
        for (new, &old) in sorted.iter().enumerate() {
            if old >= self.n_categories {
                return Err(DselError::LabelOutOfRange {
                    label: old as i64,
                    n_categories: self.n_categories,
                });
            }
            remap[old] = new;
        }
        let rows: Vec<usize> = (0..self.len())
            .filter(|&i| remap[labels[i]] != usize::MAX)
            .collect();
        let features = self.features.select(Axis(0), &rows);
        let new_labels = rows.iter().map(|&i| remap[labels[i]]).collect();
        let mut out = EmbeddingSet::new(features, Some(new_labels))?;
        if let Some(names) = &self.category_names {
            out.category_names = Some(sorted.iter().map(|&c| names[c].clone()).collect());
        }
        out.source_tag = self.source_tag.clone();
        Ok(out)
    }

    /// Same features without labels.
    pub fn unlabeled(&self) -> EmbeddingSet {
        EmbeddingSet {
            features: self.features.clone(),
            labels: None,
            n_categories: 0,
            category_names: None,
            source_tag: self.source_tag.clone(),
            origins: self.origins.clone(),
            origin_tags: self.origin_tags.clone(),
        }
    }

    pub fn save(&self, path: &Path, format: Format) -> Result<()> {
        match format {
            Format::Binary => self.save_binary(path),
            Format::Csv => self.save_csv(path),
        }
    }

    fn save_binary(&self, path: &Path) -> Result<()> {
        let n = u32::try_from(self.len())
            .map_err(|_| DselError::InvalidArgument("too many rows".into()))?;
        let dim = u32::try_from(self.dim())
            .map_err(|_| DselError::InvalidArgument("dimension too large".into()))?;
        let mut buf = Vec::with_capacity(HEADER_LEN + self.features.len() * 4 + self.len() * 4);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&n.to_le_bytes());
        buf.extend_from_slice(&dim.to_le_bytes());
        buf.push(u8::from(self.labels.is_some()));
        for v in self.features.iter() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        if let Some(labels) = &self.labels {
            for &l in labels {
                buf.extend_from_slice(&(l as u32).to_le_bytes());
            }
        }
        fs::write(path, buf).map_err(|e| DselError::io(path, e))
    }

    fn save_csv(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| DselError::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| DselError::io(path, e);
        let mut header: Vec<String> = (0..self.dim()).map(|d| format!("dim{d}")).collect();
        if self.labels.is_some() {
            header.push("label".into());
        }
        writeln!(w, "{}", header.join(",")).map_err(io)?;
        for (i, row) in self.features.outer_iter().enumerate() {
            let mut fields: Vec<String> = row.iter().map(|v| format_sig9(*v)).collect();
            if let Some(labels) = &self.labels {
                fields.push(labels[i].to_string());
            }
            writeln!(w, "{}", fields.join(",")).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Formats with 9 significant digits.
pub fn format_sig9(v: f64) -> String {
    format!("{v:.8e}")
}

fn dense_category_count(labels: &[usize]) -> Result<usize> {
    let Some(&max) = labels.iter().max() else {
        return Ok(0);
    };
    let n = max + 1;
    let mut seen = vec![false; n];
    for &l in labels {
        seen[l] = true;
    }
    match seen.iter().position(|s| !s) {
        Some(c) => Err(DselError::EmptyCategory(c)),
        None => Ok(n),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Binary,
    Csv,
}

impl Format {
    /// Guesses the format from a file extension; anything but `.csv` is binary.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Binary,
        }
    }
}

impl FromStr for Format {
    type Err = DselError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" | "bin" => Ok(Format::Binary),
            "csv" => Ok(Format::Csv),
            other => Err(DselError::InvalidArgument(format!(
                "unknown format {other}"
            ))),
        }
    }
}

pub fn load_embeddings(path: &Path, format: Format) -> Result<EmbeddingSet> {
    match format {
        Format::Binary => load_binary(path),
        Format::Csv => load_csv(path),
    }
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

fn load_binary(path: &Path) -> Result<EmbeddingSet> {
    let bytes = fs::read(path).map_err(|e| DselError::io(path, e))?;
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(DselError::MalformedHeader("missing DSEL magic".into()));
    }
    let version = read_u32(&bytes, 4);
    if version != VERSION {
        return Err(DselError::MalformedHeader(format!(
            "unsupported version {version}"
        )));
    }
    let n = read_u32(&bytes, 8) as usize;
    let dim = read_u32(&bytes, 12) as usize;
    let has_labels = match bytes[16] {
        0 => false,
        1 => true,
        b => {
            return Err(DselError::MalformedHeader(format!(
                "invalid label flag {b}"
            )))
        }
    };
    if dim == 0 {
        return Err(DselError::MalformedHeader(
            "dimension must be at least 1".into(),
        ));
    }
    let payload = bytes.len() - HEADER_LEN;
    let label_bytes = if has_labels { n * 4 } else { 0 };
    let feature_bytes = n * dim * 4;
    if payload != feature_bytes + label_bytes {
        if n > 0 && payload >= label_bytes && (payload - label_bytes).is_multiple_of(4) {
            let floats = (payload - label_bytes) / 4;
            let before_last = (n - 1) * dim;
            if floats > before_last && floats < before_last + dim {
                return Err(DselError::DimensionMismatch {
                    expected: dim,
                    found: floats - before_last,
                    row: n - 1,
                });
            }
        }
        return Err(DselError::MalformedHeader(format!(
            "payload of {payload} bytes does not match n={n}, dim={dim}"
        )));
    }
    let body = &bytes[HEADER_LEN..];
    let mut data = Vec::with_capacity(n * dim);
    for (idx, chunk) in body[..feature_bytes].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        if !v.is_finite() {
            return Err(DselError::NonFinite {
                row: idx / dim,
                col: idx % dim,
            });
        }
        data.push(f64::from(v));
    }
    let labels = if has_labels {
        let labels: Vec<usize> = body[feature_bytes..]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4-byte chunk")) as usize)
            .collect();
        Some(labels)
    } else {
        None
    };
    let features = Array2::from_shape_vec((n, dim), data).expect("shape checked above");
    EmbeddingSet::new(features, labels)
}

fn load_csv(path: &Path) -> Result<EmbeddingSet> {
    let file = fs::File::open(path).map_err(|e| DselError::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|e| DselError::io(path, e))?,
        None => return Err(DselError::MalformedHeader("empty file".into())),
    };
    let cols: Vec<&str> = header.trim().split(',').map(str::trim).collect();
    let has_labels = cols.last() == Some(&"label");
    let dim = cols.len() - usize::from(has_labels);
    if dim == 0 {
        return Err(DselError::MalformedHeader("no dimension columns".into()));
    }
    for (d, c) in cols[..dim].iter().enumerate() {
        if *c != format!("dim{d}") {
            return Err(DselError::MalformedHeader(format!(
                "unexpected column {c:?}"
            )));
        }
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut row = 0;
    for line in lines {
        let line = line.map_err(|e| DselError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(DselError::DimensionMismatch {
                expected: dim,
                found: fields.len().saturating_sub(usize::from(has_labels)),
                row,
            });
        }
        for (col, f) in fields[..dim].iter().enumerate() {
            let v: f64 = f.parse().map_err(|_| {
                DselError::MalformedHeader(format!("unparsable value {f:?} at row {row}"))
            })?;
            if !v.is_finite() {
                return Err(DselError::NonFinite { row, col });
            }
            data.push(v);
        }
        if has_labels {
            let raw = fields[dim];
            let l: i64 = raw.parse().map_err(|_| {
                DselError::MalformedHeader(format!("unparsable label {raw:?} at row {row}"))
            })?;
            if l < 0 {
                return Err(DselError::LabelOutOfRange {
                    label: l,
                    n_categories: 0,
                });
            }
            labels.push(l as usize);
        }
        row += 1;
    }
    let features = Array2::from_shape_vec((row, dim), data).expect("rows checked above");
    EmbeddingSet::new(features, has_labels.then_some(labels))
}

/// Concatenates labeled sets, reindexing categories into one dense range.
pub fn merge_sources(sets: &[EmbeddingSet]) -> Result<EmbeddingSet> {
    let first = sets.first().ok_or(DselError::EmptyInput)?;
    let dim = first.dim();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut names = Vec::new();
    let mut origins = Vec::new();
    let mut origin_tags = Vec::new();
    let mut offset = 0;
    for (s, set) in sets.iter().enumerate() {
        if set.dim() != dim {
            return Err(DselError::DimensionMismatch {
                expected: dim,
                found: set.dim(),
                row: 0,
            });
        }
        let set_labels = set.require_labels()?;
        let tag = set
            .source_tag
            .clone()
            .unwrap_or_else(|| format!("source{s}"));
        for c in 0..set.n_categories() {
            let base = set
                .category_names
                .as_ref()
                .map(|n| n[c].clone())
                .unwrap_or_else(|| c.to_string());
            names.push(format!("{tag}/{base}"));
        }
        rows.push(set.features.view());
        labels.extend(set_labels.iter().map(|&l| l + offset));
        origins.extend(std::iter::repeat_n(s, set.len()));
        origin_tags.push(tag);
        offset += set.n_categories();
    }
    let features = ndarray::concatenate(Axis(0), &rows).expect("dims checked above");
    let mut out = EmbeddingSet::new(features, Some(labels))?;
    out.category_names = Some(names);
    out.source_tag = Some(origin_tags.join("+"));
    out.origins = Some(origins);
    out.origin_tags = origin_tags;
    Ok(out)
}

/// Per-category weights ω^c.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightAssignment {
    category_weights: BTreeMap<usize, f64>,
}

impl WeightAssignment {
    pub fn new(category_weights: BTreeMap<usize, f64>) -> Result<Self> {
        for (&c, &w) in &category_weights {
            if !w.is_finite() || w < 0.0 {
                return Err(DselError::InvalidWeight {
                    category: c,
                    value: w,
                });
            }
        }
        Ok(Self { category_weights })
    }

    pub fn from_vec(weights: &[f64]) -> Result<Self> {
        Self::new(weights.iter().copied().enumerate().collect())
    }

    pub fn ones(n_categories: usize) -> Self {
        Self {
            category_weights: (0..n_categories).map(|c| (c, 1.0)).collect(),
        }
    }

    pub fn get(&self, category: usize) -> Option<f64> {
        self.category_weights.get(&category).copied()
    }

    pub fn category_weights(&self) -> &BTreeMap<usize, f64> {
        &self.category_weights
    }

    /// Dense vector over `0..n_categories`; missing entries are an error.
    pub fn to_vec(&self, n_categories: usize) -> Result<Vec<f64>> {
        (0..n_categories)
            .map(|c| self.get(c).ok_or(DselError::MissingWeight(c)))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.category_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.category_weights.is_empty()
    }

    /// JSON object mapping category-id strings to numbers.
    pub fn to_json(&self) -> Result<String> {
        let map: BTreeMap<String, f64> = self
            .category_weights
            .iter()
            .map(|(c, w)| (c.to_string(), *w))
            .collect();
        Ok(serde_json::to_string_pretty(&map)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let map: BTreeMap<String, f64> = serde_json::from_str(text)?;
        let mut out = BTreeMap::new();
        for (k, v) in map {
            let c: usize = k.parse().map_err(|_| {
                DselError::InvalidArgument(format!("category key {k:?} is not an integer"))
            })?;
            out.insert(c, v);
        }
        Self::new(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| DselError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| DselError::io(path, e))?;
        Self::from_json(&text)
    }
}

/// How [`instance_weights`] treats categories without an entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingWeight {
    #[default]
    Error,
    DefaultOne,
}

/// Broadcasts ω^c to every instance of category c.
pub fn instance_weights(
    w: &WeightAssignment,
    d: &EmbeddingSet,
    missing: MissingWeight,
) -> Result<Vec<f64>> {
    let labels = d.require_labels()?;
    labels
        .iter()
        .map(|&l| match (w.get(l), missing) {
            (Some(v), _) => Ok(v),
            (None, MissingWeight::DefaultOne) => Ok(1.0),
            (None, MissingWeight::Error) => Err(DselError::MissingWeight(l)),
        })
        .collect()
}

/// Source-target similarity tier of a synthetic source category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum HierarchyTier {
    Similar,
    Medium,
    Dissimilar,
    #[serde(rename = "OOD")]
    Ood,
}

impl HierarchyTier {
    pub const ALL: [HierarchyTier; 4] = [
        HierarchyTier::Similar,
        HierarchyTier::Medium,
        HierarchyTier::Dissimilar,
        HierarchyTier::Ood,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HierarchyTier::Similar => "Similar",
            HierarchyTier::Medium => "Medium",
            HierarchyTier::Dissimilar => "Dissimilar",
            HierarchyTier::Ood => "OOD",
        }
    }
}

impl fmt::Display for HierarchyTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HierarchyTier {
    type Err = DselError;

    fn from_str(s: &str) -> Result<Self> {
        HierarchyTier::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| DselError::InvalidArgument(format!("unknown tier {s}")))
    }
}

//! Tabular datasets: CSV ingestion, MinMax scaling, labeled/unlabeled/test
//! partitioning, seeded batching, and a synthetic generator with a known set
//! of informative columns.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{sigmoid, Matrix};
use crate::rng::SeedStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Labels {
    /// Class indices in `0..n_classes`.
    Classes { values: Vec<usize>, n_classes: usize },
    /// Real-valued regression targets.
    Regression(Vec<f64>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes { values, .. } => values.len(),
            Labels::Regression(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> Option<(&[usize], usize)> {
        match self {
            Labels::Classes { values, n_classes } => Some((values, *n_classes)),
            Labels::Regression(_) => None,
        }
    }

    pub fn subset(&self, rows: &[usize]) -> Labels {
        match self {
            Labels::Classes { values, n_classes } => Labels::Classes {
                values: rows.iter().map(|&r| values[r]).collect(),
                n_classes: *n_classes,
            },
            Labels::Regression(v) => Labels::Regression(rows.iter().map(|&r| v[r]).collect()),
        }
    }

    /// Build class labels when every value is a non-negative integer,
    /// regression targets otherwise.
    pub fn infer(raw: Vec<f64>) -> Labels {
        let integral = raw.iter().all(|v| *v >= 0.0 && v.fract() == 0.0 && *v < 1e9);
        if integral && !raw.is_empty() {
            let values: Vec<usize> = raw.iter().map(|v| *v as usize).collect();
            let n_classes = values.iter().max().map_or(0, |m| m + 1);
            Labels::Classes { values, n_classes }
        } else {
            Labels::Regression(raw)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionTag {
    LabeledTrain,
    UnlabeledTrain,
    Test,
    /// Rows left over when the requested counts do not use the whole dataset.
    Unassigned,
}

impl fmt::Display for PartitionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PartitionTag::LabeledTrain => "labeled-train",
            PartitionTag::UnlabeledTrain => "unlabeled-train",
            PartitionTag::Test => "test",
            PartitionTag::Unassigned => "unassigned",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(x: &Matrix, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Validation("cannot fit a scaler on zero rows".into()));
        }
        let d = x.cols();
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for &r in rows {
            for (j, &v) in x.row(r).iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Ok(Self { min, max })
    }

    pub fn constant_columns(&self) -> Vec<usize> {
        (0..self.min.len()).filter(|&j| self.max[j] <= self.min[j]).collect()
    }

    /// Scale into [0, 1]; values outside the fitted range are clipped and
    /// constant columns map to 0.
    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.min.len() {
            return Err(Error::dimension("scaler transform", self.min.len(), x.cols()));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (j, v) in out.row_mut(r).iter_mut().enumerate() {
                let span = self.max[j] - self.min[j];
                *v = if span > 0.0 {
                    ((*v - self.min[j]) / span).clamp(0.0, 1.0)
                } else {
                    0.0
                };
            }
        }
        Ok(out)
    }

    pub fn inverse_transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.min.len() {
            return Err(Error::dimension("scaler inverse", self.min.len(), x.cols()));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (j, v) in out.row_mut(r).iter_mut().enumerate() {
                let span = self.max[j] - self.min[j];
                *v = if span > 0.0 { *v * span + self.min[j] } else { self.min[j] };
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Option<Labels>,
    pub feature_names: Vec<String>,
    pub scaler: Option<MinMaxScaler>,
    pub partition: Vec<PartitionTag>,
    /// Informative columns, known only for synthetic data.
    pub informative: Option<Vec<usize>>,
}

impl Dataset {
    /// A dataset with every row tagged unlabeled-train.
    pub fn new(features: Matrix, labels: Option<Labels>, feature_names: Option<Vec<String>>) -> Result<Self> {
        let (n, d) = features.shape();
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::dimension("dataset labels", n, l.len()));
            }
        }
        let feature_names = feature_names.unwrap_or_else(|| (0..d).map(|j| format!("f{j}")).collect());
        if feature_names.len() != d {
            return Err(Error::dimension("feature names", d, feature_names.len()));
        }
        if !features.is_finite() {
            return Err(Error::Validation("features contain NaN or infinite values".into()));
        }
        Ok(Self {
            features,
            labels,
            feature_names,
            scaler: None,
            partition: vec![PartitionTag::UnlabeledTrain; n],
            informative: None,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.features.rows()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn n_classes(&self) -> Option<usize> {
        self.labels.as_ref().and_then(|l| l.classes()).map(|(_, c)| c)
    }

    pub fn rows_of(&self, tag: PartitionTag) -> Vec<usize> {
        self.partition
            .iter()
            .enumerate()
            .filter(|(_, t)| **t == tag)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn count(&self, tag: PartitionTag) -> usize {
        self.partition.iter().filter(|t| **t == tag).count()
    }

    pub fn features_of(&self, tag: PartitionTag) -> Matrix {
        self.features.select_rows(&self.rows_of(tag))
    }

    pub fn labels_of(&self, tag: PartitionTag) -> Option<Labels> {
        self.labels.as_ref().map(|l| l.subset(&self.rows_of(tag)))
    }

    pub fn class_labels_of(&self, tag: PartitionTag) -> Result<(Vec<usize>, usize)> {
        match self.labels_of(tag) {
            Some(Labels::Classes { values, n_classes }) => Ok((values, n_classes)),
            Some(Labels::Regression(_)) => Err(Error::Validation("dataset has regression targets, not classes".into())),
            None => Err(Error::Validation("dataset has no labels".into())),
        }
    }

    /// Replace the feature matrix, keeping everything else.
    pub fn with_features(&self, features: Matrix) -> Result<Self> {
        features.ensure_same_shape(&self.features, "dataset features")?;
        Ok(Self {
            features,
            ..self.clone()
        })
    }

    /// Write features and labels as CSV. Each `comments` entry becomes a
    /// leading `# ` line, which `parse_csv` skips.
    pub fn write_csv(&self, path: &Path, comments: &[String]) -> Result<()> {
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for c in comments {
            writeln!(file, "# {c}").map_err(|e| Error::io(path, e))?;
        }
        let mut w = csv::Writer::from_writer(file);
        let mut header = self.feature_names.clone();
        if self.labels.is_some() {
            header.push("label".into());
        }
        w.write_record(&header).map_err(|e| Error::io(path, csv_io(e)))?;
        for r in 0..self.n_rows() {
            let mut rec: Vec<String> = self.features.row(r).iter().map(|v| format!("{v}")).collect();
            match &self.labels {
                Some(Labels::Classes { values, .. }) => rec.push(values[r].to_string()),
                Some(Labels::Regression(v)) => rec.push(format!("{}", v[r])),
                None => {}
            }
            w.write_record(&rec).map_err(|e| Error::io(path, csv_io(e)))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_io(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e.to_string())
}

/// Read a numeric CSV. `label_column` names a header column, or gives a
/// zero-based column index when there is no header.
pub fn load_csv(path: &Path, label_column: Option<&str>, has_header: bool) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, label_column, has_header, &path.display().to_string())
}

pub fn parse_csv(text: &str, label_column: Option<&str>, has_header: bool, source: &str) -> Result<Dataset> {
    let mut text = text;
    while text.starts_with('#') {
        text = text.find('\n').map_or("", |i| &text[i + 1..]);
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = reader.records();

    let header: Option<Vec<String>> = if has_header {
        match records.next() {
            Some(rec) => {
                let rec = rec.map_err(|e| Error::parse(source, 1, e.to_string()))?;
                Some(rec.iter().map(str::to_string).collect())
            }
            None => return Err(Error::parse(source, 0, "empty file")),
        }
    } else {
        None
    };

    let mut width = header.as_ref().map(Vec::len);
    let label_idx = match (label_column, &header) {
        (None, _) => None,
        (Some(name), Some(h)) => Some(
            h.iter()
                .position(|c| c == name)
                .ok_or_else(|| Error::Validation(format!("label column `{name}` not in header")))?,
        ),
        (Some(idx), None) => Some(idx.parse::<usize>().map_err(|_| {
            Error::Validation(format!("label column `{idx}` must be an index when the file has no header"))
        })?),
    };

    let mut values = Vec::new();
    let mut raw_labels = Vec::new();
    let mut n_rows = 0;
    for (i, rec) in records.enumerate() {
        let line = i + 1 + usize::from(has_header);
        let rec = rec.map_err(|e| Error::parse(source, line, e.to_string()))?;
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(Error::parse(
                source,
                line,
                format!("row {n_rows} has {} fields, expected {w}", rec.len()),
            ));
        }
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                Error::parse(source, line, format!("row {n_rows}, column {j}: `{cell}` is not a number"))
            })?;
            if !v.is_finite() {
                return Err(Error::parse(source, line, format!("row {n_rows}, column {j}: non-finite value")));
            }
            if Some(j) == label_idx {
                raw_labels.push(v);
            } else {
                values.push(v);
            }
        }
        n_rows += 1;
    }
    let width = match width {
        Some(w) if n_rows > 0 => w,
        _ => return Err(Error::parse(source, 0, "empty file")),
    };
    if let Some(li) = label_idx {
        if li >= width {
            return Err(Error::Validation(format!("label column {li} out of range for {width} columns")));
        }
    }
    let d = width - usize::from(label_idx.is_some());
    if d == 0 {
        return Err(Error::Validation("no feature columns".into()));
    }
    let names = header.map(|h| {
        h.into_iter()
            .enumerate()
            .filter(|(j, _)| Some(*j) != label_idx)
            .map(|(_, n)| n)
            .collect()
    });
    let labels = label_idx.map(|_| Labels::infer(raw_labels));
    Dataset::new(Matrix::from_vec(n_rows, d, values)?, labels, names)
}

/// Fit a MinMax scaler and apply it to every row. The scaler is fitted on
/// the training partitions when any exist, otherwise on all rows.
pub fn minmax_scale(ds: &Dataset) -> Result<Dataset> {
    let mut fit_rows: Vec<usize> = (0..ds.n_rows())
        .filter(|&r| {
            matches!(
                ds.partition[r],
                PartitionTag::LabeledTrain | PartitionTag::UnlabeledTrain
            )
        })
        .collect();
    if fit_rows.is_empty() {
        fit_rows = (0..ds.n_rows()).collect();
    }
    let scaler = MinMaxScaler::fit(&ds.features, &fit_rows)?;
    for j in scaler.constant_columns() {
        log::warn!("feature `{}` is constant; it scales to 0", ds.feature_names[j]);
    }
    let features = scaler.transform(&ds.features)?;
    Ok(Dataset {
        features,
        scaler: Some(scaler),
        ..ds.clone()
    })
}

/// Split `n` items across groups proportionally to `sizes` (largest
/// remainder), never exceeding a group's size.
pub fn proportional_allocation(sizes: &[usize], n: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return vec![0; sizes.len()];
    }
    let mut alloc: Vec<usize> = sizes.iter().map(|&s| (s * n / total).min(s)).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    // Largest fractional remainder first, ties by class index.
    order.sort_by(|&a, &b| {
        let ra = (sizes[a] * n) % total;
        let rb = (sizes[b] * n) % total;
        rb.cmp(&ra).then(a.cmp(&b))
    });
    let mut assigned: usize = alloc.iter().sum();
    let mut cursor = 0;
    while assigned < n {
        let g = order[cursor % order.len()];
        if alloc[g] < sizes[g] {
            alloc[g] += 1;
            assigned += 1;
        }
        cursor += 1;
        if cursor > order.len() * (n + 1) {
            break;
        }
    }
    alloc
}

/// Seeded shuffle and split. Labeled and test rows are stratified by class.
pub fn partition(ds: &Dataset, n_labeled: usize, n_unlabeled: usize, n_test: usize, seed: u64) -> Result<Dataset> {
    let n = ds.n_rows();
    let requested = n_labeled + n_unlabeled + n_test;
    if requested > n {
        return Err(Error::Validation(format!(
            "partition needs {requested} rows but the dataset has {n}"
        )));
    }
    if (n_labeled > 0 || n_test > 0) && ds.labels.is_none() {
        return Err(Error::Validation(
            "labeled or test rows requested but the dataset has no labels".into(),
        ));
    }
    let mut rng = SeedStream::new(seed).child("partition").rng();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let mut tags = vec![PartitionTag::Unassigned; n];
    let mut taken = vec![false; n];
    let mut take_stratified = |count: usize, tag: PartitionTag, tags: &mut Vec<PartitionTag>| {
        let pool: Vec<usize> = order.iter().copied().filter(|&r| !taken[r]).collect();
        let chosen: Vec<usize> = match ds.labels.as_ref().and_then(|l| l.classes()) {
            Some((values, n_classes)) => {
                let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
                for &r in &pool {
                    by_class[values[r]].push(r);
                }
                let sizes: Vec<usize> = by_class.iter().map(Vec::len).collect();
                let alloc = proportional_allocation(&sizes, count);
                by_class
                    .iter()
                    .zip(&alloc)
                    .flat_map(|(rows, &k)| rows[..k].iter().copied())
                    .collect()
            }
            None => pool.into_iter().take(count).collect(),
        };
        for &r in &chosen {
            taken[r] = true;
            tags[r] = tag;
        }
        chosen.len()
    };
    for (count, tag) in [(n_labeled, PartitionTag::LabeledTrain), (n_test, PartitionTag::Test)] {
        let got = take_stratified(count, tag, &mut tags);
        if got != count {
            return Err(Error::Validation(format!("only {got} rows available for {tag}, {count} requested")));
        }
    }
    let mut left = n_unlabeled;
    for &r in &order {
        if left == 0 {
            break;
        }
        if tags[r] == PartitionTag::Unassigned {
            tags[r] = PartitionTag::UnlabeledTrain;
            left -= 1;
        }
    }
    Ok(Dataset {
        partition: tags,
        ..ds.clone()
    })
}

/// Row-index batches for one epoch of a partition. The permutation depends
/// only on `(seed, epoch)`; the last batch may be short.
pub fn batches(ds: &Dataset, tag: PartitionTag, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    let rows = ds.rows_of(tag);
    if rows.is_empty() {
        return Err(Error::Validation(format!("partition {tag} is empty")));
    }
    epoch_batches(&rows, batch_size, SeedStream::new(seed).child("batches"), epoch)
}

/// Shuffle `rows` for `epoch` and chunk into batches.
pub fn epoch_batches(rows: &[usize], batch_size: usize, stream: SeedStream, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if rows.is_empty() {
        return Err(Error::Validation("cannot batch an empty row set".into()));
    }
    let mut order = rows.to_vec();
    order.shuffle(&mut stream.index(epoch).rng());
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetRule {
    /// `y = 1[Σ c_j (x_j − ½) + noise·ε > 0]` over the informative columns, with positive `c_j`.
    LinearLogit,
    /// Parity of `x_j > ½` over the informative columns.
    XorPair,
}

/// Recipe for a synthetic classification dataset with known informative
/// columns. Columns come in two independent blocks (informative and noise);
/// inside each block values share low-dimensional latent factors, which
/// gives the autoencoder structure to learn without leaking label
/// information into the noise block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub n_features: usize,
    pub k_true: usize,
    /// Explicit informative columns; drawn from the seed when absent.
    pub informative: Option<Vec<usize>>,
    pub rule: TargetRule,
    /// Label noise: std of the Gaussian added to the decision score.
    pub noise: f64,
    /// Latent factors per block.
    pub latent_dim: usize,
    /// Share of each column's pre-activation variance explained by its block's latents.
    pub latent_share: f64,
    /// Steepness of the squashing sigmoid.
    pub gain: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_samples: 3200,
            n_features: 20,
            k_true: 5,
            informative: None,
            rule: TargetRule::LinearLogit,
            noise: 0.0,
            latent_dim: 1,
            latent_share: 0.5,
            gain: 3.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn informative_set(&self) -> Result<Vec<usize>> {
        let d = self.n_features;
        if let Some(set) = &self.informative {
            let mut s = set.clone();
            s.sort_unstable();
            s.dedup();
            if s.len() != set.len() || s.iter().any(|&j| j >= d) {
                return Err(Error::Config("informative columns must be distinct and < n_features".into()));
            }
            if s.len() != self.k_true {
                return Err(Error::Config(format!(
                    "k_true = {} but {} informative columns listed",
                    self.k_true,
                    s.len()
                )));
            }
            return Ok(s);
        }
        let mut all: Vec<usize> = (0..d).collect();
        all.shuffle(&mut SeedStream::new(self.seed).child("informative").rng());
        let mut s = all[..self.k_true].to_vec();
        s.sort_unstable();
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_true == 0 || self.k_true >= self.n_features {
            return Err(Error::Config(format!(
                "need 0 < k_true < n_features, got k_true = {}, n_features = {}",
                self.k_true, self.n_features
            )));
        }
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.latent_share) || self.latent_dim == 0 {
            return Err(Error::Config("latent_share must be in [0, 1] and latent_dim >= 1".into()));
        }
        if self.noise < 0.0 || !self.noise.is_finite() || !(self.gain > 0.0) {
            return Err(Error::Config("noise must be >= 0 and gain > 0".into()));
        }
        Ok(())
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let (n, d) = (spec.n_samples, spec.n_features);
    let informative = spec.informative_set()?;
    let is_informative: Vec<bool> = (0..d).map(|j| informative.contains(&j)).collect();
    let root = SeedStream::new(spec.seed);

    // Informative and noise columns form two blocks with independent latents.
    let block_of: Vec<usize> = is_informative.iter().map(|&inf| usize::from(!inf)).collect();
    let n_blocks = 2;

    // Non-negative unit loadings keep every column in a block positively
    // correlated, so no informative column's marginal signal cancels.
    let mut load_rng = root.child("loadings").rng();
    let loadings: Vec<Vec<f64>> = (0..d)
        .map(|_| {
            let raw: Vec<f64> = (0..spec.latent_dim).map(|_| load_rng.random_range(0.05..1.0)).collect();
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            raw.into_iter().map(|v| v / norm).collect()
        })
        .collect();
    let coef: Vec<f64> = (0..d).map(|_| load_rng.random_range(0.5..1.5)).collect();

    let share = spec.latent_share.sqrt();
    let own = (1.0 - spec.latent_share).sqrt();
    let mut rng = root.child("samples").rng();
    let mut features = Matrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    let mut latents = vec![0.0; n_blocks * spec.latent_dim];
    for i in 0..n {
        latents.iter_mut().for_each(|u| *u = StandardNormal.sample(&mut rng));
        let row = features.row_mut(i);
        for j in 0..d {
            let b = block_of[j];
            let latent = &latents[b * spec.latent_dim..(b + 1) * spec.latent_dim];
            let common: f64 = loadings[j].iter().zip(latent).map(|(a, u)| a * u).sum();
            let e: f64 = StandardNormal.sample(&mut rng);
            row[j] = sigmoid(spec.gain * (share * common + own * e));
        }
        let label_noise: f64 = StandardNormal.sample(&mut rng);
        let y = match spec.rule {
            TargetRule::LinearLogit => {
                let score: f64 = informative.iter().map(|&j| coef[j] * (row[j] - 0.5)).sum();
                usize::from(score + spec.noise * label_noise > 0.0)
            }
            TargetRule::XorPair => {
                let mut parity = 0;
                for &j in &informative {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    parity ^= usize::from(row[j] - 0.5 + spec.noise * e > 0.0);
                }
                parity
            }
        };
        labels.push(y);
    }
    let mut ds = Dataset::new(
        features,
        Some(Labels::Classes {
            values: labels,
            n_classes: 2,
        }),
        None,
    )?;
    ds.informative = Some(informative);
    Ok(ds)
}

/// Per-class row counts.
pub fn class_counts(labels: &[usize], n_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; n_classes];
    for &y in labels {
        counts[y] += 1;
    }
    counts
}

/// Map of partition tag to row count, for logs.
pub fn partition_summary(ds: &Dataset) -> BTreeMap<PartitionTag, usize> {
    let mut m = BTreeMap::new();
    for t in &ds.partition {
        *m.entry(*t).or_insert(0) += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_without_labels() {
        let ds = parse_csv("1,2\n3,4\n5,6\n", None, false, "t").unwrap();
        assert_eq!((ds.n_rows(), ds.n_features()), (3, 2));
        assert!(ds.labels.is_none());
        assert_eq!(ds.count(PartitionTag::UnlabeledTrain), 3);
    }

    #[test]
    fn csv_with_label_column() {
        let ds = parse_csv("a,y,b\n0.1,0,2\n0.2,1,3\n0.3,1,4\n", Some("y"), true, "t").unwrap();
        assert_eq!(ds.n_features(), 2);
        assert_eq!(ds.feature_names, vec!["a", "b"]);
        assert_eq!(
            ds.labels,
            Some(Labels::Classes {
                values: vec![0, 1, 1],
                n_classes: 2
            })
        );
    }

    #[test]
    fn csv_errors_name_the_row() {
        let err = parse_csv("1,2\n3,4\n5\n", None, false, "t").unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
        let err = parse_csv("1,2\n3,x\n", None, false, "t").unwrap_err();
        assert!(err.to_string().contains("row 1, column 1"), "{err}");
        assert!(parse_csv("", None, false, "t").is_err());
        assert!(parse_csv("a,b\n", None, true, "t").is_err());
        let commented = parse_csv("# note\n# more\n1,2\n", None, false, "t").unwrap();
        assert_eq!(commented.n_rows(), 1);
    }

    #[test]
    fn scaling_cases() {
        let x = Matrix::from_rows(&[[0.0, 3.0], [5.0, 3.0], [10.0, 3.0]]).unwrap();
        let ds = minmax_scale(&Dataset::new(x.clone(), None, None).unwrap()).unwrap();
        assert_eq!(ds.features.column(0), vec![0.0, 0.5, 1.0]);
        assert_eq!(ds.features.column(1), vec![0.0, 0.0, 0.0]);
        let back = ds.scaler.as_ref().unwrap().inverse_transform(&ds.features).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn allocation_is_proportional() {
        assert_eq!(proportional_allocation(&[50, 30, 20], 10), vec![5, 3, 2]);
        assert_eq!(proportional_allocation(&[1, 1, 1], 2).iter().sum::<usize>(), 2);
        assert_eq!(proportional_allocation(&[2, 100], 10), vec![0, 10]);
        assert_eq!(proportional_allocation(&[3, 100], 10), vec![0, 10]);
        assert_eq!(proportional_allocation(&[1, 3], 10), vec![1, 3]);
        assert_eq!(proportional_allocation(&[4, 4], 3).iter().sum::<usize>(), 3);
    }

    #[test]
    fn batch_sizes() {
        let ds = Dataset::new(Matrix::zeros(10, 2), None, None).unwrap();
        let b = batches(&ds, PartitionTag::UnlabeledTrain, 4, 1, 0).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        assert!(batches(&ds, PartitionTag::Test, 4, 1, 0).is_err());
        assert!(batches(&ds, PartitionTag::UnlabeledTrain, 0, 1, 0).is_err());
    }

    #[test]
    fn synthetic_spec_validation() {
        let bad = SyntheticSpec {
            k_true: 20,
            ..Default::default()
        };
        assert!(generate_synthetic(&bad).is_err());
        let listed = SyntheticSpec {
            informative: Some(vec![1, 1, 2, 3, 4]),
            ..Default::default()
        };
        assert!(generate_synthetic(&listed).is_err());
    }
}

//! Experiment driver: downstream evaluation, cross-validation, sweeps and a
//! Fisher-score baseline.
//!
//! The downstream model is a small dense classifier trained with Adam on the
//! labeled-train rows restricted to the selected columns and scored on the
//! test rows.

use std::collections::BTreeMap;
use std::time::Duration;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{epoch_batches, proportional_allocation, Dataset, Labels, PartitionTag};
use crate::error::{Error, Result};
use crate::noise::{apply_noise, NoiseSpec};
use crate::nn::{self, Activation, Matrix, Mlp, Optimizer};
use crate::pretext::{pretrain, AutoencoderModel, EpochLoss, PretextConfig};
use crate::rng::SeedStream;
use crate::selector::{
    precision_at_k, rank_order, train_selector, AttentionSelector, FeatureRanking, SelectorConfig, SelectorLog,
    SelectorMode, Task,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 32],
            epochs: 200,
            learning_rate: 0.001,
            batch_size: 128,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) || self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::Config(
                "classifier widths and batch_size must be positive and learning_rate > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Everything one pretrain → select → evaluate run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: SelectorMode,
    pub pretext: PretextConfig,
    pub selector: SelectorConfig,
    pub classifier: ClassifierConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: SelectorMode::Full,
            pretext: PretextConfig::default(),
            selector: SelectorConfig::default(),
            classifier: ClassifierConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.pretext.validate()?;
        self.selector.validate()?;
        self.classifier.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / truth.len() as f64
}

/// Unweighted mean of per-class F1 over the classes that occur in either
/// `pred` or `truth`.
pub fn macro_f1(pred: &[usize], truth: &[usize], n_classes: usize) -> f64 {
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fn_ = vec![0usize; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let scores: Vec<f64> = (0..n_classes)
        .filter(|&c| tp[c] + fp[c] + fn_[c] > 0)
        .map(|c| 2.0 * tp[c] as f64 / (2 * tp[c] + fp[c] + fn_[c]) as f64)
        .collect();
    if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    }
}

/// Row-wise argmax; the lowest index wins ties.
pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    m.iter_rows()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// Train the downstream classifier on `x`/`labels`.
pub fn train_classifier(
    x: &Matrix,
    labels: &[usize],
    n_classes: usize,
    config: &ClassifierConfig,
    stream: SeedStream,
) -> Result<Mlp> {
    config.validate()?;
    if x.rows() == 0 || labels.len() != x.rows() {
        return Err(Error::dimension("classifier training labels", x.rows(), labels.len()));
    }
    let mut widths = vec![x.cols()];
    widths.extend(&config.hidden);
    widths.push(n_classes);
    let mut activations = vec![Activation::Relu; config.hidden.len()];
    activations.push(Activation::Identity);
    let mut net = Mlp::glorot(&widths, &activations, &mut stream.child("init").rng())?;
    let mut optimizer = Optimizer::adam(config.learning_rate)?;
    let rows: Vec<usize> = (0..x.rows()).collect();
    let batch_stream = stream.child("batches");
    for epoch in 0..config.epochs {
        for batch in epoch_batches(&rows, config.batch_size, batch_stream, epoch as u64)? {
            let bx = x.select_rows(&batch);
            let by: Vec<usize> = batch.iter().map(|&r| labels[r]).collect();
            let trace = net.forward_trace(&bx)?;
            let loss = nn::categorical_cross_entropy(trace.last().expect("non-empty MLP"), &by)?;
            if !loss.value.is_finite() {
                return Err(Error::Numerical(format!(
                    "classifier loss is not finite at epoch {}",
                    epoch + 1
                )));
            }
            let (grads, _) = net.backward(&bx, &trace, &loss.grad)?;
            optimizer.step(&mut net.params_mut("classifier"), &nn::flatten_grads(grads))?;
        }
    }
    Ok(net)
}

/// Train on the labeled-train rows restricted to `subset` and score the test rows.
pub fn downstream_eval(ds: &Dataset, subset: &[usize], config: &ClassifierConfig, stream: SeedStream) -> Result<Metrics> {
    if subset.is_empty() {
        return Err(Error::Validation("downstream evaluation needs at least one feature".into()));
    }
    if let Some(&bad) = subset.iter().find(|&&j| j >= ds.n_features()) {
        return Err(Error::Validation(format!(
            "feature index {bad} out of range for {} features",
            ds.n_features()
        )));
    }
    let (train_y, n_classes) = ds.class_labels_of(PartitionTag::LabeledTrain)?;
    let (test_y, _) = ds.class_labels_of(PartitionTag::Test)?;
    if train_y.is_empty() {
        return Err(Error::Validation("downstream evaluation needs labeled-train rows".into()));
    }
    if test_y.is_empty() {
        return Err(Error::Validation("downstream evaluation needs labeled test rows".into()));
    }
    // Column order must not depend on ranking order, so equal subsets score equally.
    let mut cols = subset.to_vec();
    cols.sort_unstable();
    let train_x = ds.features_of(PartitionTag::LabeledTrain).select_cols(&cols);
    let test_x = ds.features_of(PartitionTag::Test).select_cols(&cols);
    let net = train_classifier(&train_x, &train_y, n_classes, config, stream)?;
    let pred = argmax_rows(&net.forward(&test_x)?);
    Ok(Metrics {
        accuracy: accuracy(&pred, &test_y),
        macro_f1: macro_f1(&pred, &test_y, n_classes),
    })
}

/// Per-feature Fisher score over the labeled-train rows:
/// `Σ_c n_c (μ_cj − μ_j)² / Σ_c n_c σ²_cj`. Zero within-class variance gives
/// `+∞` when the class means differ and 0 for a constant column.
pub fn fisher_score(x: &Matrix, labels: &[usize], n_classes: usize) -> Result<Vec<f64>> {
    if labels.len() != x.rows() {
        return Err(Error::dimension("fisher labels", x.rows(), labels.len()));
    }
    let mut counts = vec![0usize; n_classes];
    for &y in labels {
        if y >= n_classes {
            return Err(Error::Validation(format!("label {y} out of range for {n_classes} classes")));
        }
        counts[y] += 1;
    }
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::Validation("Fisher score needs at least two classes".into()));
    }
    let n = x.rows() as f64;
    Ok((0..x.cols())
        .map(|j| {
            let col = x.column(j);
            let mean = col.iter().sum::<f64>() / n;
            let mut sums = vec![0.0; n_classes];
            for (v, &y) in col.iter().zip(labels) {
                sums[y] += v;
            }
            let means: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect();
            let within: f64 = col.iter().zip(labels).map(|(v, &y)| (v - means[y]).powi(2)).sum();
            let between: f64 = means
                .iter()
                .zip(&counts)
                .map(|(m, &c)| c as f64 * (m - mean).powi(2))
                .sum();
            if within > 0.0 {
                between / within
            } else if between > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .collect())
}

/// Feature order by Fisher score, `+∞` first, ties by ascending index.
pub fn fisher_ranking(ds: &Dataset) -> Result<Vec<usize>> {
    let (y, n_classes) = ds.class_labels_of(PartitionTag::LabeledTrain)?;
    let scores = fisher_score(&ds.features_of(PartitionTag::LabeledTrain), &y, n_classes)?;
    Ok(rank_order(&scores))
}

/// Result of pretraining plus selection.
#[derive(Debug, Clone)]
pub struct SelectionOutcome {
    pub ranking: FeatureRanking,
    pub selector_log: SelectorLog,
    pub pretext_log: Vec<EpochLoss>,
    pub selector: AttentionSelector,
}

/// Pretrain the autoencoder the mode needs on the unlabeled-train rows.
pub fn pretrain_for(ds: &Dataset, config: &PipelineConfig, seed: u64) -> Result<Option<AutoencoderModel>> {
    if !config.mode.uses_autoencoder() {
        return Ok(None);
    }
    let model = AutoencoderModel::new(ds.n_features(), &config.pretext, config.mode.mask_task(), seed)?;
    let x = ds.features_of(PartitionTag::UnlabeledTrain);
    Ok(Some(pretrain(model, &x, &config.pretext, SeedStream::new(seed).child("pretext"))?))
}

/// Train the selector on `rows` (labeled-train rows when `None`), with an
/// already pretrained autoencoder when the mode needs one.
pub fn select_with(
    ds: &Dataset,
    config: &PipelineConfig,
    autoencoder: Option<AutoencoderModel>,
    rows: Option<&[usize]>,
    seed: u64,
) -> Result<SelectionOutcome> {
    let rows = match rows {
        Some(r) => r.to_vec(),
        None => ds.rows_of(PartitionTag::LabeledTrain),
    };
    if rows.is_empty() {
        return Err(Error::Validation("feature selection needs labeled rows".into()));
    }
    let labels = ds
        .labels
        .as_ref()
        .ok_or_else(|| Error::Validation("feature selection needs labels".into()))?
        .subset(&rows);
    let pretext_log = autoencoder.as_ref().map(|m| m.log.clone()).unwrap_or_default();
    let sel = AttentionSelector::new(
        ds.n_features(),
        Task::of(&labels),
        &config.selector,
        config.mode,
        autoencoder,
        seed,
    )?;
    let run = train_selector(
        sel,
        &ds.features.select_rows(&rows),
        &labels,
        &ds.feature_names,
        &config.selector,
        SeedStream::new(seed).child("selector"),
    )?;
    Ok(SelectionOutcome {
        ranking: run.ranking,
        selector_log: run.log,
        pretext_log,
        selector: run.selector,
    })
}

/// Pretrain (when needed) and select on the labeled-train rows.
pub fn run_selection(ds: &Dataset, config: &PipelineConfig, seed: u64) -> Result<SelectionOutcome> {
    config.validate()?;
    let ae = pretrain_for(ds, config, seed)?;
    select_with(ds, config, ae, None, seed)
}

/// One run's outcome, serialized as one line of the record stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub config_digest: String,
    pub experiment: String,
    pub mode: SelectorMode,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeat: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<usize>,
    pub noise: String,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    pub accuracy: f64,
    pub macro_f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision_at_k: Option<f64>,
    pub selected: Vec<usize>,
}

impl RunRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("records serialize")
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        serde_json::from_str(line).map_err(|e| Error::parse("record stream", e.line(), e.to_string()))
    }
}

/// Parse a record stream, ignoring a trailing partial line.
pub fn parse_records(text: &str) -> Result<Vec<RunRecord>> {
    let complete = match text.rfind('\n') {
        Some(i) => &text[..i],
        None => "",
    };
    complete
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| RunRecord::from_json_line(l).map_err(|e| Error::parse("record stream", i + 1, e.to_string())))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub median: f64,
    pub std: f64,
}

impl Summary {
    /// Median and sample standard deviation (0 for fewer than two values).
    pub fn of(values: &[f64]) -> Self {
        Self {
            median: median(values),
            std: sample_std(values),
        }
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

/// Records grouped by everything except seed, repeat and fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub mode: SelectorMode,
    pub noise: String,
    pub k: usize,
    pub budget: Option<usize>,
    pub runs: usize,
    pub accuracy: Summary,
    pub macro_f1: Summary,
    pub precision_at_k: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub run_id: String,
    pub config_digest: String,
    pub experiment: String,
    pub seeds: Vec<u64>,
    pub records: Vec<RunRecord>,
    pub aggregates: Vec<AggregateRow>,
    /// Not serialized, so result files stay byte-reproducible.
    #[serde(skip)]
    pub wall_clock: Duration,
}

impl ExperimentResult {
    pub fn from_records(ctx: &RunContext, experiment: &str, seeds: &[u64], records: Vec<RunRecord>, wall_clock: Duration) -> Self {
        let aggregates = aggregate(&records);
        Self {
            run_id: ctx.run_id.clone(),
            config_digest: ctx.config_digest.clone(),
            experiment: experiment.to_string(),
            seeds: seeds.to_vec(),
            records,
            aggregates,
            wall_clock,
        }
    }

    /// Tab-separated aggregate table.
    pub fn to_table(&self) -> String {
        let mut out = format!("# run_id={}\n# config_digest={}\n", self.run_id, self.config_digest);
        out.push_str("mode\tnoise\tk\tbudget\truns\taccuracy_median\taccuracy_std\tmacro_f1_median\tmacro_f1_std\tprecision_median\n");
        for row in &self.aggregates {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\n",
                row.mode,
                row.noise,
                row.k,
                row.budget.map_or("-".to_string(), |b| b.to_string()),
                row.runs,
                row.accuracy.median,
                row.accuracy.std,
                row.macro_f1.median,
                row.macro_f1.std,
                row.precision_at_k.map_or("-".to_string(), |p| format!("{:.6}", p.median)),
            ));
        }
        out
    }
}

pub fn aggregate(records: &[RunRecord]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(String, String, usize, Option<usize>), Vec<&RunRecord>> = BTreeMap::new();
    let mut first_seen = Vec::new();
    for r in records {
        let key = (r.mode.to_string(), r.noise.clone(), r.k, r.budget);
        if !groups.contains_key(&key) {
            first_seen.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    first_seen
        .into_iter()
        .map(|key| {
            let rs = &groups[&key];
            let pick = |f: fn(&RunRecord) -> f64| rs.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let precision: Vec<f64> = rs.iter().filter_map(|r| r.precision_at_k).collect();
            AggregateRow {
                mode: rs[0].mode,
                noise: key.1.clone(),
                k: key.2,
                budget: key.3,
                runs: rs.len(),
                accuracy: Summary::of(&pick(|r| r.accuracy)),
                macro_f1: Summary::of(&pick(|r| r.macro_f1)),
                precision_at_k: (precision.len() == rs.len()).then(|| Summary::of(&precision)),
            }
        })
        .collect()
}

/// Identity shared by every record of one invocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunContext {
    pub run_id: String,
    pub config_digest: String,
    /// Independent cells evaluated concurrently; results are still emitted
    /// in cell order.
    pub jobs: usize,
}

impl RunContext {
    pub fn new(run_id: impl Into<String>, config_digest: impl Into<String>) -> Self {
        Self {
            run_id: run_id.into(),
            config_digest: config_digest.into(),
            jobs: 1,
        }
    }

    fn record(&self, experiment: &str, mode: SelectorMode, seed: u64) -> RunRecord {
        RunRecord {
            run_id: self.run_id.clone(),
            config_digest: self.config_digest.clone(),
            experiment: experiment.to_string(),
            mode,
            seed,
            repeat: None,
            fold: None,
            noise: "none".to_string(),
            k: 0,
            budget: None,
            accuracy: f64::NAN,
            macro_f1: f64::NAN,
            precision_at_k: None,
            selected: Vec::new(),
        }
    }
}

/// A named combination of corruptions applied in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSetting {
    pub name: String,
    pub specs: Vec<NoiseSpec>,
}

impl NoiseSetting {
    pub fn clean() -> Self {
        Self {
            name: "none".into(),
            specs: Vec::new(),
        }
    }

    /// Corrupt every row of `ds`. Each spec's seed is mixed with `seed` so
    /// repeated runs see independent corruption.
    pub fn apply(&self, ds: &Dataset, seed: u64) -> Result<Dataset> {
        let stream = SeedStream::new(seed).child("noise");
        let mut x = ds.features.clone();
        for (i, spec) in self.specs.iter().enumerate() {
            let mut s = spec.clone();
            s.seed ^= stream.index(i as u64).value();
            x = apply_noise(&x, &s)?;
        }
        ds.with_features(x)
    }
}

/// Record sink; the CLI writes and flushes one line per call.
pub type Sink<'a> = &'a mut dyn FnMut(&RunRecord) -> Result<()>;

/// Evaluate `cells` with up to `jobs` running at once, handing results to
/// `emit` in cell order.
fn run_cells<C: Sync, T: Send>(
    cells: &[C],
    jobs: usize,
    work: impl Fn(&C) -> Result<T> + Sync,
    mut emit: impl FnMut(T) -> Result<()>,
) -> Result<()> {
    for chunk in cells.chunks(jobs.max(1)) {
        let results: Vec<Result<T>> = if chunk.len() == 1 {
            vec![work(&chunk[0])]
        } else {
            chunk.par_iter().map(&work).collect()
        };
        for r in results {
            emit(r?)?;
        }
    }
    Ok(())
}

/// Data preparation per seed: returns a partitioned, scaled dataset.
pub type Prepare<'a> = &'a (dyn Fn(u64) -> Result<Dataset> + Sync);

fn truth_precision(ds: &Dataset, selected: &[usize]) -> Option<f64> {
    ds.informative.as_ref().map(|t| precision_at_k(selected, t))
}

/// Ranking-then-evaluate for each `k`, producing one record per `k`.
#[allow(clippy::too_many_arguments)]
fn evaluate_ks(
    experiment: &str,
    ds: &Dataset,
    ranking: &FeatureRanking,
    ks: &[usize],
    config: &PipelineConfig,
    seed: u64,
    template: &RunRecord,
) -> Result<Vec<RunRecord>> {
    let d = ds.n_features();
    ks.iter()
        .map(|&k| {
            if !(1..=d).contains(&k) {
                return Err(Error::Config(format!("k must be in 1..={d}, got {k}")));
            }
            let selected = ranking.order[..k].to_vec();
            let m = downstream_eval(ds, &selected, &config.classifier, SeedStream::new(seed).child("downstream"))?;
            Ok(RunRecord {
                experiment: experiment.to_string(),
                k,
                accuracy: m.accuracy,
                macro_f1: m.macro_f1,
                precision_at_k: truth_precision(ds, &selected),
                selected,
                ..template.clone()
            })
        })
        .collect()
}

/// For each noise setting, seed and mode: corrupt the data, select, and
/// evaluate every `k`. An empty setting list runs on clean data only.
#[allow(clippy::too_many_arguments)]
pub fn noise_robustness_sweep(
    ctx: &RunContext,
    prepare: Prepare<'_>,
    settings: &[NoiseSetting],
    ks: &[usize],
    modes: &[SelectorMode],
    seeds: &[u64],
    config: &PipelineConfig,
    sink: Sink<'_>,
) -> Result<ExperimentResult> {
    config.validate()?;
    let start = std::time::Instant::now();
    let clean = [NoiseSetting::clean()];
    let settings = if settings.is_empty() { &clean[..] } else { settings };
    let cells: Vec<(&NoiseSetting, u64, SelectorMode)> = settings
        .iter()
        .flat_map(|s| seeds.iter().flat_map(move |&seed| modes.iter().map(move |&m| (s, seed, m))))
        .collect();
    let mut records = Vec::new();
    run_cells(
        &cells,
        ctx.jobs,
        |&(setting, seed, mode)| {
            let ds = setting.apply(&prepare(seed)?, seed)?;
            let cfg = PipelineConfig { mode, ..config.clone() };
            let outcome = run_selection(&ds, &cfg, seed)?;
            let template = RunRecord {
                noise: setting.name.clone(),
                ..ctx.record("noise", mode, seed)
            };
            evaluate_ks("noise", &ds, &outcome.ranking, ks, &cfg, seed, &template)
        },
        |rs| {
            for r in rs {
                sink(&r)?;
                records.push(r);
            }
            Ok(())
        },
    )?;
    Ok(ExperimentResult::from_records(ctx, "noise", seeds, records, start.elapsed()))
}

/// A stratified, seeded subset of `rows` of size `count`.
pub fn stratified_subset(rows: &[usize], labels: &Labels, count: usize, stream: SeedStream) -> Result<Vec<usize>> {
    if count > rows.len() {
        return Err(Error::Validation(format!(
            "budget {count} exceeds the {} available labeled rows",
            rows.len()
        )));
    }
    let mut order = rows.to_vec();
    order.shuffle(&mut stream.rng());
    let mut chosen: Vec<usize> = match labels.classes() {
        Some((values, n_classes)) => {
            let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
            for &r in &order {
                by_class[values[r]].push(r);
            }
            let sizes: Vec<usize> = by_class.iter().map(Vec::len).collect();
            let alloc = proportional_allocation(&sizes, count);
            by_class.iter().zip(&alloc).flat_map(|(rs, &k)| rs[..k].iter().copied()).collect()
        }
        None => order[..count].to_vec(),
    };
    chosen.sort_unstable();
    Ok(chosen)
}

/// For each budget, seed and mode: select using `budget` labeled-train rows
/// (the unlabeled pool is unchanged), then evaluate the top-`k` subset with
/// the downstream classifier trained on the full labeled-train partition.
#[allow(clippy::too_many_arguments)]
pub fn label_budget_sweep(
    ctx: &RunContext,
    prepare: Prepare<'_>,
    budgets: &[usize],
    setting: &NoiseSetting,
    k: usize,
    modes: &[SelectorMode],
    seeds: &[u64],
    config: &PipelineConfig,
    sink: Sink<'_>,
) -> Result<ExperimentResult> {
    config.validate()?;
    let start = std::time::Instant::now();
    let cells: Vec<(usize, u64, SelectorMode)> = budgets
        .iter()
        .flat_map(|&b| seeds.iter().flat_map(move |&seed| modes.iter().map(move |&m| (b, seed, m))))
        .collect();
    let mut records = Vec::new();
    run_cells(
        &cells,
        ctx.jobs,
        |&(budget, seed, mode)| {
            let ds = setting.apply(&prepare(seed)?, seed)?;
            let labels = ds
                .labels
                .as_ref()
                .ok_or_else(|| Error::Validation("label budget sweep needs labels".into()))?;
            let rows = stratified_subset(
                &ds.rows_of(PartitionTag::LabeledTrain),
                labels,
                budget,
                SeedStream::new(seed).child("budget"),
            )?;
            let cfg = PipelineConfig { mode, ..config.clone() };
            let ae = pretrain_for(&ds, &cfg, seed)?;
            let outcome = select_with(&ds, &cfg, ae, Some(&rows), seed)?;
            let template = RunRecord {
                noise: setting.name.clone(),
                budget: Some(budget),
                ..ctx.record("budget", mode, seed)
            };
            evaluate_ks("budget", &ds, &outcome.ranking, &[k], &cfg, seed, &template)
        },
        |rs| {
            for r in rs {
                sink(&r)?;
                records.push(r);
            }
            Ok(())
        },
    )?;
    Ok(ExperimentResult::from_records(ctx, "budget", seeds, records, start.elapsed()))
}

/// Seeded stratified folds over `rows`; every row lands in exactly one fold.
pub fn stratified_folds(rows: &[usize], labels: &Labels, folds: usize, stream: SeedStream) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::Config("cross-validation needs at least 2 folds".into()));
    }
    if rows.len() < folds {
        return Err(Error::Validation(format!(
            "{} labeled rows cannot fill {folds} folds",
            rows.len()
        )));
    }
    let mut order = rows.to_vec();
    order.shuffle(&mut stream.rng());
    let groups: Vec<Vec<usize>> = match labels.classes() {
        Some((values, n_classes)) => {
            let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
            for &r in &order {
                by_class[values[r]].push(r);
            }
            by_class
        }
        None => vec![order],
    };
    let mut out = vec![Vec::new(); folds];
    let mut next = 0;
    for group in groups {
        for r in group {
            out[next % folds].push(r);
            next += 1;
        }
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

/// `repeats` × `folds` runs over the labeled-train and test rows pooled
/// together. Each run trains on all folds but one and tests on the held-out
/// fold; the unlabeled-train rows stay the pretraining pool. With
/// `shared_pretraining` the autoencoder is trained once per seed and reused.
#[allow(clippy::too_many_arguments)]
pub fn cross_validate(
    ctx: &RunContext,
    prepare: Prepare<'_>,
    folds: usize,
    repeats: usize,
    k: usize,
    seeds: &[u64],
    shared_pretraining: bool,
    config: &PipelineConfig,
    sink: Sink<'_>,
) -> Result<ExperimentResult> {
    config.validate()?;
    if repeats == 0 {
        return Err(Error::Config("cross-validation needs at least one repeat".into()));
    }
    let start = std::time::Instant::now();
    let cells: Vec<(u64, usize, usize)> = seeds
        .iter()
        .flat_map(|&s| (0..repeats).flat_map(move |r| (0..folds).map(move |f| (s, r, f))))
        .collect();
    let mut shared: BTreeMap<u64, Option<AutoencoderModel>> = BTreeMap::new();
    if shared_pretraining {
        for &s in seeds {
            shared.insert(s, pretrain_for(&prepare(s)?, config, s)?);
        }
    }
    let mut records = Vec::new();
    run_cells(
        &cells,
        ctx.jobs,
        |&(seed, repeat, fold)| {
            let base = prepare(seed)?;
            let labels = base
                .labels
                .as_ref()
                .ok_or_else(|| Error::Validation("cross-validation needs labels".into()))?;
            let mut pool = base.rows_of(PartitionTag::LabeledTrain);
            pool.extend(base.rows_of(PartitionTag::Test));
            pool.sort_unstable();
            let parts = stratified_folds(&pool, labels, folds, SeedStream::new(seed).child("folds").index(repeat as u64))?;
            let mut ds = base.clone();
            for (i, part) in parts.iter().enumerate() {
                let tag = if i == fold { PartitionTag::Test } else { PartitionTag::LabeledTrain };
                for &r in part {
                    ds.partition[r] = tag;
                }
            }
            let run_seed = SeedStream::new(seed).child("cv").index((repeat * folds + fold) as u64).value();
            let ae = match shared.get(&seed) {
                Some(ae) => ae.clone(),
                None => pretrain_for(&ds, config, run_seed)?,
            };
            let outcome = select_with(&ds, config, ae, None, run_seed)?;
            let template = RunRecord {
                repeat: Some(repeat),
                fold: Some(fold),
                ..ctx.record("cv", config.mode, seed)
            };
            evaluate_ks("cv", &ds, &outcome.ranking, &[k], config, run_seed, &template)
        },
        |rs| {
            for r in rs {
                sink(&r)?;
                records.push(r);
            }
            Ok(())
        },
    )?;
    Ok(ExperimentResult::from_records(ctx, "cv", seeds, records, start.elapsed()))
}

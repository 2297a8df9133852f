//! Batch-attention feature selection.
//!
//! Each sample's representation `r_i` (the autoencoder reconstruction, or the
//! raw row when self-supervision is disabled) is mapped to per-feature scores
//! `τ_i = W₂·tanh(W₁·r_i + b₁) + b₂`. The scores are averaged over the batch
//! and normalized with softmax into one weight vector `a`, the batch is
//! reweighted as `G = X ⊙ a`, and an evaluator network is trained on `G`.
//! Gradients reach the attention transform and, unless frozen, the encoder
//! and reconstruction head.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{epoch_batches, Labels};
use crate::error::{Error, Result};
use crate::nn::{self, flatten_grads, softmax, Activation, Checkpoint, DenseGrads, LossOutput, Matrix, Mlp, Optimizer};
use crate::pretext::AutoencoderModel;
use crate::rng::SeedStream;

pub const CHECKPOINT_KIND: &str = "selector";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectorMode {
    /// Attention over the reconstruction of an autoencoder trained on both
    /// pretext tasks.
    Full,
    /// Attention over raw features; no autoencoder.
    NoSelfsup,
    /// Attention over the reconstruction of an autoencoder trained without
    /// the mask-location task.
    NoLocation,
}

impl SelectorMode {
    pub const ALL: [SelectorMode; 3] = [SelectorMode::Full, SelectorMode::NoSelfsup, SelectorMode::NoLocation];

    pub fn name(self) -> &'static str {
        match self {
            SelectorMode::Full => "full",
            SelectorMode::NoSelfsup => "no-selfsup",
            SelectorMode::NoLocation => "no-location",
        }
    }

    pub fn uses_autoencoder(self) -> bool {
        self != SelectorMode::NoSelfsup
    }

    /// Whether the attached autoencoder must have been trained with the
    /// mask-location task.
    pub fn mask_task(self) -> bool {
        self == SelectorMode::Full
    }
}

impl fmt::Display for SelectorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SelectorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown selector mode `{s}` (full, no-selfsup, no-location)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankingSource {
    /// One pass over the whole labeled set after training.
    FullPass,
    /// Exponential moving average of the per-batch weights seen in training.
    Ema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectorConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub attention_hidden: usize,
    pub evaluator_hidden: Vec<usize>,
    pub freeze_autoencoder: bool,
    pub ranking: RankingSource,
    pub ema_decay: f64,
    pub k: usize,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            learning_rate: 0.001,
            batch_size: 128,
            attention_hidden: 300,
            evaluator_hidden: vec![64, 32],
            freeze_autoencoder: false,
            ranking: RankingSource::FullPass,
            ema_decay: 0.99,
            k: 5,
        }
    }
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("selector learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.attention_hidden == 0 || self.k == 0 {
            return Err(Error::Config(
                "selector batch_size, attention_hidden and k must be positive".into(),
            ));
        }
        if self.evaluator_hidden.contains(&0) {
            return Err(Error::Config("evaluator hidden widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::Config("ema_decay must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// What the evaluator predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Classification { n_classes: usize },
    Regression,
}

impl Task {
    pub fn of(labels: &Labels) -> Self {
        match labels {
            Labels::Classes { n_classes, .. } => Task::Classification { n_classes: *n_classes },
            Labels::Regression(_) => Task::Regression,
        }
    }

    pub fn output_width(self) -> usize {
        match self {
            Task::Classification { n_classes } => n_classes,
            Task::Regression => 1,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::Classification { n_classes } => write!(f, "classes:{n_classes}"),
            Task::Regression => f.write_str("regression"),
        }
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "regression" {
            return Ok(Task::Regression);
        }
        s.strip_prefix("classes:")
            .and_then(|n| n.parse().ok())
            .map(|n_classes| Task::Classification { n_classes })
            .ok_or_else(|| Error::Validation(format!("invalid task `{s}`")))
    }
}

/// Supervised loss for the evaluator output.
pub fn task_loss(pred: &Matrix, labels: &Labels) -> Result<LossOutput> {
    match labels {
        Labels::Classes { values, .. } => nn::categorical_cross_entropy(pred, values),
        Labels::Regression(v) => {
            let target = Matrix::from_vec(v.len(), 1, v.clone())?;
            nn::mse(pred, &target)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionSelector {
    mode: SelectorMode,
    task: Task,
    attention: Mlp,
    evaluator: Mlp,
    autoencoder: Option<AutoencoderModel>,
    seed: u64,
}

#[derive(Debug, Clone)]
pub struct SelectorGrads {
    pub attention: Vec<DenseGrads>,
    pub evaluator: Vec<DenseGrads>,
    /// Present when the autoencoder is attached and trainable.
    pub encoder: Option<Vec<DenseGrads>>,
    pub recon_head: Option<Vec<DenseGrads>>,
}

impl SelectorGrads {
    /// Flattened in `AttentionSelector::params_mut` order.
    pub fn flatten(self) -> Vec<Vec<f64>> {
        let mut out = flatten_grads(self.attention);
        out.extend(flatten_grads(self.evaluator));
        if let (Some(enc), Some(rec)) = (self.encoder, self.recon_head) {
            out.extend(flatten_grads(enc));
            out.extend(flatten_grads(rec));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SelectionStep {
    pub loss: f64,
    pub weights: Vec<f64>,
    pub grads: SelectorGrads,
}

impl AttentionSelector {
    pub fn new(
        d: usize,
        task: Task,
        config: &SelectorConfig,
        mode: SelectorMode,
        autoencoder: Option<AutoencoderModel>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if d == 0 {
            return Err(Error::Config("the selector needs at least one feature".into()));
        }
        if task.output_width() == 0 {
            return Err(Error::Validation("classification needs at least one class".into()));
        }
        check_autoencoder(mode, autoencoder.as_ref(), d)?;
        let init = SeedStream::new(seed).child("selector-init");
        let attention = Mlp::glorot(
            &[d, config.attention_hidden, d],
            &[Activation::Tanh, Activation::Identity],
            &mut init.child("attention").rng(),
        )?;
        let mut widths = vec![d];
        widths.extend(&config.evaluator_hidden);
        widths.push(task.output_width());
        let mut activations = vec![Activation::Relu; config.evaluator_hidden.len()];
        activations.push(Activation::Identity);
        let evaluator = Mlp::glorot(&widths, &activations, &mut init.child("evaluator").rng())?;
        Ok(Self {
            mode,
            task,
            attention,
            evaluator,
            autoencoder,
            seed,
        })
    }

    pub fn mode(&self) -> SelectorMode {
        self.mode
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn n_features(&self) -> usize {
        self.attention.in_dim()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn attention(&self) -> &Mlp {
        &self.attention
    }

    pub fn attention_mut(&mut self) -> &mut Mlp {
        &mut self.attention
    }

    pub fn evaluator(&self) -> &Mlp {
        &self.evaluator
    }

    pub fn evaluator_mut(&mut self) -> &mut Mlp {
        &mut self.evaluator
    }

    pub fn autoencoder(&self) -> Option<&AutoencoderModel> {
        self.autoencoder.as_ref()
    }

    /// Attention inputs: the reconstruction `S_r(E(x))`, or `x` itself.
    pub fn representation(&self, x: &Matrix) -> Result<Matrix> {
        x.ensure_shape(x.rows(), self.n_features(), "selector input")?;
        match &self.autoencoder {
            Some(ae) => ae.reconstruct(x),
            None => Ok(x.clone()),
        }
    }

    /// Per-sample scores `τ_i`, shape `B × d`.
    pub fn attention_scores(&self, x: &Matrix) -> Result<Matrix> {
        self.attention.forward(&self.representation(x)?)
    }

    /// Feature weights `a` for `x` treated as one batch.
    pub fn weights(&self, x: &Matrix) -> Result<Vec<f64>> {
        batch_weights(&self.attention_scores(x)?)
    }

    /// Evaluator output on `x` reweighted by `weights`.
    pub fn predict(&self, x: &Matrix, weights: &[f64]) -> Result<Matrix> {
        self.evaluator.forward(&x.scale_columns(weights)?)
    }

    /// Trainable parameters: attention, evaluator, then encoder and
    /// reconstruction head when `train_autoencoder` is set and one is attached.
    pub fn params_mut(&mut self, train_autoencoder: bool) -> Vec<(String, &mut [f64])> {
        let mut p = self.attention.params_mut("attention");
        p.extend(self.evaluator.params_mut("evaluator"));
        if train_autoencoder {
            if let Some(ae) = self.autoencoder.as_mut() {
                p.extend(ae.encoder_recon_params_mut());
            }
        }
        p
    }

    pub fn to_checkpoint(&self, config_digest: &str) -> Checkpoint {
        let mut c = Checkpoint::new(CHECKPOINT_KIND, self.seed)
            .with_meta("mode", self.mode)
            .with_meta("task", self.task)
            .with_meta("d", self.n_features())
            .with_meta("config_digest", config_digest);
        for (prefix, net) in [("attention", &self.attention), ("evaluator", &self.evaluator)] {
            for (i, layer) in net.layers().iter().enumerate() {
                c.push_layer(format!("{prefix}.{i}"), layer);
            }
        }
        match &self.autoencoder {
            Some(ae) => ae.write_into(c, "ae."),
            None => c,
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.kind != CHECKPOINT_KIND {
            return Err(Error::Validation(format!(
                "expected a {CHECKPOINT_KIND} checkpoint, found `{}`",
                c.kind
            )));
        }
        let mode: SelectorMode = c.meta_value("mode")?.parse()?;
        let task: Task = c.meta_value("task")?.parse()?;
        let d: usize = c.meta_parse("d")?;
        let autoencoder = if mode.uses_autoencoder() {
            Some(AutoencoderModel::read_from(c, "ae.")?)
        } else {
            None
        };
        let sel = Self {
            mode,
            task,
            attention: Mlp::new(c.layers_with_prefix("attention"))?,
            evaluator: Mlp::new(c.layers_with_prefix("evaluator"))?,
            autoencoder,
            seed: c.seed,
        };
        if sel.attention.in_dim() != d
            || sel.attention.out_dim() != d
            || sel.evaluator.in_dim() != d
            || sel.evaluator.out_dim() != task.output_width()
        {
            return Err(Error::Validation("checkpoint layer widths are inconsistent".into()));
        }
        check_autoencoder(mode, sel.autoencoder.as_ref(), d)?;
        Ok(sel)
    }
}

fn check_autoencoder(mode: SelectorMode, ae: Option<&AutoencoderModel>, d: usize) -> Result<()> {
    match (mode.uses_autoencoder(), ae) {
        (false, None) => Ok(()),
        (false, Some(_)) => Err(Error::Config(format!("mode {mode} does not use an autoencoder"))),
        (true, None) => Err(Error::Config(format!("mode {mode} needs a pretrained autoencoder"))),
        (true, Some(ae)) => {
            if ae.n_features() != d {
                return Err(Error::dimension("autoencoder width", d, ae.n_features()));
            }
            if ae.mask_task() != mode.mask_task() {
                let how = if mode.mask_task() { "with" } else { "without" };
                return Err(Error::Config(format!(
                    "mode {mode} needs an autoencoder pretrained {how} the mask-location task"
                )));
            }
            Ok(())
        }
    }
}

/// `a = softmax(column mean of scores)`.
pub fn batch_weights(scores: &Matrix) -> Result<Vec<f64>> {
    if scores.rows() == 0 {
        return Err(Error::Validation("attention weights need a non-empty batch".into()));
    }
    Ok(softmax(&scores.column_means()))
}

/// Loss and gradients of one labeled batch.
pub fn selection_step(sel: &AttentionSelector, x: &Matrix, labels: &Labels, train_autoencoder: bool) -> Result<SelectionStep> {
    let d = sel.n_features();
    x.ensure_shape(x.rows(), d, "selector batch")?;
    if labels.len() != x.rows() {
        return Err(Error::dimension("selector labels", x.rows(), labels.len()));
    }
    if x.rows() == 0 {
        return Err(Error::Validation("selection step needs a non-empty batch".into()));
    }

    let ae_traces = match &sel.autoencoder {
        Some(ae) => {
            let enc = ae.encoder().forward_trace(x)?;
            let rec = ae.recon_head().forward_trace(enc.last().expect("non-empty MLP"))?;
            Some((enc, rec))
        }
        None => None,
    };
    let r = match &ae_traces {
        Some((_, rec)) => rec.last().expect("non-empty MLP"),
        None => x,
    };
    let att_trace = sel.attention.forward_trace(r)?;
    let weights = batch_weights(att_trace.last().expect("non-empty MLP"))?;
    let g = x.scale_columns(&weights)?;
    let ev_trace = sel.evaluator.forward_trace(&g)?;
    let loss = task_loss(ev_trace.last().expect("non-empty MLP"), labels)?;
    if !loss.value.is_finite() {
        return Err(Error::Numerical(format!("selection loss is not finite ({})", loss.value)));
    }

    let (evaluator, dg) = sel.evaluator.backward(&g, &ev_trace, &loss.grad)?;
    let mut da = vec![0.0; d];
    for (grow, xrow) in dg.iter_rows().zip(x.iter_rows()) {
        for ((acc, gv), xv) in da.iter_mut().zip(grow).zip(xrow) {
            *acc += gv * xv;
        }
    }
    let mut dmean = vec![0.0; d];
    nn::layer::softmax_backward(&weights, &da, &mut dmean);
    let b = x.rows() as f64;
    let mut dscores = Matrix::zeros(x.rows(), d);
    for row in 0..x.rows() {
        for (dst, v) in dscores.row_mut(row).iter_mut().zip(&dmean) {
            *dst = v / b;
        }
    }
    let (attention, dr) = sel.attention.backward(r, &att_trace, &dscores)?;

    let (encoder, recon_head) = match (&sel.autoencoder, &ae_traces) {
        (Some(ae), Some((enc, rec))) if train_autoencoder => {
            let z = enc.last().expect("non-empty MLP");
            let (rec_grads, dz) = ae.recon_head().backward(z, rec, &dr)?;
            let (enc_grads, _) = ae.encoder().backward(x, enc, &dz)?;
            (Some(enc_grads), Some(rec_grads))
        }
        _ => (None, None),
    };

    Ok(SelectionStep {
        loss: loss.value,
        weights,
        grads: SelectorGrads {
            attention,
            evaluator,
            encoder,
            recon_head,
        },
    })
}

/// Training diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorLog {
    /// Sample-weighted mean loss per epoch.
    pub epoch_loss: Vec<f64>,
    pub steps: usize,
    /// Largest `|Σa − 1|` over every weight vector produced.
    pub max_sum_error: f64,
    /// Smallest weight over every weight vector produced.
    pub min_weight: f64,
}

impl SelectorLog {
    fn new() -> Self {
        Self {
            epoch_loss: Vec::new(),
            steps: 0,
            max_sum_error: 0.0,
            min_weight: f64::INFINITY,
        }
    }

    fn observe(&mut self, a: &[f64]) {
        let sum: f64 = a.iter().sum();
        self.max_sum_error = self.max_sum_error.max((sum - 1.0).abs());
        self.min_weight = a.iter().copied().fold(self.min_weight, f64::min);
    }
}

#[derive(Debug, Clone)]
pub struct SelectorRun {
    pub selector: AttentionSelector,
    pub ranking: FeatureRanking,
    pub log: SelectorLog,
}

/// Train on the labeled rows `x`/`labels` with Adam, then rank features.
pub fn train_selector(
    mut sel: AttentionSelector,
    x: &Matrix,
    labels: &Labels,
    feature_names: &[String],
    config: &SelectorConfig,
    stream: SeedStream,
) -> Result<SelectorRun> {
    config.validate()?;
    if x.rows() == 0 {
        return Err(Error::Validation("selector training needs labeled rows".into()));
    }
    x.ensure_shape(x.rows(), sel.n_features(), "selector training data")?;
    if labels.len() != x.rows() {
        return Err(Error::dimension("selector labels", x.rows(), labels.len()));
    }
    if Task::of(labels) != sel.task {
        return Err(Error::Validation(format!(
            "labels describe task {} but the selector was built for {}",
            Task::of(labels),
            sel.task
        )));
    }
    let train_ae = !config.freeze_autoencoder;
    let rows: Vec<usize> = (0..x.rows()).collect();
    let mut optimizer = Optimizer::adam(config.learning_rate)?;
    let batch_stream = stream.child("selector-batches");
    let mut log = SelectorLog::new();
    let mut ema: Option<Vec<f64>> = None;

    for epoch in 0..config.epochs {
        let (mut sum, mut seen) = (0.0, 0usize);
        for (b, batch_rows) in epoch_batches(&rows, config.batch_size, batch_stream, epoch as u64)?
            .into_iter()
            .enumerate()
        {
            let bx = x.select_rows(&batch_rows);
            let by = labels.subset(&batch_rows);
            let context = || format!("selector epoch {} batch {b}", epoch + 1);
            let step = selection_step(&sel, &bx, &by, train_ae).map_err(|e| annotate(e, &context()))?;
            log.observe(&step.weights);
            ema = Some(match ema {
                None => step.weights.clone(),
                Some(prev) => prev
                    .iter()
                    .zip(&step.weights)
                    .map(|(p, w)| config.ema_decay * p + (1.0 - config.ema_decay) * w)
                    .collect(),
            });
            sum += step.loss * batch_rows.len() as f64;
            seen += batch_rows.len();
            let grads = step.grads.flatten();
            optimizer
                .step(&mut sel.params_mut(train_ae), &grads)
                .map_err(|e| annotate(e, &context()))?;
            log.steps += 1;
        }
        log.epoch_loss.push(sum / seen as f64);
        if (epoch + 1) % 100 == 0 {
            log::debug!("selector epoch {}: loss = {:.5}", epoch + 1, sum / seen as f64);
        }
    }

    let weights = match (config.ranking, ema) {
        (RankingSource::Ema, Some(w)) => w,
        _ => sel.weights(x)?,
    };
    log.observe(&weights);
    let ranking = FeatureRanking::new(weights, feature_names.to_vec(), config.k, sel.seed, sel.mode)?;
    Ok(SelectorRun {
        selector: sel,
        ranking,
        log,
    })
}

fn annotate(e: Error, context: &str) -> Error {
    match e {
        Error::Numerical(msg) => Error::Numerical(format!("{context}: {msg}")),
        other => other,
    }
}

/// Feature weights ordered by importance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    pub weights: Vec<f64>,
    /// Feature indices by descending weight, ties by ascending index.
    pub order: Vec<usize>,
    pub feature_names: Vec<String>,
    pub k: usize,
    pub seed: u64,
    pub mode: SelectorMode,
    pub config_digest: String,
}

impl FeatureRanking {
    pub fn new(weights: Vec<f64>, feature_names: Vec<String>, k: usize, seed: u64, mode: SelectorMode) -> Result<Self> {
        let d = weights.len();
        if d == 0 {
            return Err(Error::Validation("a ranking needs at least one feature".into()));
        }
        if feature_names.len() != d {
            return Err(Error::dimension("ranking feature names", d, feature_names.len()));
        }
        if !(1..=d).contains(&k) {
            return Err(Error::Config(format!("k must be in 1..={d}, got {k}")));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numerical("feature weights contain non-finite values".into()));
        }
        let order = rank_order(&weights);
        Ok(Self {
            weights,
            order,
            feature_names,
            k,
            seed,
            mode,
            config_digest: String::new(),
        })
    }

    pub fn with_digest(mut self, digest: impl Into<String>) -> Self {
        self.config_digest = digest.into();
        self
    }

    pub fn top_k(&self) -> &[usize] {
        &self.order[..self.k]
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# seed={}\n# mode={}\n# k={}\n# config_digest={}\n",
            self.seed, self.mode, self.k, self.config_digest
        );
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(["rank", "feature_index", "feature_name", "weight"]).expect("in-memory write");
        for (rank, &j) in self.order.iter().enumerate() {
            w.write_record([
                (rank + 1).to_string(),
                j.to_string(),
                self.feature_names[j].clone(),
                self.weights[j].to_string(),
            ])
            .expect("in-memory write");
        }
        out.push_str(&String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8 input"));
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let src = "ranking";
        let mut seed = None;
        let mut mode = None;
        let mut k = None;
        let mut digest = None;
        let mut body_start = 0;
        for (i, line) in text.lines().enumerate() {
            let Some(meta) = line.strip_prefix("# ") else {
                body_start = i;
                break;
            };
            let (key, value) = meta
                .split_once('=')
                .ok_or_else(|| Error::parse(src, i + 1, "expected `# key=value`"))?;
            let bad = |what: &str| Error::parse(src, i + 1, format!("invalid {what} `{value}`"));
            match key {
                "seed" => seed = Some(value.parse::<u64>().map_err(|_| bad("seed"))?),
                "mode" => mode = Some(value.parse::<SelectorMode>().map_err(|_| bad("mode"))?),
                "k" => k = Some(value.parse::<usize>().map_err(|_| bad("k"))?),
                "config_digest" => digest = Some(value.to_string()),
                other => return Err(Error::parse(src, i + 1, format!("unknown header field `{other}`"))),
            }
        }
        let missing = |f: &str| Error::parse(src, 0, format!("missing header field `{f}`"));
        let (seed, mode, k, digest) = (
            seed.ok_or_else(|| missing("seed"))?,
            mode.ok_or_else(|| missing("mode"))?,
            k.ok_or_else(|| missing("k"))?,
            digest.ok_or_else(|| missing("config_digest"))?,
        );

        let body: String = text.lines().skip(body_start).map(|l| format!("{l}\n")).collect();
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
        let mut entries = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let line = body_start + i + 2;
            let rec = rec.map_err(|e| Error::parse(src, line, e.to_string()))?;
            if rec.len() != 4 {
                return Err(Error::parse(src, line, format!("expected 4 fields, found {}", rec.len())));
            }
            let index: usize = rec[1].parse().map_err(|_| Error::parse(src, line, "invalid feature_index"))?;
            let weight: f64 = rec[3].parse().map_err(|_| Error::parse(src, line, "invalid weight"))?;
            entries.push((index, rec[2].to_string(), weight));
        }
        let d = entries.len();
        let mut weights = vec![f64::NAN; d];
        let mut names = vec![String::new(); d];
        for (index, name, weight) in entries {
            if index >= d || !weights[index].is_nan() {
                return Err(Error::parse(src, 0, format!("feature index {index} is out of range or repeated")));
            }
            weights[index] = weight;
            names[index] = name;
        }
        Ok(Self::new(weights, names, k, seed, mode)?.with_digest(digest))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// Indices by descending weight; equal weights keep ascending index order.
pub fn rank_order(weights: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    order
}

pub fn select_top_k(ranking: &FeatureRanking, k: usize) -> Result<Vec<usize>> {
    let d = ranking.order.len();
    if !(1..=d).contains(&k) {
        return Err(Error::Config(format!("k must be in 1..={d}, got {k}")));
    }
    Ok(ranking.order[..k].to_vec())
}

/// Fraction of `selected` that lies in `truth`.
pub fn precision_at_k(selected: &[usize], truth: &[usize]) -> f64 {
    if selected.is_empty() {
        return 0.0;
    }
    selected.iter().filter(|j| truth.contains(j)).count() as f64 / selected.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pretext::PretextConfig;

    fn small_config() -> SelectorConfig {
        SelectorConfig {
            attention_hidden: 5,
            evaluator_hidden: vec![4, 3],
            k: 2,
            ..Default::default()
        }
    }

    fn names(d: usize) -> Vec<String> {
        (0..d).map(|j| format!("f{j}")).collect()
    }

    #[test]
    fn hand_softmax_weights() {
        let a = batch_weights(&Matrix::from_rows(&[[1.0, 0.0]]).unwrap()).unwrap();
        assert!((a[0] - 0.7310585786300049).abs() < 1e-12);
        assert!((a[1] - 0.2689414213699951).abs() < 1e-12);
        let uniform = batch_weights(&Matrix::filled(3, 4, 0.7)).unwrap();
        assert!(uniform.iter().all(|w| (w - 0.25).abs() < 1e-15));
        assert!(batch_weights(&Matrix::zeros(0, 3)).is_err());
    }

    #[test]
    fn constant_attention_map() {
        let task = Task::Classification { n_classes: 2 };
        let mut sel = AttentionSelector::new(4, task, &small_config(), SelectorMode::NoSelfsup, None, 1).unwrap();
        let last = &mut sel.attention_mut().layers_mut()[1];
        last.weights_mut().as_mut_slice().fill(0.0);
        last.bias_mut().fill(1.5);
        let x = Matrix::from_rows(&[[0.1, 0.2, 0.3, 0.4], [0.9, 0.8, 0.7, 0.6]]).unwrap();
        let s = sel.attention_scores(&x).unwrap();
        assert_eq!(s.shape(), (2, 4));
        assert!(s.as_slice().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn mode_contracts() {
        let task = Task::Classification { n_classes: 2 };
        let c = small_config();
        let pc = PretextConfig {
            hidden: Some(4),
            z_dim: Some(3),
            ..Default::default()
        };
        let with_mask = AutoencoderModel::new(6, &pc, true, 0).unwrap();
        let without = AutoencoderModel::new(6, &pc, false, 0).unwrap();
        assert!(AttentionSelector::new(6, task, &c, SelectorMode::Full, None, 0).is_err());
        assert!(AttentionSelector::new(6, task, &c, SelectorMode::Full, Some(without.clone()), 0).is_err());
        assert!(AttentionSelector::new(6, task, &c, SelectorMode::NoLocation, Some(with_mask.clone()), 0).is_err());
        assert!(AttentionSelector::new(6, task, &c, SelectorMode::NoSelfsup, Some(with_mask.clone()), 0).is_err());
        assert!(AttentionSelector::new(7, task, &c, SelectorMode::Full, Some(with_mask.clone()), 0).is_err());
        assert!(AttentionSelector::new(6, task, &c, SelectorMode::Full, Some(with_mask), 0).is_ok());
        assert!(AttentionSelector::new(6, task, &c, SelectorMode::NoLocation, Some(without), 0).is_ok());
    }

    #[test]
    fn tie_break_by_index() {
        let r = FeatureRanking::new(vec![0.25; 4], names(4), 2, 0, SelectorMode::Full).unwrap();
        assert_eq!(r.order, vec![0, 1, 2, 3]);
        assert_eq!(select_top_k(&r, 2).unwrap(), vec![0, 1]);
        assert_eq!(select_top_k(&r, 4).unwrap().len(), 4);
        assert!(select_top_k(&r, 0).is_err());
        assert!(select_top_k(&r, 5).is_err());
        assert_eq!(rank_order(&[0.1, 0.5, 0.1, 0.3]), vec![1, 3, 0, 2]);
    }

    #[test]
    fn ranking_text_round_trip() {
        let mut n = names(3);
        n[1] = "a,b \"quoted\"".into();
        let r = FeatureRanking::new(vec![0.2, 0.5, 0.3], n, 2, 9, SelectorMode::NoLocation)
            .unwrap()
            .with_digest("abc123");
        let text = r.to_text();
        assert!(text.starts_with("# seed=9\n# mode=no-location\n# k=2\n# config_digest=abc123\nrank,feature_index,feature_name,weight\n1,1,"));
        assert_eq!(FeatureRanking::parse(&text).unwrap(), r);
        assert!(FeatureRanking::parse("# seed=1\n").is_err());
    }

    #[test]
    fn selection_reduces_to_plain_classifier() {
        // Zero attention output gives a = 1/d; the loss must equal the
        // evaluator's own loss on X/d.
        let task = Task::Classification { n_classes: 2 };
        let mut sel = AttentionSelector::new(3, task, &small_config(), SelectorMode::NoSelfsup, None, 4).unwrap();
        let last = &mut sel.attention_mut().layers_mut()[1];
        last.weights_mut().as_mut_slice().fill(0.0);
        last.bias_mut().fill(0.0);
        let x = Matrix::from_rows(&[[0.3, 0.6, 0.9], [0.1, 0.4, 0.2]]).unwrap();
        let labels = Labels::Classes {
            values: vec![1, 0],
            n_classes: 2,
        };
        let step = selection_step(&sel, &x, &labels, true).unwrap();
        let scaled = x.map(|v| v / 3.0);
        let direct = task_loss(&sel.evaluator().forward(&scaled).unwrap(), &labels).unwrap();
        assert!((step.loss - direct.value).abs() < 1e-15);
    }

    #[test]
    fn checkpoint_round_trip() {
        let pc = PretextConfig {
            hidden: Some(4),
            z_dim: Some(3),
            ..Default::default()
        };
        let ae = AutoencoderModel::new(5, &pc, true, 2).unwrap();
        let sel = AttentionSelector::new(5, Task::Regression, &small_config(), SelectorMode::Full, Some(ae), 3).unwrap();
        let text = sel.to_checkpoint("d1").to_text();
        let back = AttentionSelector::from_checkpoint(&Checkpoint::parse(&text).unwrap()).unwrap();
        assert_eq!(back.attention(), sel.attention());
        assert_eq!(back.evaluator(), sel.evaluator());
        assert_eq!(back.autoencoder().unwrap().encoder(), sel.autoencoder().unwrap().encoder());
        assert_eq!(back.to_checkpoint("d1").to_text(), text);
    }

    #[test]
    fn training_tracks_weight_normalization() {
        let task = Task::Classification { n_classes: 2 };
        let config = SelectorConfig {
            epochs: 5,
            batch_size: 4,
            ..small_config()
        };
        let sel = AttentionSelector::new(3, task, &config, SelectorMode::NoSelfsup, None, 0).unwrap();
        let x = Matrix::from_rows(&[[0.1, 0.5, 0.2], [0.9, 0.4, 0.3], [0.2, 0.6, 0.8], [0.8, 0.1, 0.5], [0.3, 0.3, 0.3]]).unwrap();
        let labels = Labels::Classes {
            values: vec![0, 1, 0, 1, 0],
            n_classes: 2,
        };
        let run = train_selector(sel, &x, &labels, &names(3), &config, SeedStream::new(0)).unwrap();
        assert_eq!(run.log.steps, 10);
        assert_eq!(run.log.epoch_loss.len(), 5);
        assert!(run.log.max_sum_error < 1e-9);
        assert!(run.log.min_weight > 0.0);
        assert_eq!(run.ranking.top_k().len(), 2);
    }
}

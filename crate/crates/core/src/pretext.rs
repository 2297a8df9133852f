//! Multi-task self-supervised pretraining.
//!
//! A shared encoder `E` feeds two decoders: `S_m` estimates which cells were
//! masked, `S_r` reconstructs the uncorrupted row. The objective is
//! `l_m + α·l_r`, with `l_m` the per-feature mean binary cross-entropy against
//! the mask and `l_r` the per-feature mean squared error against the original
//! values, both averaged over the batch.

use serde::{Deserialize, Serialize};

use crate::data::epoch_batches;
use crate::error::{Error, Result};
use crate::masking::{mask_batch, MaskedBatch};
use crate::nn::{self, flatten_grads, Activation, Checkpoint, DenseGrads, Matrix, Mlp, Optimizer};
use crate::rng::SeedStream;

pub const CHECKPOINT_KIND: &str = "autoencoder";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretextConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub p_m: f64,
    pub alpha: f64,
    /// Encoder/decoder hidden width; derived from `d` when unset.
    pub hidden: Option<usize>,
    /// Representation width; derived from `d` when unset.
    pub z_dim: Option<usize>,
}

impl Default for PretextConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            learning_rate: 0.001,
            batch_size: 128,
            p_m: 0.2,
            alpha: 2.0,
            hidden: None,
            z_dim: None,
        }
    }
}

impl PretextConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_m) {
            return Err(Error::Config(format!("p_m must be in [0, 1], got {}", self.p_m)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("pretext learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("pretext batch_size must be positive".into()));
        }
        Ok(())
    }

    /// `(hidden, z_dim)` for `d` input features.
    pub fn widths(&self, d: usize) -> (usize, usize) {
        let hidden = self.hidden.unwrap_or_else(|| 16.max((d as f64 / 2.0).round() as usize));
        let z = self
            .z_dim
            .unwrap_or_else(|| 8.max((d as f64 / 4.0).round() as usize).min(d.saturating_sub(1)));
        (hidden, z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mask: f64,
    pub recon: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderModel {
    encoder: Mlp,
    mask_head: Mlp,
    recon_head: Mlp,
    alpha: f64,
    p_m: f64,
    /// False for the reconstruction-only variant: `l_m` is reported but not trained.
    mask_task: bool,
    seed: u64,
    pub log: Vec<EpochLoss>,
}

#[derive(Debug, Clone)]
pub struct PretextGrads {
    pub encoder: Vec<DenseGrads>,
    pub mask_head: Vec<DenseGrads>,
    pub recon_head: Vec<DenseGrads>,
}

impl PretextGrads {
    /// Flattened in `AutoencoderModel::params_mut` order.
    pub fn flatten(self) -> Vec<Vec<f64>> {
        let mut out = flatten_grads(self.encoder);
        out.extend(flatten_grads(self.mask_head));
        out.extend(flatten_grads(self.recon_head));
        out
    }
}

#[derive(Debug, Clone)]
pub struct PretextLoss {
    pub total: f64,
    pub mask: f64,
    pub recon: f64,
    pub grads: PretextGrads,
}

impl AutoencoderModel {
    pub fn new(d: usize, config: &PretextConfig, mask_task: bool, seed: u64) -> Result<Self> {
        config.validate()?;
        let (hidden, z_dim) = config.widths(d);
        if d < 2 {
            return Err(Error::Config("the autoencoder needs at least 2 features".into()));
        }
        if z_dim == 0 || z_dim >= d {
            return Err(Error::Config(format!(
                "representation width must satisfy 0 < z_dim < d, got z_dim = {z_dim}, d = {d}"
            )));
        }
        if hidden == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        let root = SeedStream::new(seed).child("autoencoder-init");
        let sig = [Activation::Sigmoid, Activation::Sigmoid];
        let encoder = Mlp::glorot(&[d, hidden, z_dim], &sig, &mut root.child("encoder").rng())?;
        let mask_head = Mlp::glorot(&[z_dim, hidden, d], &sig, &mut root.child("mask_head").rng())?;
        let recon_head = Mlp::glorot(&[z_dim, hidden, d], &sig, &mut root.child("recon_head").rng())?;
        Ok(Self {
            encoder,
            mask_head,
            recon_head,
            alpha: config.alpha,
            p_m: config.p_m,
            mask_task,
            seed,
            log: Vec::new(),
        })
    }

    pub fn n_features(&self) -> usize {
        self.encoder.in_dim()
    }

    pub fn z_dim(&self) -> usize {
        self.encoder.out_dim()
    }

    pub fn hidden(&self) -> usize {
        self.encoder.layers()[0].out_dim()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn p_m(&self) -> f64 {
        self.p_m
    }

    pub fn mask_task(&self) -> bool {
        self.mask_task
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn mask_head(&self) -> &Mlp {
        &self.mask_head
    }

    pub fn recon_head(&self) -> &Mlp {
        &self.recon_head
    }

    /// Encoder and reconstruction-head parameters, the part fine-tuned
    /// during feature selection.
    pub(crate) fn encoder_recon_params_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut p = self.encoder.params_mut("encoder");
        p.extend(self.recon_head.params_mut("recon_head"));
        p
    }

    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        self.encoder.forward(x)
    }

    /// `S_r ∘ E` applied row-wise.
    pub fn reconstruct(&self, x: &Matrix) -> Result<Matrix> {
        self.recon_head.forward(&self.encoder.forward(x)?)
    }

    /// `S_m ∘ E`: per-cell probability that the cell was replaced.
    pub fn mask_probabilities(&self, x: &Matrix) -> Result<Matrix> {
        self.mask_head.forward(&self.encoder.forward(x)?)
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut p = self.encoder.params_mut("encoder");
        p.extend(self.mask_head.params_mut("mask_head"));
        p.extend(self.recon_head.params_mut("recon_head"));
        p
    }

    pub fn to_checkpoint(&self, config_digest: &str) -> Checkpoint {
        let c = Checkpoint::new(CHECKPOINT_KIND, self.seed)
            .with_meta("epochs_trained", self.log.len())
            .with_meta("config_digest", config_digest);
        self.write_into(c, "")
    }

    /// Append the model's metadata (keys prefixed with `meta_prefix`) and
    /// layers to `c`. Used on its own and embedded in selector checkpoints.
    pub(crate) fn write_into(&self, mut c: Checkpoint, meta_prefix: &str) -> Checkpoint {
        c = c
            .with_meta(&format!("{meta_prefix}alpha"), nn::checkpoint::format_value(self.alpha))
            .with_meta(&format!("{meta_prefix}p_m"), nn::checkpoint::format_value(self.p_m))
            .with_meta(&format!("{meta_prefix}d"), self.n_features())
            .with_meta(&format!("{meta_prefix}hidden"), self.hidden())
            .with_meta(&format!("{meta_prefix}z_dim"), self.z_dim())
            .with_meta(&format!("{meta_prefix}mask_task"), self.mask_task)
            .with_meta(&format!("{meta_prefix}seed"), self.seed);
        for (prefix, net) in [
            ("encoder", &self.encoder),
            ("mask_head", &self.mask_head),
            ("recon_head", &self.recon_head),
        ] {
            for (i, layer) in net.layers().iter().enumerate() {
                c.push_layer(format!("{prefix}.{i}"), layer);
            }
        }
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.kind != CHECKPOINT_KIND {
            return Err(Error::Validation(format!(
                "expected an {CHECKPOINT_KIND} checkpoint, found `{}`",
                c.kind
            )));
        }
        Self::read_from(c, "")
    }

    pub(crate) fn read_from(c: &Checkpoint, meta_prefix: &str) -> Result<Self> {
        let key = |k: &str| format!("{meta_prefix}{k}");
        let model = Self {
            encoder: Mlp::new(c.layers_with_prefix("encoder"))?,
            mask_head: Mlp::new(c.layers_with_prefix("mask_head"))?,
            recon_head: Mlp::new(c.layers_with_prefix("recon_head"))?,
            alpha: c.meta_parse(&key("alpha"))?,
            p_m: c.meta_parse(&key("p_m"))?,
            mask_task: c.meta_parse(&key("mask_task"))?,
            seed: c.meta_parse(&key("seed"))?,
            log: Vec::new(),
        };
        let d: usize = c.meta_parse(&key("d"))?;
        if model.n_features() != d
            || model.mask_head.out_dim() != d
            || model.recon_head.out_dim() != d
            || model.mask_head.in_dim() != model.z_dim()
            || model.recon_head.in_dim() != model.z_dim()
        {
            return Err(Error::Validation("checkpoint layer widths are inconsistent".into()));
        }
        Ok(model)
    }
}

/// Joint pretext loss and gradients for one masked batch.
pub fn pretext_loss(model: &AutoencoderModel, masked: &MaskedBatch) -> Result<PretextLoss> {
    let d = model.n_features();
    masked.corrupted.ensure_shape(masked.corrupted.rows(), d, "pretext input")?;
    masked.mask.ensure_same_shape(&masked.corrupted, "pretext mask")?;
    masked.original.ensure_same_shape(&masked.corrupted, "pretext target")?;

    let x = &masked.corrupted;
    let enc_trace = model.encoder.forward_trace(x)?;
    let z = enc_trace.last().expect("non-empty MLP");
    let mask_trace = model.mask_head.forward_trace(z)?;
    let recon_trace = model.recon_head.forward_trace(z)?;

    let lm = nn::bce(mask_trace.last().expect("non-empty MLP"), &masked.mask)?;
    let lr = nn::mse(recon_trace.last().expect("non-empty MLP"), &masked.original)?;
    let mask_weight = if model.mask_task { 1.0 } else { 0.0 };
    let total = mask_weight * lm.value + model.alpha * lr.value;
    if !total.is_finite() {
        return Err(Error::Numerical(format!(
            "pretext loss is not finite (l_m = {}, l_r = {})",
            lm.value, lr.value
        )));
    }

    let (mask_grads, dz_mask) = if model.mask_task {
        model.mask_head.backward(z, &mask_trace, &lm.grad)?
    } else {
        (
            model.mask_head.layers().iter().map(DenseGrads::zeros_like).collect(),
            Matrix::zeros(z.rows(), z.cols()),
        )
    };
    let recon_upstream = lr.grad.map(|g| g * model.alpha);
    let (recon_grads, dz_recon) = model.recon_head.backward(z, &recon_trace, &recon_upstream)?;
    let mut dz = dz_mask;
    dz.add_assign(&dz_recon)?;
    let (enc_grads, _) = model.encoder.backward(x, &enc_trace, &dz)?;

    Ok(PretextLoss {
        total,
        mask: lm.value,
        recon: lr.value,
        grads: PretextGrads {
            encoder: enc_grads,
            mask_head: mask_grads,
            recon_head: recon_grads,
        },
    })
}

/// Train on the unlabeled rows with RMSprop. `epochs` and the optimizer
/// settings come from `config`; `alpha` and `p_m` stay as the model was built.
pub fn pretrain(
    mut model: AutoencoderModel,
    unlabeled: &Matrix,
    config: &PretextConfig,
    stream: SeedStream,
) -> Result<AutoencoderModel> {
    config.validate()?;
    if unlabeled.rows() == 0 {
        return Err(Error::Validation("pretraining needs unlabeled rows".into()));
    }
    if unlabeled.cols() != model.n_features() {
        return Err(Error::dimension("pretrain data width", model.n_features(), unlabeled.cols()));
    }
    if config.epochs == 0 {
        return Ok(model);
    }
    if unlabeled.rows() < 2 {
        return Err(Error::Validation("pretraining needs at least 2 unlabeled rows".into()));
    }
    let rows: Vec<usize> = (0..unlabeled.rows()).collect();
    let mut optimizer = Optimizer::rmsprop(config.learning_rate)?;
    let batch_stream = stream.child("pretext-batches");
    let mask_stream = stream.child("pretext-mask");

    for epoch in 0..config.epochs {
        let mut rng = mask_stream.index(epoch as u64).rng();
        let (mut sum_m, mut sum_r, mut sum_t, mut seen) = (0.0, 0.0, 0.0, 0usize);
        for (b, batch_rows) in epoch_batches(&rows, config.batch_size, batch_stream, epoch as u64)?
            .into_iter()
            .enumerate()
        {
            let batch = unlabeled.select_rows(&batch_rows);
            let masked = mask_batch(&batch, unlabeled, Some(&batch_rows), model.p_m, &mut rng)?;
            let out = pretext_loss(&model, &masked)
                .map_err(|e| annotate(e, &format!("epoch {} batch {b}", epoch + 1)))?;
            let n = batch_rows.len();
            sum_m += out.mask * n as f64;
            sum_r += out.recon * n as f64;
            sum_t += out.total * n as f64;
            seen += n;
            let grads = out.grads.flatten();
            optimizer
                .step(&mut model.params_mut(), &grads)
                .map_err(|e| annotate(e, &format!("epoch {} batch {b}", epoch + 1)))?;
        }
        let n = seen as f64;
        let entry = EpochLoss {
            epoch: epoch + 1,
            mask: sum_m / n,
            recon: sum_r / n,
            total: sum_t / n,
        };
        log::debug!(
            "pretext epoch {}: l_m = {:.5}, l_r = {:.5}, total = {:.5}",
            entry.epoch,
            entry.mask,
            entry.recon,
            entry.total
        );
        model.log.push(entry);
    }
    Ok(model)
}

fn annotate(e: Error, context: &str) -> Error {
    match e {
        Error::Numerical(msg) => Error::Numerical(format!("{context}: {msg}")),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PretextConfig {
        PretextConfig {
            hidden: Some(4),
            z_dim: Some(3),
            ..Default::default()
        }
    }

    #[test]
    fn default_widths() {
        let c = PretextConfig::default();
        assert_eq!(c.widths(20), (16, 8));
        assert_eq!(c.widths(100), (50, 25));
        assert_eq!(c.widths(6), (16, 5));
    }

    #[test]
    fn constructor_enforces_compression() {
        let c = PretextConfig {
            z_dim: Some(6),
            ..Default::default()
        };
        assert!(AutoencoderModel::new(6, &c, true, 0).is_err());
        assert!(AutoencoderModel::new(1, &PretextConfig::default(), true, 0).is_err());
        let bad_alpha = PretextConfig {
            alpha: -1.0,
            ..Default::default()
        };
        assert!(AutoencoderModel::new(6, &bad_alpha, true, 0).is_err());
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let model = AutoencoderModel::new(6, &small(), true, 4).unwrap();
        let cfg = PretextConfig { epochs: 0, ..small() };
        let out = pretrain(model.clone(), &Matrix::filled(10, 6, 0.5), &cfg, SeedStream::new(1)).unwrap();
        assert_eq!(out, model);
        assert!(out.log.is_empty());
    }

    #[test]
    fn empty_pool_is_rejected() {
        let model = AutoencoderModel::new(6, &small(), true, 4).unwrap();
        assert!(pretrain(model, &Matrix::zeros(0, 6), &small(), SeedStream::new(1)).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = AutoencoderModel::new(7, &small(), false, 12).unwrap();
        let back = AutoencoderModel::from_checkpoint(&Checkpoint::parse(&model.to_checkpoint("abc").to_text()).unwrap()).unwrap();
        assert_eq!(back, model);
    }
}

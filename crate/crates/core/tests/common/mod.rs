#![allow(dead_code)]

use rand::Rng;
use semisel::data::Labels;
use semisel::masking::mask_batch;
use semisel::nn::{bce, categorical_cross_entropy, mse, Activation, Matrix, Mlp};
use semisel::pretext::{pretext_loss, AutoencoderModel, PretextConfig};
use semisel::rng::SeedStream;
use semisel::selector::{selection_step, AttentionSelector, SelectorConfig, SelectorMode, Task};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// Relative error with a floor: central differences at this step carry
/// about 1e-11 of roundoff, so gradients below 1e-6 are compared absolutely.
pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GradCheck {
    pub worst: f64,
    pub checked: usize,
    /// Coordinates skipped because the step crossed a relu kink.
    pub kinks: usize,
}

impl GradCheck {
    pub fn merge(self, o: GradCheck) -> GradCheck {
        GradCheck {
            worst: self.worst.max(o.worst),
            checked: self.checked + o.checked,
            kinks: self.kinks + o.kinks,
        }
    }

    fn add(&mut self, analytic: f64, base: f64, up: f64, down: f64) {
        self.checked += 1;
        // Away from kinks the one-sided differences agree to O(step).
        let (fwd, bwd) = ((up - base) / STEP, (base - down) / STEP);
        if (fwd - bwd).abs() > 1e-3 * fwd.abs().max(bwd.abs()).max(1e-3) {
            self.kinks += 1;
            return;
        }
        self.worst = self.worst.max(rel_error(analytic, (up - down) / (2.0 * STEP)));
    }
}

/// Central differences over every parameter.
pub fn check_params<M>(
    model: &mut M,
    params: for<'a> fn(&'a mut M) -> Vec<(String, &'a mut [f64])>,
    loss: impl Fn(&M) -> f64,
    analytic: &[Vec<f64>],
) -> GradCheck {
    let shapes: Vec<usize> = params(model).iter().map(|(_, p)| p.len()).collect();
    assert_eq!(shapes.len(), analytic.len(), "gradient groups");
    let base = loss(model);
    let mut out = GradCheck::default();
    for (g, &len) in shapes.iter().enumerate() {
        assert_eq!(len, analytic[g].len(), "gradient group {g}");
        for i in 0..len {
            let orig = params(model)[g].1[i];
            params(model)[g].1[i] = orig + STEP;
            let up = loss(model);
            params(model)[g].1[i] = orig - STEP;
            let down = loss(model);
            params(model)[g].1[i] = orig;
            out.add(analytic[g][i], base, up, down);
        }
    }
    out
}

/// Central differences w.r.t. the entries of `input`.
pub fn check_input(input: &Matrix, loss: impl Fn(&Matrix) -> f64, analytic: &Matrix) -> GradCheck {
    let base = loss(input);
    let mut out = GradCheck::default();
    let mut x = input.clone();
    for i in 0..x.as_slice().len() {
        let orig = x.as_slice()[i];
        x.as_mut_slice()[i] = orig + STEP;
        let up = loss(&x);
        x.as_mut_slice()[i] = orig - STEP;
        let down = loss(&x);
        x.as_mut_slice()[i] = orig;
        out.add(analytic.as_slice()[i], base, up, down);
    }
    out
}

/// Move every parameter off its initial value. Zero biases put relu units
/// exactly on their kink, where finite differences are one-sided.
pub fn jitter<M>(model: &mut M, params: for<'a> fn(&'a mut M) -> Vec<(String, &'a mut [f64])>, rng: &mut impl Rng) {
    for (_, p) in params(model) {
        p.iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
    }
}

pub fn random_matrix(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn mlp_params(m: &mut Mlp) -> Vec<(String, &mut [f64])> {
    m.params_mut("mlp")
}

/// A random stack of dense layers under a random linear read-out; checks
/// parameter and input gradients.
pub fn mlp_instance(seed: u64) -> GradCheck {
    let mut rng = SeedStream::new(seed).child("mlp").rng();
    let acts = [Activation::Sigmoid, Activation::Tanh, Activation::Relu, Activation::Softmax, Activation::Identity];
    let depth = rng.random_range(1..=3);
    let widths: Vec<usize> = (0..=depth).map(|_| rng.random_range(1..=8)).collect();
    let activations: Vec<Activation> = (0..depth).map(|_| acts[rng.random_range(0..acts.len())]).collect();
    let mut mlp = Mlp::glorot(&widths, &activations, &mut rng).unwrap();
    jitter(&mut mlp, mlp_params, &mut rng);
    let batch = rng.random_range(1..=6);
    let x = random_matrix(batch, widths[0], -1.0, 1.0, &mut rng);
    let readout = random_matrix(batch, widths[depth], -1.0, 1.0, &mut rng);
    let objective = |out: &Matrix| out.as_slice().iter().zip(readout.as_slice()).map(|(a, b)| a * b).sum::<f64>();
    let trace = mlp.forward_trace(&x).unwrap();
    let (grads, dx) = mlp.backward(&x, &trace, &readout).unwrap();
    let analytic = semisel::nn::flatten_grads(grads);
    let p = check_params(&mut mlp, mlp_params, |m| objective(&m.forward(&x).unwrap()), &analytic);
    let i = check_input(&x, |x| objective(&mlp.forward(x).unwrap()), &dx);
    p.merge(i)
}

/// MSE, BCE and softmax cross-entropy w.r.t. their predictions.
pub fn loss_instance(seed: u64) -> GradCheck {
    let mut rng = SeedStream::new(seed).child("loss").rng();
    let rows = rng.random_range(1..=6);
    let cols = rng.random_range(1..=10);
    let target = random_matrix(rows, cols, 0.0, 1.0, &mut rng);
    let pred = random_matrix(rows, cols, -2.0, 2.0, &mut rng);
    let m = check_input(&pred, |p| mse(p, &target).unwrap().value, &mse(&pred, &target).unwrap().grad);

    let binary = target.map(|v| if v < 0.5 { 0.0 } else { 1.0 });
    let probs = random_matrix(rows, cols, 0.05, 0.95, &mut rng);
    let b = check_input(&probs, |p| bce(p, &binary).unwrap().value, &bce(&probs, &binary).unwrap().grad);

    let classes = cols.max(2);
    let logits = random_matrix(rows, classes, -3.0, 3.0, &mut rng);
    let labels: Vec<usize> = (0..rows).map(|_| rng.random_range(0..classes)).collect();
    let c = check_input(
        &logits,
        |l| categorical_cross_entropy(l, &labels).unwrap().value,
        &categorical_cross_entropy(&logits, &labels).unwrap().grad,
    );
    m.merge(b).merge(c)
}

fn ae_params(m: &mut AutoencoderModel) -> Vec<(String, &mut [f64])> {
    m.params_mut()
}

/// The joint pretext objective on one masked batch.
pub fn pretext_instance(seed: u64) -> GradCheck {
    let mut rng = SeedStream::new(seed).child("pretext").rng();
    let d = rng.random_range(2..=10);
    let config = PretextConfig {
        alpha: rng.random_range(0.0..4.0),
        hidden: Some(rng.random_range(2..=8)),
        z_dim: Some(rng.random_range(1..d)),
        ..PretextConfig::default()
    };
    let mut model = AutoencoderModel::new(d, &config, rng.random_bool(0.5), seed).unwrap();
    jitter(&mut model, ae_params, &mut rng);
    let pool = random_matrix(12, d, 0.0, 1.0, &mut rng);
    let batch = pool.select_rows(&[0, 1, 2, 3, 4]);
    let masked = mask_batch(&batch, &pool, Some(&[0, 1, 2, 3, 4]), 0.3, &mut rng).unwrap();
    let analytic = pretext_loss(&model, &masked).unwrap().grads.flatten();
    check_params(&mut model, ae_params, |m| pretext_loss(m, &masked).unwrap().total, &analytic)
}

fn selector_params(s: &mut AttentionSelector) -> Vec<(String, &mut [f64])> {
    s.params_mut(true)
}

/// The composite selection objective: encoder, reconstruction head,
/// attention, batch softmax, feature weighting and evaluator.
pub fn selector_instance(seed: u64) -> GradCheck {
    let mut rng = SeedStream::new(seed).child("selector").rng();
    let d = rng.random_range(2..=10);
    let h = rng.random_range(1..=8);
    let mode = SelectorMode::ALL[rng.random_range(0..SelectorMode::ALL.len())];
    let config = SelectorConfig {
        attention_hidden: h,
        evaluator_hidden: vec![rng.random_range(1..=8), rng.random_range(1..=8)],
        ..SelectorConfig::default()
    };
    let batch = rng.random_range(2..=8);
    let x = random_matrix(batch, d, 0.0, 1.0, &mut rng);
    let (task, labels) = if rng.random_bool(0.7) {
        let c = rng.random_range(2..=4);
        let y: Vec<usize> = (0..batch).map(|_| rng.random_range(0..c)).collect();
        (Task::Classification { n_classes: c }, Labels::Classes { values: y, n_classes: c })
    } else {
        (Task::Regression, Labels::Regression((0..batch).map(|_| rng.random_range(-1.0..1.0)).collect()))
    };
    let ae = mode.uses_autoencoder().then(|| {
        let pc = PretextConfig {
            hidden: Some(rng.random_range(2..=8)),
            z_dim: Some(rng.random_range(1..d)),
            ..PretextConfig::default()
        };
        AutoencoderModel::new(d, &pc, mode.mask_task(), seed).unwrap()
    });
    let mut sel = AttentionSelector::new(d, task, &config, mode, ae, seed).unwrap();
    jitter(&mut sel, selector_params, &mut rng);
    let analytic = selection_step(&sel, &x, &labels, true).unwrap().grads.flatten();
    check_params(&mut sel, selector_params, |s| selection_step(s, &x, &labels, true).unwrap().loss, &analytic)
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut worst) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        worst = worst.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    worst
}

#[derive(Debug, Clone, Copy)]
pub struct MaskingStats {
    pub fraction: f64,
    pub cells: usize,
    /// Masked cells whose value is not found in their column.
    pub foreign: usize,
    pub max_ks: f64,
}

/// Mask a synthetic `rows × 10` table against itself at `p_m`.
pub fn masking_stats(rows: usize, p_m: f64, seed: u64) -> MaskingStats {
    let spec = semisel::data::SyntheticSpec {
        n_samples: rows,
        n_features: 10,
        seed,
        ..Default::default()
    };
    let x = semisel::data::generate_synthetic(&spec).unwrap().features;
    let ids: Vec<usize> = (0..rows).collect();
    let m = mask_batch(&x, &x, Some(&ids), p_m, &mut SeedStream::new(seed).child("mask").rng()).unwrap();
    let mut foreign = 0;
    let mut max_ks: f64 = 0.0;
    for c in 0..x.cols() {
        let mut col = x.column(c);
        let corrupted = m.corrupted.column(c);
        max_ks = max_ks.max(ks_statistic(&col, &corrupted));
        col.sort_by(f64::total_cmp);
        for r in 0..rows {
            if m.mask.get(r, c) == 1.0 && col.binary_search_by(|v| v.total_cmp(&corrupted[r])).is_err() {
                foreign += 1;
            }
        }
    }
    MaskingStats {
        fraction: m.mask.mean(),
        cells: rows * x.cols(),
        foreign,
        max_ks,
    }
}

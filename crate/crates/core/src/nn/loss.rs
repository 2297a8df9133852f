//! Batch-averaged losses returning the scalar and its gradient w.r.t. the prediction.

use super::layer::softmax_in_place;
use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Lower/upper clamp applied to probabilities before taking logs.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad: Matrix,
}

/// Per-sample mean over features of squared error, averaged over the batch.
pub fn mse(pred: &Matrix, target: &Matrix) -> Result<LossOutput> {
    pred.ensure_same_shape(target, "mse target")?;
    let n = pred.as_slice().len().max(1) as f64;
    let mut value = 0.0;
    let mut grad = Matrix::zeros(pred.rows(), pred.cols());
    for ((g, &p), &t) in grad.as_mut_slice().iter_mut().zip(pred.as_slice()).zip(target.as_slice()) {
        let diff = p - t;
        value += diff * diff;
        *g = 2.0 * diff / n;
    }
    Ok(LossOutput { value: value / n, grad })
}

/// Binary cross-entropy in nats, mean over features and batch.
pub fn bce(pred: &Matrix, target: &Matrix) -> Result<LossOutput> {
    pred.ensure_same_shape(target, "bce target")?;
    if let Some(bad) = target.as_slice().iter().find(|&&t| t != 0.0 && t != 1.0) {
        return Err(Error::Validation(format!("bce target must be 0 or 1, found {bad}")));
    }
    let n = pred.as_slice().len().max(1) as f64;
    let (lo, hi) = (BCE_CLAMP, 1.0 - BCE_CLAMP);
    let mut value = 0.0;
    let mut grad = Matrix::zeros(pred.rows(), pred.cols());
    for ((g, &p), &t) in grad.as_mut_slice().iter_mut().zip(pred.as_slice()).zip(target.as_slice()) {
        let clamped = p.clamp(lo, hi);
        value -= t * clamped.ln() + (1.0 - t) * (1.0 - clamped).ln();
        // The clamp is flat outside its range.
        *g = if p > lo && p < hi {
            (clamped - t) / (clamped * (1.0 - clamped)) / n
        } else {
            0.0
        };
    }
    Ok(LossOutput { value: value / n, grad })
}

/// Softmax cross-entropy on raw logits, batch-averaged. The gradient is
/// w.r.t. the logits: `(softmax − onehot) / batch`.
pub fn categorical_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<LossOutput> {
    if labels.len() != logits.rows() {
        return Err(Error::dimension("cross-entropy labels", logits.rows(), labels.len()));
    }
    let classes = logits.cols();
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Validation(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let batch = logits.rows().max(1) as f64;
    let mut grad = logits.clone();
    let mut value = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = grad.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_total = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        value += log_total - row[y];
        softmax_in_place(row);
        row[y] -= 1.0;
        row.iter_mut().for_each(|v| *v /= batch);
    }
    Ok(LossOutput {
        value: value / batch,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_cases() {
        let a = Matrix::from_rows(&[[0.3, 0.7]]).unwrap();
        assert_eq!(mse(&a, &a).unwrap().value, 0.0);
        let out = mse(&Matrix::from_rows(&[[1.0, 0.0]]).unwrap(), &Matrix::zeros(1, 2)).unwrap();
        assert!((out.value - 0.5).abs() < 1e-15);
        assert!(mse(&a, &Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn bce_cases() {
        let d = 5;
        let half = Matrix::filled(3, d, 0.5);
        let mut target = Matrix::zeros(3, d);
        target.set(0, 1, 1.0);
        target.set(2, 4, 1.0);
        assert!((bce(&half, &target).unwrap().value - std::f64::consts::LN_2).abs() < 1e-12);

        let exact = bce(&target, &target).unwrap().value;
        assert!(exact < 1e-6);

        let v = bce(&Matrix::filled(1, 1, 0.8), &Matrix::filled(1, 1, 1.0)).unwrap().value;
        assert!((v - 0.223_143_551_314_209_7).abs() < 1e-12);

        assert!(matches!(
            bce(&half, &Matrix::filled(3, d, 0.5)),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn cross_entropy_cases() {
        let c = 4;
        let uniform = categorical_cross_entropy(&Matrix::filled(2, c, 0.3), &[0, 3]).unwrap();
        assert!((uniform.value - (c as f64).ln()).abs() < 1e-12);

        let confident = categorical_cross_entropy(&Matrix::from_rows(&[[200.0, 0.0]]).unwrap(), &[0]).unwrap();
        assert!(confident.value < 1e-12);

        let hand = categorical_cross_entropy(&Matrix::from_rows(&[[1.0, 0.0]]).unwrap(), &[0]).unwrap();
        let e = std::f64::consts::E;
        assert!((hand.value - -(e / (e + 1.0)).ln()).abs() < 1e-12);
        assert!((hand.value - 0.3133).abs() < 1e-4);

        assert!(categorical_cross_entropy(&Matrix::zeros(1, 2), &[2]).is_err());
        assert!(categorical_cross_entropy(&Matrix::zeros(2, 2), &[0]).is_err());
    }
}

//! Same-column masking: a Bernoulli mask picks cells, and each picked cell
//! takes the value of the same column from a randomly drawn donor row, so the
//! corrupted data keeps every column's marginal distribution.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::Matrix;

pub const NO_DONOR: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedBatch {
    pub original: Matrix,
    /// 1 where the cell was replaced.
    pub mask: Matrix,
    pub corrupted: Matrix,
    pub p_m: f64,
    /// Pool row that supplied each masked cell; `NO_DONOR` elsewhere.
    pub donors: Vec<usize>,
}

impl MaskedBatch {
    pub fn donor(&self, r: usize, c: usize) -> Option<usize> {
        let d = self.donors[r * self.original.cols() + c];
        (d != NO_DONOR).then_some(d)
    }
}

/// Per-cell i.i.d. Bernoulli(`p_m`) mask of shape `batch_size × d`.
pub fn sample_mask<R: Rng + ?Sized>(batch_size: usize, d: usize, p_m: f64, rng: &mut R) -> Result<Matrix> {
    if !(0.0..=1.0).contains(&p_m) {
        return Err(Error::Validation(format!("mask probability must be in [0, 1], got {p_m}")));
    }
    let data = (0..batch_size * d)
        .map(|_| if rng.random::<f64>() < p_m { 1.0 } else { 0.0 })
        .collect();
    Matrix::from_vec(batch_size, d, data)
}

/// Replace masked cells with same-column values from `pool`.
///
/// When `batch_rows` gives the pool index of each batch row, donors are drawn
/// uniformly from the other pool rows; otherwise uniformly from the whole pool.
pub fn corrupt<R: Rng + ?Sized>(
    batch: &Matrix,
    pool: &Matrix,
    mask: &Matrix,
    batch_rows: Option<&[usize]>,
    rng: &mut R,
) -> Result<MaskedBatch> {
    if pool.rows() < 2 {
        return Err(Error::Validation(format!(
            "donor pool needs at least 2 rows, has {}",
            pool.rows()
        )));
    }
    if batch.cols() != pool.cols() {
        return Err(Error::dimension("corrupt pool width", batch.cols(), pool.cols()));
    }
    mask.ensure_same_shape(batch, "corrupt mask")?;
    if let Some(rows) = batch_rows {
        if rows.len() != batch.rows() {
            return Err(Error::dimension("corrupt batch_rows", batch.rows(), rows.len()));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= pool.rows()) {
            return Err(Error::Validation(format!("batch row {bad} is outside the pool")));
        }
    }

    let (b, d) = batch.shape();
    let mut corrupted = batch.clone();
    let mut donors = vec![NO_DONOR; b * d];
    for i in 0..b {
        for j in 0..d {
            let m = mask.get(i, j);
            if m == 0.0 {
                continue;
            }
            if m != 1.0 {
                return Err(Error::Validation(format!("mask entry ({i}, {j}) = {m} is not binary")));
            }
            let donor = match batch_rows {
                Some(rows) => {
                    // Uniform over the pool minus the row itself.
                    let own = rows[i];
                    let r = rng.random_range(0..pool.rows() - 1);
                    if r >= own { r + 1 } else { r }
                }
                None => rng.random_range(0..pool.rows()),
            };
            donors[i * d + j] = donor;
            corrupted.set(i, j, pool.get(donor, j));
        }
    }
    Ok(MaskedBatch {
        original: batch.clone(),
        mask: mask.clone(),
        corrupted,
        p_m: mask.mean(),
        donors,
    })
}

/// Mask and corrupt in one call, recording the nominal `p_m`.
pub fn mask_batch<R: Rng + ?Sized>(
    batch: &Matrix,
    pool: &Matrix,
    batch_rows: Option<&[usize]>,
    p_m: f64,
    rng: &mut R,
) -> Result<MaskedBatch> {
    let mask = sample_mask(batch.rows(), batch.cols(), p_m, rng)?;
    let mut out = corrupt(batch, pool, &mask, batch_rows, rng)?;
    out.p_m = p_m;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;

    #[test]
    fn extreme_probabilities() {
        let mut rng = SeedStream::new(0).rng();
        assert!(sample_mask(4, 5, 0.0, &mut rng).unwrap().as_slice().iter().all(|&v| v == 0.0));
        assert!(sample_mask(4, 5, 1.0, &mut rng).unwrap().as_slice().iter().all(|&v| v == 1.0));
        assert!(sample_mask(4, 5, 1.5, &mut rng).is_err());
        assert!(sample_mask(4, 5, -0.1, &mut rng).is_err());
    }

    #[test]
    fn zero_mask_is_identity() {
        let mut rng = SeedStream::new(1).rng();
        let pool = Matrix::from_rows(&[[0.1, 0.2], [0.3, 0.4], [0.5, 0.6]]).unwrap();
        let out = corrupt(&pool, &pool, &Matrix::zeros(3, 2), Some(&[0, 1, 2]), &mut rng).unwrap();
        assert_eq!(out.corrupted, pool);
        assert!(out.donors.iter().all(|&d| d == NO_DONOR));
    }

    #[test]
    fn constant_column_is_unchanged() {
        let mut rng = SeedStream::new(2).rng();
        let pool = Matrix::from_rows(&[[0.7, 0.1], [0.7, 0.9], [0.7, 0.4], [0.7, 0.2]]).unwrap();
        let out = corrupt(&pool, &pool, &Matrix::filled(4, 2, 1.0), Some(&[0, 1, 2, 3]), &mut rng).unwrap();
        assert_eq!(out.corrupted.column(0), pool.column(0));
    }

    #[test]
    fn donors_exclude_self() {
        let mut rng = SeedStream::new(3).rng();
        let pool = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let out = corrupt(&pool, &pool, &Matrix::filled(2, 1, 1.0), Some(&[0, 1]), &mut rng).unwrap();
        assert_eq!(out.corrupted.as_slice(), &[1.0, 0.0]);
        assert_eq!(out.donor(0, 0), Some(1));
    }

    #[test]
    fn rejects_tiny_pool_and_bad_shapes() {
        let mut rng = SeedStream::new(4).rng();
        let one = Matrix::zeros(1, 3);
        assert!(corrupt(&one, &one, &Matrix::zeros(1, 3), None, &mut rng).is_err());
        let pool = Matrix::zeros(5, 3);
        assert!(corrupt(&Matrix::zeros(2, 2), &pool, &Matrix::zeros(2, 2), None, &mut rng).is_err());
    }
}

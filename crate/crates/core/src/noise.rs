//! Seeded corruption models for scaled data in `[0, 1]`.
//!
//! Blur kinds treat each row as an image laid out row-major on a declared
//! grid and use reflective borders (`d c b a | a b c d | d c b a`).

use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::rng::SeedStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian {
        #[serde(default)]
        mean: f64,
        #[serde(default = "default_gaussian_var")]
        var: f64,
    },
    SaltPepper {
        #[serde(default = "default_amount")]
        amount: f64,
        /// Share of corrupted cells set to 1 rather than 0.
        #[serde(default = "default_salt_vs_pepper")]
        salt_vs_pepper: f64,
    },
    Poisson,
    Speckle {
        #[serde(default)]
        mean: f64,
        #[serde(default = "default_speckle_var")]
        var: f64,
    },
    GaussianBlur {
        #[serde(default = "default_sigma")]
        sigma: f64,
        #[serde(default = "default_kernel")]
        size: usize,
    },
    MeanBlur {
        #[serde(default = "default_kernel")]
        size: usize,
    },
    Missing {
        #[serde(default = "default_missing")]
        fraction: f64,
    },
}

fn default_gaussian_var() -> f64 {
    0.01
}
fn default_amount() -> f64 {
    0.05
}
fn default_salt_vs_pepper() -> f64 {
    0.5
}
fn default_speckle_var() -> f64 {
    0.3
}
fn default_sigma() -> f64 {
    1.0
}
fn default_kernel() -> usize {
    3
}
fn default_missing() -> f64 {
    0.3
}

impl NoiseKind {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseKind::Gaussian { .. } => "gaussian",
            NoiseKind::SaltPepper { .. } => "salt_pepper",
            NoiseKind::Poisson => "poisson",
            NoiseKind::Speckle { .. } => "speckle",
            NoiseKind::GaussianBlur { .. } => "gaussian_blur",
            NoiseKind::MeanBlur { .. } => "mean_blur",
            NoiseKind::Missing { .. } => "missing",
        }
    }

    fn is_blur(&self) -> bool {
        matches!(self, NoiseKind::GaussianBlur { .. } | NoiseKind::MeanBlur { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(flatten)]
    pub kind: NoiseKind,
    #[serde(default)]
    pub seed: u64,
    /// `[rows, cols]` image layout of a feature vector; required for blurs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<[usize; 2]>,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, seed: u64) -> Self {
        Self { kind, seed, grid: None }
    }

    pub fn with_grid(mut self, rows: usize, cols: usize) -> Self {
        self.grid = Some([rows, cols]);
        self
    }

    pub fn salt_pepper(amount: f64, seed: u64) -> Self {
        Self::new(
            NoiseKind::SaltPepper {
                amount,
                salt_vs_pepper: 0.5,
            },
            seed,
        )
    }

    pub fn missing(fraction: f64, seed: u64) -> Self {
        Self::new(NoiseKind::Missing { fraction }, seed)
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        let prob = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{} {name} must be in [0, 1], got {v}", self.kind.name())))
            }
        };
        let var = |v: f64, mean: f64| {
            if v >= 0.0 && v.is_finite() && mean.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{} needs var >= 0 and a finite mean", self.kind.name())))
            }
        };
        match &self.kind {
            NoiseKind::Gaussian { mean, var: v } | NoiseKind::Speckle { mean, var: v } => var(*v, *mean)?,
            NoiseKind::SaltPepper { amount, salt_vs_pepper } => {
                prob("amount", *amount)?;
                prob("salt_vs_pepper", *salt_vs_pepper)?;
            }
            NoiseKind::Missing { fraction } => prob("fraction", *fraction)?,
            NoiseKind::Poisson => {}
            NoiseKind::GaussianBlur { sigma, size } => {
                if !(*sigma > 0.0) || size % 2 == 0 {
                    return Err(Error::Config("gaussian_blur needs sigma > 0 and an odd kernel size".into()));
                }
            }
            NoiseKind::MeanBlur { size } => {
                if size % 2 == 0 {
                    return Err(Error::Config("mean_blur needs an odd kernel size".into()));
                }
            }
        }
        if self.kind.is_blur() {
            match self.grid {
                None => {
                    return Err(Error::Config(format!(
                        "{} needs a grid shape for the feature vector",
                        self.kind.name()
                    )))
                }
                Some([r, c]) if r * c != d => {
                    return Err(Error::Config(format!("grid {r}x{c} does not cover {d} features")));
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

/// Corrupted copy of `x`. Every entry of `x` must lie in `[0, 1]`.
pub fn apply_noise(x: &Matrix, spec: &NoiseSpec) -> Result<Matrix> {
    spec.validate(x.cols())?;
    check_unit_range(x)?;
    let mut rng = SeedStream::new(spec.seed).child(spec.kind.name()).rng();
    let out = match &spec.kind {
        NoiseKind::Gaussian { mean, var } => {
            let normal = Normal::new(*mean, var.sqrt()).map_err(|e| Error::Config(e.to_string()))?;
            map_cells(x, |v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0))
        }
        NoiseKind::Speckle { mean, var } => {
            let normal = Normal::new(*mean, var.sqrt()).map_err(|e| Error::Config(e.to_string()))?;
            map_cells(x, |v| (v + normal.sample(&mut rng) * v).clamp(0.0, 1.0))
        }
        NoiseKind::SaltPepper { amount, salt_vs_pepper } => map_cells(x, |v| {
            if rng.random::<f64>() < *amount {
                if rng.random::<f64>() < *salt_vs_pepper {
                    1.0
                } else {
                    0.0
                }
            } else {
                v
            }
        }),
        NoiseKind::Poisson => {
            // Intensities are scaled to the next power of two above the
            // number of distinct values, resampled, and scaled back.
            let mut distinct: Vec<f64> = x.as_slice().to_vec();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            let levels = 2f64.powf((distinct.len() as f64).log2().ceil());
            let mut out = x.clone();
            for v in out.as_mut_slice() {
                let lambda = *v * levels;
                let draw = if lambda > 0.0 {
                    Poisson::new(lambda).map_err(|e| Error::Numerical(e.to_string()))?.sample(&mut rng)
                } else {
                    0.0
                };
                *v = (draw / levels).clamp(0.0, 1.0);
            }
            out
        }
        NoiseKind::GaussianBlur { sigma, size } => blur(x, spec.grid.expect("validated"), &gaussian_kernel(*size, *sigma)),
        NoiseKind::MeanBlur { size } => {
            let n = size * size;
            blur(x, spec.grid.expect("validated"), &Matrix::filled(*size, *size, 1.0 / n as f64))
        }
        NoiseKind::Missing { fraction } => missing_cells(x, *fraction, &mut rng).0,
    };
    Ok(out)
}

/// Apply `specs` in order to every feature row of `ds`.
pub fn corrupt_dataset(ds: &Dataset, specs: &[NoiseSpec]) -> Result<Dataset> {
    let mut x = ds.features.clone();
    for spec in specs {
        x = apply_noise(&x, spec)?;
    }
    ds.with_features(x)
}

/// Zero `round(fraction · cells)` uniformly chosen cells. The returned map
/// is row-major and true where a cell was zeroed.
pub fn missing_mask(x: &Matrix, fraction: f64, seed: u64) -> Result<(Matrix, Vec<bool>)> {
    NoiseSpec::missing(fraction, seed).validate(x.cols())?;
    let mut rng = SeedStream::new(seed).child("missing").rng();
    Ok(missing_cells(x, fraction, &mut rng))
}

fn missing_cells(x: &Matrix, fraction: f64, rng: &mut crate::rng::Rng) -> (Matrix, Vec<bool>) {
    let cells = x.rows() * x.cols();
    let count = ((fraction * cells as f64).round() as usize).min(cells);
    let mut map = vec![false; cells];
    let mut out = x.clone();
    for i in index::sample(rng, cells, count) {
        map[i] = true;
        out.as_mut_slice()[i] = 0.0;
    }
    (out, map)
}

fn map_cells(x: &Matrix, mut f: impl FnMut(f64) -> f64) -> Matrix {
    let mut out = x.clone();
    out.as_mut_slice().iter_mut().for_each(|v| *v = f(*v));
    out
}

fn check_unit_range(x: &Matrix) -> Result<()> {
    match x.as_slice().iter().position(|v| !(0.0..=1.0).contains(v)) {
        None => Ok(()),
        Some(i) => Err(Error::Validation(format!(
            "noise input must lie in [0, 1]; row {}, column {} is {}",
            i / x.cols().max(1),
            i % x.cols().max(1),
            x.as_slice()[i]
        ))),
    }
}

/// Normalized `size × size` Gaussian kernel.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Matrix {
    let half = (size / 2) as f64;
    let w: Vec<f64> = (0..size)
        .map(|i| {
            let t = i as f64 - half;
            (-t * t / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let mut k = Matrix::zeros(size, size);
    for r in 0..size {
        for c in 0..size {
            k.set(r, c, w[r] * w[c]);
        }
    }
    let total: f64 = k.as_slice().iter().sum();
    k.map(|v| v / total)
}

/// Index into `0..n` with half-sample symmetric reflection.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

fn blur(x: &Matrix, [rows, cols]: [usize; 2], kernel: &Matrix) -> Matrix {
    let half = (kernel.rows() / 2) as isize;
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for (src, dst) in x.iter_rows().zip(0..) {
        let row = out.row_mut(dst);
        for r in 0..rows {
            for c in 0..cols {
                let mut acc = 0.0;
                for kr in 0..kernel.rows() {
                    let rr = reflect(r as isize + kr as isize - half, rows);
                    for kc in 0..kernel.cols() {
                        let cc = reflect(c as isize + kc as isize - half, cols);
                        acc += kernel.get(kr, kc) * src[rr * cols + cc];
                    }
                }
                row[r * cols + c] = acc.clamp(0.0, 1.0);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(rows: usize, cols: usize) -> Matrix {
        let n = rows * cols;
        Matrix::from_vec(rows, cols, (0..n).map(|i| i as f64 / n as f64).collect()).unwrap()
    }

    #[test]
    fn zero_variance_gaussian_is_identity() {
        let x = ramp(10, 4);
        let spec = NoiseSpec::new(NoiseKind::Gaussian { mean: 0.0, var: 0.0 }, 3);
        assert_eq!(apply_noise(&x, &spec).unwrap(), x);
    }

    #[test]
    fn mean_blur_keeps_constant_image() {
        let x = Matrix::filled(3, 12, 0.4);
        let spec = NoiseSpec::new(NoiseKind::MeanBlur { size: 3 }, 0).with_grid(3, 4);
        let out = apply_noise(&x, &spec).unwrap();
        assert!(out.as_slice().iter().all(|v| (v - 0.4).abs() < 1e-15));
    }

    #[test]
    fn blur_requires_grid() {
        let x = ramp(2, 6);
        let spec = NoiseSpec::new(NoiseKind::GaussianBlur { sigma: 1.0, size: 3 }, 0);
        assert!(matches!(apply_noise(&x, &spec), Err(Error::Config(_))));
        assert!(apply_noise(&x, &spec.clone().with_grid(2, 2)).is_err());
        assert!(apply_noise(&x, &spec.with_grid(2, 3)).is_ok());
    }

    #[test]
    fn reflect_matches_half_sample_symmetry() {
        let idx: Vec<usize> = (-4..8).map(|i| reflect(i, 4)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 0, 1, 2, 3, 3, 2, 1, 0]);
    }

    #[test]
    fn gaussian_kernel_hand_values() {
        let k = gaussian_kernel(3, 1.0);
        let e = (-0.5f64).exp();
        let total = (1.0 + 2.0 * e).powi(2);
        assert!((k.get(1, 1) - 1.0 / total).abs() < 1e-15);
        assert!((k.get(0, 0) - e * e / total).abs() < 1e-15);
        assert!((k.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn blur_hand_example() {
        // 1×3 grid [0, 0.3, 0.9] with a 3×3 mean kernel: rows reflect onto
        // themselves, so each output is the mean of its 1-D reflected window.
        let x = Matrix::from_rows(&[[0.0, 0.3, 0.9]]).unwrap();
        let spec = NoiseSpec::new(NoiseKind::MeanBlur { size: 3 }, 0).with_grid(1, 3);
        let out = apply_noise(&x, &spec).unwrap();
        let expect = [(0.0 + 0.0 + 0.3) / 3.0, (0.0 + 0.3 + 0.9) / 3.0, (0.3 + 0.9 + 0.9) / 3.0];
        for (o, e) in out.as_slice().iter().zip(expect) {
            assert!((o - e).abs() < 1e-15);
        }
    }

    #[test]
    fn missing_is_exact_and_seeded() {
        let x = Matrix::filled(100, 10, 0.5);
        let (out, map) = missing_mask(&x, 0.3, 7).unwrap();
        assert_eq!(map.iter().filter(|m| **m).count(), 300);
        for (v, m) in out.as_slice().iter().zip(&map) {
            assert_eq!(*v == 0.0, *m);
        }
        assert_eq!(missing_mask(&x, 0.3, 7).unwrap().1, map);
        assert_eq!(missing_mask(&x, 0.0, 7).unwrap().0, x);
    }

    #[test]
    fn rejects_out_of_range_input_and_parameters() {
        let x = Matrix::from_rows(&[[0.5, 1.5]]).unwrap();
        assert!(apply_noise(&x, &NoiseSpec::salt_pepper(0.1, 0)).is_err());
        let ok = Matrix::filled(1, 2, 0.5);
        assert!(apply_noise(&ok, &NoiseSpec::salt_pepper(1.1, 0)).is_err());
        assert!(apply_noise(&ok, &NoiseSpec::new(NoiseKind::Speckle { mean: 0.0, var: -1.0 }, 0)).is_err());
    }

    #[test]
    fn poisson_keeps_zero_and_range() {
        let x = ramp(20, 5);
        let out = apply_noise(&x, &NoiseSpec::new(NoiseKind::Poisson, 1)).unwrap();
        assert_eq!(out.get(0, 0), 0.0);
        assert!(out.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn spec_from_toml() {
        let spec: NoiseSpec = toml::from_str("kind = \"salt_pepper\"\namount = 0.1\nseed = 4").unwrap();
        assert_eq!(spec, NoiseSpec::salt_pepper(0.1, 4));
        let blur: NoiseSpec = toml::from_str("kind = \"mean_blur\"\ngrid = [2, 3]").unwrap();
        assert_eq!(blur.grid, Some([2, 3]));
    }
}

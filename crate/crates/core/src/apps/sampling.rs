use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::samples::Samples;

/// Reference distributions that can be sampled directly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceKind {
    /// Independent Laplace coordinates with density `rate/2 exp(-rate |x|)`.
    Laplace {
        rate: f64,
        dim: usize,
    },
    Gaussian {
        mean: Vec<f64>,
        covariance: Vec<Vec<f64>>,
    },
    /// `weight N(mean_a, std^2 I) + (1 - weight) N(mean_b, std^2 I)`.
    TwoGaussianMixture {
        weight: f64,
        mean_a: Vec<f64>,
        mean_b: Vec<f64>,
        std: f64,
    },
}

impl SourceKind {
    pub fn standard_gaussian(dim: usize) -> Self {
        let covariance = (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        SourceKind::Gaussian {
            mean: vec![0.0; dim],
            covariance,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SourceKind::Laplace { dim, .. } => *dim,
            SourceKind::Gaussian { mean, .. } => mean.len(),
            SourceKind::TwoGaussianMixture { mean_a, .. } => mean_a.len(),
        }
    }
}

/// `-sign(u) ln(1 - 2|u|) / rate` for `u` uniform on `(-1/2, 1/2)`.
fn laplace_inverse_cdf(u: f64, rate: f64) -> f64 {
    -u.signum() * (1.0 - 2.0 * u.abs()).ln() / rate
}

/// `n` i.i.d. draws, reproducible for a given seed.
pub fn sample_source(kind: &SourceKind, n: usize, seed: u64) -> Result<Samples> {
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let dim = kind.dim();
    if dim == 0 {
        return Err(Error::ZeroDimension);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * dim);
    match kind {
        SourceKind::Laplace { rate, .. } => {
            if !(*rate > 0.0 && rate.is_finite()) {
                return Err(Error::invalid(format!("Laplace rate must be positive, got {rate}")));
            }
            for _ in 0..n * dim {
                // Open interval avoids the infinite endpoints.
                let u = loop {
                    let u: f64 = rng.random::<f64>() - 0.5;
                    if u.abs() < 0.5 {
                        break u;
                    }
                };
                data.push(laplace_inverse_cdf(u, *rate));
            }
        }
        SourceKind::Gaussian { mean, covariance } => {
            if covariance.len() != dim || covariance.iter().any(|r| r.len() != dim) {
                return Err(Error::invalid("covariance must be a square matrix matching the mean"));
            }
            let cov = DMatrix::from_fn(dim, dim, |i, j| covariance[i][j]);
            let chol = cov.cholesky().ok_or(Error::NotPositiveDefinite)?;
            let l = chol.l();
            let mu = DVector::from_column_slice(mean);
            for _ in 0..n {
                let z = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                data.extend((&mu + &l * z).iter());
            }
        }
        SourceKind::TwoGaussianMixture {
            weight,
            mean_a,
            mean_b,
            std,
        } => {
            if !(0.0..=1.0).contains(weight) {
                return Err(Error::invalid(format!(
                    "mixture weight must lie in [0, 1], got {weight}"
                )));
            }
            if mean_b.len() != dim {
                return Err(Error::DimensionMismatch {
                    what: "mixture component mean",
                    expected: dim,
                    found: mean_b.len(),
                });
            }
            if !(*std > 0.0 && std.is_finite()) {
                return Err(Error::invalid(format!("mixture std must be positive, got {std}")));
            }
            for _ in 0..n {
                let centre = if rng.random::<f64>() < *weight { mean_a } else { mean_b };
                for c in centre {
                    let z: f64 = rng.sample(StandardNormal);
                    data.push(c + std * z);
                }
            }
        }
    }
    Samples::new(dim, data)
}

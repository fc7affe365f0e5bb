//! Unnormalized log-concave target densities.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Value, gradient and Hessian of a twice-differentiable stand-in for `log q`.
#[derive(Clone, Debug)]
pub struct SmoothTerms {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

/// Gaussian density in natural form: `log q(u) = -1/2 (u - mean)' precision (u - mean)`.
#[derive(Clone, Debug)]
pub struct GaussianForm {
    pub mean: DVector<f64>,
    pub precision: DMatrix<f64>,
}

/// A density `q` on `R^D` known up to a multiplicative constant.
///
/// Implementations are immutable and shared across solver workers.
pub trait TargetDensity: Send + Sync {
    fn dim(&self) -> usize;

    /// `log q(u)` up to an additive constant.
    fn log_density(&self, u: &[f64]) -> f64;

    fn grad_log_density(&self, u: &[f64]) -> DVector<f64>;

    /// Terms used by second-order inner solvers. Non-smooth pieces are replaced
    /// by their Huber smoothing of width `huber_width`; smooth densities return
    /// exact values.
    fn smooth_terms(&self, u: &[f64], huber_width: f64) -> SmoothTerms;

    /// Whether the solver may rely on concavity of `log q`. Built-in targets are.
    fn log_concave(&self) -> bool {
        true
    }

    /// Natural parameters when the density is exactly Gaussian, enabling closed-form
    /// proximal steps.
    fn gaussian_form(&self) -> Option<GaussianForm> {
        None
    }
}

impl<T: TargetDensity + ?Sized> TargetDensity for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn log_density(&self, u: &[f64]) -> f64 {
        (**self).log_density(u)
    }
    fn grad_log_density(&self, u: &[f64]) -> DVector<f64> {
        (**self).grad_log_density(u)
    }
    fn smooth_terms(&self, u: &[f64], huber_width: f64) -> SmoothTerms {
        (**self).smooth_terms(u, huber_width)
    }
    fn log_concave(&self) -> bool {
        (**self).log_concave()
    }
    fn gaussian_form(&self) -> Option<GaussianForm> {
        (**self).gaussian_form()
    }
}

#[derive(Clone, Debug)]
pub struct GaussianTarget {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
}

impl GaussianTarget {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::ZeroDimension);
        }
        if covariance.shape() != (d, d) {
            return Err(Error::DimensionMismatch {
                what: "covariance",
                expected: d,
                found: covariance.nrows(),
            });
        }
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "gaussian parameters",
            });
        }
        let scale = covariance.amax().max(f64::MIN_POSITIVE);
        if (&covariance - covariance.transpose()).amax() > 1e-12 * scale {
            return Err(Error::NotPositiveDefinite);
        }
        let chol = covariance.cholesky().ok_or(Error::NotPositiveDefinite)?;
        Ok(Self {
            mean,
            precision: chol.inverse(),
        })
    }

    pub fn standard(dim: usize) -> Result<Self> {
        Self::new(DVector::zeros(dim), DMatrix::identity(dim, dim))
    }

    pub fn diagonal(mean: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        Self::new(
            DVector::from_vec(mean),
            DMatrix::from_diagonal(&DVector::from_vec(variances)),
        )
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }
}

impl TargetDensity for GaussianTarget {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density(&self, u: &[f64]) -> f64 {
        let r = DVector::from_column_slice(u) - &self.mean;
        -0.5 * r.dot(&(&self.precision * &r))
    }

    fn grad_log_density(&self, u: &[f64]) -> DVector<f64> {
        let r = DVector::from_column_slice(u) - &self.mean;
        -(&self.precision * r)
    }

    fn smooth_terms(&self, u: &[f64], _huber_width: f64) -> SmoothTerms {
        let r = DVector::from_column_slice(u) - &self.mean;
        let pr = &self.precision * &r;
        SmoothTerms {
            value: -0.5 * r.dot(&pr),
            grad: -pr,
            hess: -self.precision.clone(),
        }
    }

    fn gaussian_form(&self) -> Option<GaussianForm> {
        Some(GaussianForm {
            mean: self.mean.clone(),
            precision: self.precision.clone(),
        })
    }
}

/// Huber smoothing of `|t|` with width `eps`: value, first and second derivative.
fn huber(t: f64, eps: f64) -> (f64, f64, f64) {
    if t.abs() <= eps {
        (t * t / (2.0 * eps), t / eps, 1.0 / eps)
    } else {
        (t.abs() - 0.5 * eps, t.signum(), 0.0)
    }
}

/// Independent Laplace prior `prod_i (rate/2) exp(-rate |u_i|)`.
#[derive(Clone, Debug)]
pub struct LaplacePrior {
    rate: f64,
    dim: usize,
}

impl LaplacePrior {
    pub fn new(rate: f64, dim: usize) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::invalid(format!("Laplace rate must be positive, got {rate}")));
        }
        if dim == 0 {
            return Err(Error::ZeroDimension);
        }
        Ok(Self { rate, dim })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }
}

impl TargetDensity for LaplacePrior {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, u: &[f64]) -> f64 {
        self.dim as f64 * (self.rate / 2.0).ln() - self.rate * u.iter().map(|v| v.abs()).sum::<f64>()
    }

    fn grad_log_density(&self, u: &[f64]) -> DVector<f64> {
        // subgradient 0 at the kink
        DVector::from_iterator(
            self.dim,
            u.iter().map(|&v| if v == 0.0 { 0.0 } else { -self.rate * v.signum() }),
        )
    }

    fn smooth_terms(&self, u: &[f64], huber_width: f64) -> SmoothTerms {
        let mut value = self.dim as f64 * (self.rate / 2.0).ln();
        let mut grad = DVector::zeros(self.dim);
        let mut hess = DMatrix::zeros(self.dim, self.dim);
        for (i, &v) in u.iter().enumerate() {
            let (h, dh, ddh) = huber(v, huber_width);
            value -= self.rate * h;
            grad[i] = -self.rate * dh;
            hess[(i, i)] = -self.rate * ddh;
        }
        SmoothTerms { value, grad, hess }
    }
}

/// Linear-Gaussian likelihood `y ~ N(Phi x, sigma2 I)` viewed as a function of `x`.
#[derive(Clone, Debug)]
pub struct LinearGaussianLikelihood {
    design: DMatrix<f64>,
    response: DVector<f64>,
    sigma2: f64,
    gram: DMatrix<f64>,
    design_t_y: DVector<f64>,
}

impl LinearGaussianLikelihood {
    pub fn new(response: DVector<f64>, design: DMatrix<f64>, sigma2: f64) -> Result<Self> {
        if design.nrows() != response.len() {
            return Err(Error::DimensionMismatch {
                what: "regressor rows vs response length",
                expected: response.len(),
                found: design.nrows(),
            });
        }
        if design.ncols() == 0 {
            return Err(Error::ZeroDimension);
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::invalid(format!("noise variance must be positive, got {sigma2}")));
        }
        let gram = design.transpose() * &design;
        let design_t_y = design.transpose() * &response;
        Ok(Self {
            design,
            response,
            sigma2,
            gram,
            design_t_y,
        })
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.response
    }
}

impl TargetDensity for LinearGaussianLikelihood {
    fn dim(&self) -> usize {
        self.design.ncols()
    }

    fn log_density(&self, u: &[f64]) -> f64 {
        let x = DVector::from_column_slice(u);
        let r = &self.response - &self.design * x;
        -r.norm_squared() / (2.0 * self.sigma2)
    }

    fn grad_log_density(&self, u: &[f64]) -> DVector<f64> {
        let x = DVector::from_column_slice(u);
        (&self.design_t_y - &self.gram * x) / self.sigma2
    }

    fn smooth_terms(&self, u: &[f64], _huber_width: f64) -> SmoothTerms {
        SmoothTerms {
            value: self.log_density(u),
            grad: self.grad_log_density(u),
            hess: -&self.gram / self.sigma2,
        }
    }

    fn gaussian_form(&self) -> Option<GaussianForm> {
        let chol = self.gram.clone().cholesky()?;
        Some(GaussianForm {
            mean: chol.solve(&self.design_t_y),
            precision: &self.gram / self.sigma2,
        })
    }
}

/// `log q = log prior + log likelihood`, the normalizing evidence dropped.
pub struct BayesPosterior {
    prior: Box<dyn TargetDensity>,
    likelihood: Box<dyn TargetDensity>,
}

impl BayesPosterior {
    pub fn new(prior: Box<dyn TargetDensity>, likelihood: Box<dyn TargetDensity>) -> Result<Self> {
        if prior.dim() != likelihood.dim() {
            return Err(Error::DimensionMismatch {
                what: "likelihood vs prior",
                expected: prior.dim(),
                found: likelihood.dim(),
            });
        }
        Ok(Self { prior, likelihood })
    }

    pub fn prior(&self) -> &dyn TargetDensity {
        self.prior.as_ref()
    }

    pub fn likelihood(&self) -> &dyn TargetDensity {
        self.likelihood.as_ref()
    }
}

impl TargetDensity for BayesPosterior {
    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn log_density(&self, u: &[f64]) -> f64 {
        self.prior.log_density(u) + self.likelihood.log_density(u)
    }

    fn grad_log_density(&self, u: &[f64]) -> DVector<f64> {
        self.prior.grad_log_density(u) + self.likelihood.grad_log_density(u)
    }

    fn smooth_terms(&self, u: &[f64], huber_width: f64) -> SmoothTerms {
        let a = self.prior.smooth_terms(u, huber_width);
        let b = self.likelihood.smooth_terms(u, huber_width);
        SmoothTerms {
            value: a.value + b.value,
            grad: a.grad + b.grad,
            hess: a.hess + b.hess,
        }
    }

    fn log_concave(&self) -> bool {
        self.prior.log_concave() && self.likelihood.log_concave()
    }

    fn gaussian_form(&self) -> Option<GaussianForm> {
        let a = self.prior.gaussian_form()?;
        let b = self.likelihood.gaussian_form()?;
        let precision = &a.precision + &b.precision;
        let rhs = &a.precision * &a.mean + &b.precision * &b.mean;
        let mean = precision.clone().cholesky()?.solve(&rhs);
        Some(GaussianForm { mean, precision })
    }
}

/// Bayesian LASSO posterior: Laplace(`rate`) prior on the coefficients and a
/// Gaussian likelihood with fixed noise variance `sigma2`.
pub fn bayes_lasso_posterior(
    response: DVector<f64>,
    design: DMatrix<f64>,
    rate: f64,
    sigma2: f64,
) -> Result<BayesPosterior> {
    let likelihood = LinearGaussianLikelihood::new(response, design, sigma2)?;
    let prior = LaplacePrior::new(rate, likelihood.dim())?;
    BayesPosterior::new(Box::new(prior), Box::new(likelihood))
}

//! The p-update: proximal operator of `-log q`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::density::TargetDensity;
use crate::error::{Error, Result};

/// Settings of the damped Newton solver used for non-Gaussian targets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iters: usize,
    pub huber_width: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iters: 100,
            huber_width: 1e-6,
        }
    }
}

/// Solves `argmin_p -log q(p) + rho/2 |v - p|^2 + gamma'(p - v)`.
pub enum Prox {
    /// `(P + rho I) p = P mu + rho v - gamma`.
    Gaussian {
        factor: Cholesky<f64, Dyn>,
        shift: DVector<f64>,
    },
    Newton(NewtonOptions),
}

impl Prox {
    pub fn new(target: &dyn TargetDensity, rho: f64, opts: NewtonOptions) -> Result<Self> {
        match target.gaussian_form() {
            Some(g) => {
                let n = g.mean.len();
                let shift = &g.precision * &g.mean;
                let sys = g.precision + DMatrix::identity(n, n) * rho;
                let factor = sys.cholesky().ok_or(Error::NotPositiveDefinite)?;
                Ok(Prox::Gaussian { factor, shift })
            }
            None => Ok(Prox::Newton(opts)),
        }
    }

    /// Returns `None` when the inner Newton iteration does not reach its tolerance.
    pub fn solve(
        &self,
        target: &dyn TargetDensity,
        v: &DVector<f64>,
        gamma: &DVector<f64>,
        rho: f64,
        warm: &DVector<f64>,
    ) -> Option<DVector<f64>> {
        match self {
            Prox::Gaussian { factor, shift } => Some(factor.solve(&(shift + v * rho - gamma))),
            Prox::Newton(opts) => newton(target, v, gamma, rho, warm, opts),
        }
    }
}

fn newton(
    target: &dyn TargetDensity,
    v: &DVector<f64>,
    gamma: &DVector<f64>,
    rho: f64,
    warm: &DVector<f64>,
    opts: &NewtonOptions,
) -> Option<DVector<f64>> {
    let cost = |p: &DVector<f64>, logq: f64| {
        let r = p - v;
        -logq + 0.5 * rho * r.norm_squared() + gamma.dot(&r)
    };
    let mut p = warm.clone();
    let mut terms = target.smooth_terms(p.as_slice(), opts.huber_width);
    for _ in 0..opts.max_iters {
        let grad = -&terms.grad + (&p - v) * rho + gamma;
        let scale = 1.0 + terms.grad.amax() + rho * p.amax();
        if grad.norm() <= opts.tol * scale {
            return Some(p);
        }
        let mut hess = -&terms.hess;
        for d in 0..p.len() {
            hess[(d, d)] += rho;
        }
        let step = match hess.cholesky() {
            Some(c) => -c.solve(&grad),
            None => -&grad / rho,
        };
        let f0 = cost(&p, terms.value);
        let slope = grad.dot(&step);
        if -slope <= 1e-13 * (1.0 + f0.abs()) {
            // Predicted decrease is below the resolution of the cost, so the
            // line search cannot judge it; the full step is safe this close.
            p += step;
            terms = target.smooth_terms(p.as_slice(), opts.huber_width);
            continue;
        }
        let mut t = 1.0;
        loop {
            let cand = &p + &step * t;
            let cand_terms = target.smooth_terms(cand.as_slice(), opts.huber_width);
            let f = cost(&cand, cand_terms.value);
            if f <= f0 + 1e-4 * t * slope || t < 1e-12 {
                if t < 1e-12 && !(f <= f0) {
                    // No descent left at rounding level.
                    return if grad.norm() <= 1e-6 * scale { Some(p) } else { None };
                }
                p = cand;
                terms = cand_terms;
                break;
            }
            t *= 0.5;
        }
    }
    let grad = -&terms.grad + (&p - v) * rho + gamma;
    let scale = 1.0 + terms.grad.amax() + rho * p.amax();
    (grad.norm() <= opts.tol * scale).then_some(p)
}

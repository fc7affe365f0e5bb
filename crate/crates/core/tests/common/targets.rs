//! The built-in densities, instantiated on fixed random data.

use nalgebra::{DMatrix, DVector};
use otmap::density::{
    bayes_lasso_posterior, BayesPosterior, GaussianTarget, LaplacePrior, LinearGaussianLikelihood, TargetDensity,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn targets() -> Vec<(&'static str, Box<dyn TargetDensity>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let a = DMatrix::from_fn(3, 3, |_, _| rng.random::<f64>() - 0.5);
    let cov = &a * a.transpose() + DMatrix::identity(3, 3) * 0.5;
    let design = DMatrix::from_fn(12, 3, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let response = DVector::from_fn(12, |_, _| rng.random::<f64>() * 4.0 - 2.0);
    vec![
        ("standard gaussian", Box::new(GaussianTarget::standard(3).unwrap())),
        (
            "correlated gaussian",
            Box::new(GaussianTarget::new(DVector::from_vec(vec![0.5, -1.0, 2.0]), cov).unwrap()),
        ),
        ("laplace", Box::new(LaplacePrior::new(1.7, 3).unwrap())),
        (
            "likelihood",
            Box::new(LinearGaussianLikelihood::new(response.clone(), design.clone(), 0.8).unwrap()),
        ),
        (
            "lasso posterior",
            Box::new(bayes_lasso_posterior(response.clone(), design.clone(), 2.5, 0.8).unwrap()),
        ),
        (
            "gaussian-prior posterior",
            Box::new(
                BayesPosterior::new(
                    Box::new(GaussianTarget::standard(3).unwrap()),
                    Box::new(LinearGaussianLikelihood::new(response, design, 1.3).unwrap()),
                )
                .unwrap(),
            ),
        ),
    ]
}

/// Points whose coordinates stay away from the Laplace kink at zero.
pub fn away_from_kink(v: Vec<f64>) -> Vec<f64> {
    v.into_iter()
        .map(|x| if x.abs() < 1e-2 { x.signum() * 1e-2 + x } else { x })
        .collect()
}

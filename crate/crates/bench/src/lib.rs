//! Shared fixtures for the criterion benches.

use otmap::apps::{sample_source, SourceKind};
use otmap::{Basis, GaussianTarget, Reduction, Samples, SolverConfig, Structure, UnivariateFamily};

/// Laplace source, standard Gaussian target and a Hermite basis.
pub fn laplace_problem(n: usize, dim: usize, structure: Structure, order: usize) -> (Samples, GaussianTarget, Basis) {
    let xs = sample_source(&SourceKind::Laplace { rate: 1.0, dim }, n, 21).expect("valid source");
    let q = GaussianTarget::standard(dim).expect("positive dimension");
    let basis = Basis::build(structure, dim, order, UnivariateFamily::Hermite).expect("basis under the cap");
    (xs, q, basis)
}

/// A fixed iteration budget so timings compare equal work.
pub fn fixed_budget(iters: usize, workers: usize, reduction: Reduction) -> SolverConfig {
    SolverConfig {
        max_iters: iters,
        // Unreachable tolerances keep every run at the full budget.
        tol_primal: 1e-300,
        tol_dual: 1e-300,
        workers,
        reduction,
        ..Default::default()
    }
}

//! Consensus ADMM for the sample-based KL push-forward problem.
//!
//! Each training sample carries its own copy of the map variables; the
//! consensus weights `B` tie them together. Per-sample updates run in parallel
//! over contiguous shards and the B-update is the only synchronisation point.

pub mod dense;
pub mod kr;
mod prox;

use log::{debug, warn};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{Basis, Structure};
use crate::density::TargetDensity;
use crate::error::{Error, Result};
use crate::map::TransportMap;
use crate::samples::Samples;

pub use dense::{fit_dense, DenseSample, DenseState};
pub use kr::{fit_kr_stage, KrSample, KrState};
pub use prox::{NewtonOptions, Prox};

/// How shard partial sums are combined in the B-update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    /// Sum per-shard partials in shard order. Deterministic for a fixed worker count.
    #[default]
    Shard,
    /// Sum per-sample terms in global sample order. Identical for every worker count.
    Strict,
}

impl std::str::FromStr for Reduction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "shard" => Ok(Reduction::Shard),
            "strict" => Ok(Reduction::Strict),
            other => Err(Error::invalid(format!(
                "unknown reduction mode `{other}` (expected shard or strict)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Augmented Lagrangian penalty.
    pub rho: f64,
    pub max_iters: usize,
    pub tol_primal: f64,
    pub tol_dual: f64,
    /// Inner p-update tolerance on the gradient norm (relative to the problem scale).
    pub newton_tol: f64,
    pub newton_max_iters: usize,
    /// Width of the Huber smoothing applied to non-smooth log densities.
    pub huber_width: f64,
    /// Eigenvalue floor used when projecting the initial Jacobian blocks to SPD.
    pub init_floor: f64,
    pub workers: usize,
    pub reduction: Reduction,
    /// When set, a triangular map that fails the post-fit monotonicity check on
    /// its training samples is projected with this margin.
    pub projection_margin: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            max_iters: 5000,
            tol_primal: 1e-5,
            tol_dual: 1e-5,
            newton_tol: 1e-10,
            newton_max_iters: 100,
            huber_width: 1e-6,
            init_floor: 1e-6,
            workers: 1,
            reduction: Reduction::Shard,
            projection_margin: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rho", self.rho),
            ("tol_primal", self.tol_primal),
            ("tol_dual", self.tol_dual),
            ("newton_tol", self.newton_tol),
            ("huber_width", self.huber_width),
            ("init_floor", self.init_floor),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.workers == 0 {
            return Err(Error::invalid("workers must be at least 1"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if let Some(m) = self.projection_margin {
            if !(m > 0.0) {
                return Err(Error::invalid(format!("projection_margin must be positive, got {m}")));
            }
        }
        Ok(())
    }

    pub fn newton(&self) -> NewtonOptions {
        NewtonOptions {
            tol: self.newton_tol,
            max_iters: self.newton_max_iters,
            huber_width: self.huber_width,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub objective: f64,
    pub primal_res: f64,
    pub dual_res: f64,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub map: TransportMap,
    pub converged: bool,
    /// Iterations run (not the index of the returned iterate).
    pub iterations: usize,
    /// Diagnostics of the returned iterate.
    pub last: IterationRecord,
    pub history: Vec<IterationRecord>,
    /// Number of inner p-updates that kept their previous value.
    pub prox_failures: usize,
}

/// Residual sums reported by one sample.
pub(crate) const ST_P: usize = 0;
pub(crate) const ST_JAC: usize = 1;
pub(crate) const ST_W: usize = 2;
pub(crate) const ST_DIAG: usize = 3;
pub(crate) const ST_OBJ: usize = 4;
pub(crate) const ST_FAIL: usize = 5;
pub(crate) const N_STATS: usize = 6;
pub(crate) type Stats = [f64; N_STATS];

/// Quantities shared by every per-sample update of one iteration.
pub(crate) struct PassCtx<'a> {
    pub rho: f64,
    pub theta: f64,
    pub prox: &'a Prox,
    pub target: &'a dyn TargetDensity,
    pub supports: &'a [Vec<usize>],
}

/// Per-sample ADMM variables.
pub(crate) trait Block: Send {
    /// Primal and multiplier updates for the new consensus `b`, then refreshes the
    /// residual statistics and the B-update contribution.
    fn step(&mut self, b: &DMatrix<f64>, ctx: &PassCtx) -> Result<()>;
    /// Refreshes the B-update contribution from the current variables.
    fn refresh(&mut self, ctx: &PassCtx);
    fn contribution(&self) -> &DMatrix<f64>;
    fn stats(&self) -> &Stats;
}

/// `B J` restricted to the nonzero pattern of `J`: column `d` sums `B[:, k] J[k, d]`
/// over basis terms that depend on `x_d`.
pub(crate) fn times_jacobian(b: &DMatrix<f64>, jac: &DMatrix<f64>, supports: &[Vec<usize>]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(b.nrows(), jac.ncols());
    for (d, supp) in supports.iter().enumerate() {
        let mut col = out.column_mut(d);
        for &k in supp {
            col.axpy(jac[(k, d)], &b.column(k), 1.0);
        }
    }
    out
}

/// Adds `c J'` to `m`, with `c` a `D x D` matrix whose column `d` pairs with `J[:, d]`.
pub(crate) fn add_times_jacobian_t(
    m: &mut DMatrix<f64>,
    c: &DMatrix<f64>,
    jac: &DMatrix<f64>,
    supports: &[Vec<usize>],
) {
    for (d, supp) in supports.iter().enumerate() {
        let cd = c.column(d);
        for &k in supp {
            m.column_mut(k).axpy(jac[(k, d)], &cd, 1.0);
        }
    }
}

/// `rho (I + 1/N sum_i [(1 + 2 theta / rho) Phi_i Phi_i' + J_i J_i'])`, the
/// Hessian of the B-subproblem. Summed in sample order.
pub fn static_matrix<'a>(
    k: usize,
    terms: impl IntoIterator<Item = (&'a DVector<f64>, &'a DMatrix<f64>)>,
    theta: f64,
    rho: f64,
) -> DMatrix<f64> {
    let c = 1.0 + 2.0 * theta / rho;
    let mut acc = DMatrix::zeros(k, k);
    let mut n = 0usize;
    for (phi, jac) in terms {
        acc.ger(c, phi, phi, 1.0);
        acc.gemm(1.0, jac, &jac.transpose(), 1.0);
        n += 1;
    }
    let mut l = acc * (rho / n.max(1) as f64);
    for i in 0..k {
        l[(i, i)] += rho;
    }
    l
}

/// Solves `B L = M` row by row, where row `d` of `B` may only use its first
/// `row_sizes[d]` columns. For a dense structure every row uses all of them.
pub struct ConsensusSolver {
    row_sizes: Vec<usize>,
    factors: Vec<(usize, Cholesky<f64, Dyn>)>,
}

impl ConsensusSolver {
    pub fn new(l: &DMatrix<f64>, row_sizes: &[usize]) -> Result<Self> {
        let mut sizes: Vec<usize> = row_sizes.to_vec();
        sizes.sort_unstable();
        sizes.dedup();
        let mut factors = Vec::with_capacity(sizes.len());
        for kd in sizes {
            let block = l.view((0, 0), (kd, kd)).into_owned();
            let chol = block.cholesky().ok_or(Error::DegenerateBasis)?;
            factors.push((kd, chol));
        }
        Ok(Self {
            row_sizes: row_sizes.to_vec(),
            factors,
        })
    }

    pub fn solve(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(m.nrows(), m.ncols());
        for (kd, chol) in &self.factors {
            let rows: Vec<usize> = (0..self.row_sizes.len())
                .filter(|&r| self.row_sizes[r] == *kd)
                .collect();
            let mut rhs = DMatrix::zeros(*kd, rows.len());
            for (j, &r) in rows.iter().enumerate() {
                for k in 0..*kd {
                    rhs[(k, j)] = m[(r, k)];
                }
            }
            chol.solve_mut(&mut rhs);
            for (j, &r) in rows.iter().enumerate() {
                for k in 0..*kd {
                    b[(r, k)] = rhs[(k, j)];
                }
            }
        }
        b
    }
}

/// `max(rms(p - B Phi), rms(Jacobian block - B J), rms(W - B), rms(diagonal block))`.
pub(crate) fn primal_residual(st: &Stats, n: usize, d: usize, k: usize, has_diag: bool) -> f64 {
    let n = n as f64;
    let d = d as f64;
    let mut r = (st[ST_P] / (n * d)).sqrt();
    r = r.max((st[ST_JAC] / (n * d * d)).sqrt());
    r = r.max((st[ST_W] / (n * d * k as f64)).sqrt());
    if has_diag {
        r = r.max((st[ST_DIAG] / (n * d)).sqrt());
    }
    r
}

pub(crate) fn dual_residual(b_new: &DMatrix<f64>, b_old: &DMatrix<f64>, rho: f64) -> f64 {
    rho * ((b_new - b_old).norm_squared() / b_new.len() as f64).sqrt()
}

pub(crate) fn build_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))
}

/// Runs the per-sample half of an iteration over shards and reduces the
/// B-update right-hand side and the residual statistics.
pub(crate) struct Engine<S: Block> {
    pub samples: Vec<S>,
    pool: rayon::ThreadPool,
    workers: usize,
    reduction: Reduction,
}

impl<S: Block> Engine<S> {
    pub fn new(samples: Vec<S>, workers: usize, reduction: Reduction) -> Result<Self> {
        Ok(Self {
            samples,
            pool: build_pool(workers)?,
            workers,
            reduction,
        })
    }

    fn chunk(&self) -> usize {
        self.samples.len().div_ceil(self.workers).max(1)
    }

    /// `b = None` refreshes contributions without updating (initial state).
    pub fn pass(&mut self, b: Option<&DMatrix<f64>>, ctx: &PassCtx) -> Result<(DMatrix<f64>, Stats)> {
        let chunk = self.chunk();
        let strict = self.reduction == Reduction::Strict;
        let shape = self.samples[0].contribution().shape();
        let partials: Vec<Result<(DMatrix<f64>, Stats)>> = self.pool.install(|| {
            self.samples
                .par_chunks_mut(chunk)
                .map(|shard| {
                    let mut m = DMatrix::zeros(shape.0, shape.1);
                    let mut st = [0.0; N_STATS];
                    for s in shard.iter_mut() {
                        match b {
                            Some(b) => s.step(b, ctx)?,
                            None => s.refresh(ctx),
                        }
                        if !strict {
                            m += s.contribution();
                            add_stats(&mut st, s.stats());
                        }
                    }
                    Ok((m, st))
                })
                .collect()
        });
        let mut m = DMatrix::zeros(shape.0, shape.1);
        let mut st = [0.0; N_STATS];
        if strict {
            for p in partials {
                p?;
            }
            for s in &self.samples {
                m += s.contribution();
                add_stats(&mut st, s.stats());
            }
        } else {
            for p in partials {
                let (pm, ps) = p?;
                m += pm;
                add_stats(&mut st, &ps);
            }
        }
        m /= self.samples.len() as f64;
        Ok((m, st))
    }
}

fn add_stats(acc: &mut Stats, s: &Stats) {
    for (a, v) in acc.iter_mut().zip(s) {
        *a += v;
    }
}

pub(crate) fn check_inputs(
    basis: &Basis,
    samples: &Samples,
    target: &dyn TargetDensity,
    config: &SolverConfig,
) -> Result<()> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("training samples"));
    }
    if samples.dim() != basis.dim() {
        return Err(Error::DimensionMismatch {
            what: "training samples",
            expected: basis.dim(),
            found: samples.dim(),
        });
    }
    if target.dim() != basis.dim() {
        return Err(Error::DimensionMismatch {
            what: "target dimension",
            expected: basis.dim(),
            found: target.dim(),
        });
    }
    if !samples.is_finite() {
        return Err(Error::NonFinite {
            what: "training samples",
        });
    }
    if basis.set().order() == 0 {
        return Err(Error::invalid("fitting requires basis order of at least 1"));
    }
    if !target.log_concave() {
        warn!("target is not declared log-concave; the fit problem may be non-convex");
    }
    Ok(())
}

/// Outer iteration shared by both solvers. `has_diag` marks the KR splitting,
/// whose residual includes the diagonal constraint.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run<S: Block>(
    engine: &mut Engine<S>,
    solver: &ConsensusSolver,
    mut b: DMatrix<f64>,
    ctx: &PassCtx,
    config: &SolverConfig,
    basis: &Basis,
    samples: &Samples,
    has_diag: bool,
) -> Result<FitResult> {
    let (n, d, k) = (samples.len(), basis.dim(), basis.len());
    let (mut m, _) = engine.pass(None, ctx)?;
    let mut history = Vec::new();
    let mut best: Option<(f64, DMatrix<f64>, IterationRecord)> = None;
    let mut failures = 0usize;
    for iter in 1..=config.max_iters {
        let b_new = solver.solve(&m);
        if b_new.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "consensus weights",
            });
        }
        let (m_next, st) = engine.pass(Some(&b_new), ctx)?;
        failures += st[ST_FAIL] as usize;
        let rec = IterationRecord {
            iter,
            objective: st[ST_OBJ] / n as f64,
            primal_res: primal_residual(&st, n, d, k, has_diag),
            dual_res: dual_residual(&b_new, &b, ctx.rho),
        };
        history.push(rec);
        if iter % 500 == 0 {
            debug!(
                "iter {iter}: objective {:.6e} primal {:.3e} dual {:.3e}",
                rec.objective, rec.primal_res, rec.dual_res
            );
        }
        b = b_new;
        m = m_next;
        if rec.primal_res <= config.tol_primal && rec.dual_res <= config.tol_dual {
            return Ok(FitResult {
                map: finish(basis, b, samples, config)?,
                converged: true,
                iterations: iter,
                last: rec,
                history,
                prox_failures: failures,
            });
        }
        let score = (rec.primal_res / config.tol_primal).max(rec.dual_res / config.tol_dual);
        if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
            best = Some((score, b.clone(), rec));
        }
    }
    let (_, b_best, rec) = best.expect("at least one iteration");
    warn!(
        "ADMM stopped at {} iterations without meeting tolerances (primal {:.3e}, dual {:.3e})",
        config.max_iters, rec.primal_res, rec.dual_res
    );
    Ok(FitResult {
        map: finish(basis, b_best, samples, config)?,
        converged: false,
        iterations: config.max_iters,
        last: rec,
        history,
        prox_failures: failures,
    })
}

/// Wraps fitted weights into a map and runs the post-fit monotonicity check.
fn finish(basis: &Basis, b: DMatrix<f64>, samples: &Samples, config: &SolverConfig) -> Result<TransportMap> {
    let mut map = TransportMap::new(basis.clone(), b)?;
    let report = map.validate_monotone(samples);
    if !report.ok {
        match (config.projection_margin, map.structure().is_triangular()) {
            (Some(margin), true) => {
                warn!(
                    "fitted map is not monotone at {} training points; projecting",
                    report.violations.len()
                );
                map = map.project_monotone(samples, margin)?;
            }
            _ => warn!(
                "fitted map is not monotone at {} training points",
                report.violations.len()
            ),
        }
    }
    Ok(map)
}

/// Fits a single map, dispatching on the basis structure. Triangular bases use
/// the KR solver without transport cost.
pub fn fit_map(
    samples: &Samples,
    target: &dyn TargetDensity,
    basis: &Basis,
    config: &SolverConfig,
) -> Result<FitResult> {
    match basis.set().structure() {
        Structure::Dense => fit_dense(samples, target, basis, config),
        Structure::Kr | Structure::Krsv => fit_kr_stage(samples, target, basis, 0.0, config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn consensus_solver_dense_matches_inverse() {
        let l = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.0, 4.0]);
        let b = ConsensusSolver::new(&l, &[3, 3]).unwrap().solve(&m);
        let expect = &m * l.clone().try_inverse().unwrap();
        assert!((b - expect).amax() < 1e-14);
    }

    #[test]
    fn consensus_solver_triangular_rows() {
        let l = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.0, 4.0]);
        let b = ConsensusSolver::new(&l, &[2, 3]).unwrap().solve(&m);
        assert_eq!(b[(0, 2)], 0.0);
        // Gradient B L - M vanishes on the free entries of each row.
        let g = &b * &l - &m;
        assert!(g[(0, 0)].abs() < 1e-14 && g[(0, 1)].abs() < 1e-14);
        assert!(g.row(1).amax() < 1e-14);
    }

    #[test]
    fn reduction_parse() {
        assert_eq!("strict".parse::<Reduction>().unwrap(), Reduction::Strict);
        assert!("x".parse::<Reduction>().is_err());
    }
}

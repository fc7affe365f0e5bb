//! Consensus ADMM for dense maps: the log-determinant barrier acts on a
//! per-sample SPD copy `Z_i` of the Jacobian `B J_i`.

use nalgebra::{DMatrix, DVector};

use super::{
    add_times_jacobian_t, check_inputs, dual_residual, primal_residual, run, static_matrix, times_jacobian, Block,
    ConsensusSolver, Engine, FitResult, NewtonOptions, PassCtx, Prox, SolverConfig, Stats, N_STATS, ST_FAIL, ST_JAC,
    ST_OBJ, ST_P, ST_W,
};
use crate::basis::{Basis, Structure};
use crate::density::TargetDensity;
use crate::error::{Error, Result};
use crate::map::identity_weights;
use crate::samples::Samples;

/// `W_i = B - alpha_i / rho`.
pub fn w_update(b: &DMatrix<f64>, alpha: &DMatrix<f64>, rho: f64) -> DMatrix<f64> {
    b - alpha / rho
}

/// Positive definite solution of `rho Z - Z^{-1} = sym(m)`, with `m = rho B J_i - Lambda_i`.
pub fn z_update(m: &DMatrix<f64>, rho: f64) -> Option<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.try_symmetric_eigen(f64::EPSILON, 10_000)?;
    let roots = eig.eigenvalues.map(|nu| positive_root(nu, rho));
    let q = &eig.eigenvectors;
    Some(q * DMatrix::from_diagonal(&roots) * q.transpose())
}

/// Positive root of `rho z^2 - a z - 1 = 0`, i.e. `(a + sqrt(a^2 + 4 rho)) / (2 rho)`,
/// evaluated without cancellation for negative `a`.
pub fn positive_root(a: f64, rho: f64) -> f64 {
    let s = (a * a + 4.0 * rho).sqrt();
    if a >= 0.0 {
        (a + s) / (2.0 * rho)
    } else {
        2.0 / (s - a)
    }
}

/// Symmetric part of `m` with eigenvalues floored at `floor`.
pub(crate) fn spd_floor(m: &DMatrix<f64>, floor: f64) -> Option<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.try_symmetric_eigen(f64::EPSILON, 10_000)?;
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    let q = &eig.eigenvectors;
    Some(q * DMatrix::from_diagonal(&vals) * q.transpose())
}

/// Per-sample variables of the dense solver.
#[derive(Clone, Debug)]
pub struct DenseSample {
    pub index: usize,
    pub phi: DVector<f64>,
    /// `K x D` basis Jacobian at the sample.
    pub jac: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub alpha: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub p: DVector<f64>,
    pub gamma: DVector<f64>,
    contrib: DMatrix<f64>,
    stats: Stats,
}

impl DenseSample {
    /// Variables consistent with `b`, multipliers zero. `Z` is `B J` projected to SPD.
    pub fn init(index: usize, basis: &Basis, x: &[f64], b: &DMatrix<f64>, floor: f64) -> Result<Self> {
        let (phi, jac) = basis.eval_with_jacobian(x);
        let bj = b * &jac;
        let z = spd_floor(&bj, floor).ok_or(Error::Eigen { sample: index })?;
        let (d, k) = b.shape();
        Ok(Self {
            index,
            p: b * &phi,
            phi,
            jac,
            w: b.clone(),
            alpha: DMatrix::zeros(d, k),
            z,
            lambda: DMatrix::zeros(d, d),
            gamma: DVector::zeros(d),
            contrib: DMatrix::zeros(d, k),
            stats: [0.0; N_STATS],
        })
    }

    pub fn update_w(&mut self, b: &DMatrix<f64>, rho: f64) {
        self.w = w_update(b, &self.alpha, rho);
    }

    pub fn update_z(&mut self, bj: &DMatrix<f64>, rho: f64) -> Result<()> {
        let m = bj * rho - &self.lambda;
        self.z = z_update(&m, rho).ok_or(Error::Eigen { sample: self.index })?;
        Ok(())
    }

    /// Returns false when the inner solver failed and `p` was kept.
    pub fn update_p(&mut self, bphi: &DVector<f64>, rho: f64, prox: &Prox, target: &dyn TargetDensity) -> bool {
        match prox.solve(target, bphi, &self.gamma, rho, &self.p) {
            Some(p) => {
                self.p = p;
                true
            }
            None => false,
        }
    }

    /// Dual ascent; returns squared residual norms `(p, Z, W)`.
    pub fn update_multipliers(
        &mut self,
        b: &DMatrix<f64>,
        bphi: &DVector<f64>,
        bj: &DMatrix<f64>,
        rho: f64,
    ) -> (f64, f64, f64) {
        let rp = &self.p - bphi;
        let rz = &self.z - bj;
        let rw = &self.w - b;
        self.gamma += &rp * rho;
        self.lambda += &rz * rho;
        self.alpha += &rw * rho;
        (rp.norm_squared(), rz.norm_squared(), rw.norm_squared())
    }

    /// `rho W + alpha + (rho p + gamma) Phi' + (rho Z + Lambda) J'`.
    pub fn contribution_into(&self, out: &mut DMatrix<f64>, rho: f64, supports: &[Vec<usize>]) {
        out.copy_from(&self.w);
        *out *= rho;
        *out += &self.alpha;
        let a = &self.p * rho + &self.gamma;
        out.ger(1.0, &a, &self.phi, 1.0);
        let c = &self.z * rho + &self.lambda;
        add_times_jacobian_t(out, &c, &self.jac, supports);
    }
}

impl Block for DenseSample {
    fn step(&mut self, b: &DMatrix<f64>, ctx: &PassCtx) -> Result<()> {
        let bphi = b * &self.phi;
        let bj = times_jacobian(b, &self.jac, ctx.supports);
        self.update_w(b, ctx.rho);
        self.update_z(&bj, ctx.rho)?;
        let ok = self.update_p(&bphi, ctx.rho, ctx.prox, ctx.target);
        let (sp, sz, sw) = self.update_multipliers(b, &bphi, &bj, ctx.rho);
        let det = bj.determinant();
        let logdet = if det > 0.0 { det.ln() } else { f64::NEG_INFINITY };
        self.stats = [0.0; N_STATS];
        self.stats[ST_P] = sp;
        self.stats[ST_JAC] = sz;
        self.stats[ST_W] = sw;
        self.stats[ST_OBJ] = -ctx.target.log_density(bphi.as_slice()) - logdet;
        self.stats[ST_FAIL] = if ok { 0.0 } else { 1.0 };
        self.refresh(ctx);
        Ok(())
    }

    fn refresh(&mut self, ctx: &PassCtx) {
        let mut out = std::mem::replace(&mut self.contrib, DMatrix::zeros(0, 0));
        self.contribution_into(&mut out, ctx.rho, ctx.supports);
        self.contrib = out;
    }

    fn contribution(&self) -> &DMatrix<f64> {
        &self.contrib
    }

    fn stats(&self) -> &Stats {
        &self.stats
    }
}

/// Full dense ADMM state with block-by-block updates, mirroring one iteration of
/// [`fit_dense`].
pub struct DenseState {
    pub basis: Basis,
    pub rho: f64,
    pub b: DMatrix<f64>,
    pub b_prev: DMatrix<f64>,
    pub samples: Vec<DenseSample>,
    solver: ConsensusSolver,
    l: DMatrix<f64>,
}

impl DenseState {
    /// Identity-initialised state.
    pub fn new(basis: &Basis, xs: &Samples, rho: f64, init_floor: f64) -> Result<Self> {
        let b = identity_weights(basis)?;
        let samples = xs
            .rows()
            .enumerate()
            .map(|(i, x)| DenseSample::init(i, basis, x, &b, init_floor))
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(basis.clone(), rho, b, samples)
    }

    /// State with caller-supplied variables, for inspecting individual updates.
    pub fn from_parts(basis: Basis, rho: f64, b: DMatrix<f64>, samples: Vec<DenseSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("training samples"));
        }
        let l = static_matrix(basis.len(), samples.iter().map(|s| (&s.phi, &s.jac)), 0.0, rho);
        let solver = ConsensusSolver::new(&l, basis.set().row_sizes())?;
        Ok(Self {
            basis,
            rho,
            b_prev: b.clone(),
            b,
            samples,
            solver,
            l,
        })
    }

    /// The B-subproblem Hessian `rho (I + 1/N sum (Phi Phi' + J J'))`.
    pub fn static_matrix(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// Right-hand side `M` of `B L = M` from the current per-sample variables.
    pub fn rhs(&self) -> DMatrix<f64> {
        let supports = supports(&self.basis);
        let mut m = DMatrix::zeros(self.b.nrows(), self.b.ncols());
        let mut c = m.clone();
        for s in &self.samples {
            s.contribution_into(&mut c, self.rho, &supports);
            m += &c;
        }
        m / self.samples.len() as f64
    }

    pub fn update_b(&mut self) {
        let b = self.solver.solve(&self.rhs());
        self.b_prev = std::mem::replace(&mut self.b, b);
    }

    pub fn update_w(&mut self) {
        for s in &mut self.samples {
            s.update_w(&self.b, self.rho);
        }
    }

    pub fn update_z(&mut self) -> Result<()> {
        for s in &mut self.samples {
            let bj = &self.b * &s.jac;
            s.update_z(&bj, self.rho)?;
        }
        Ok(())
    }

    /// Returns the number of samples whose inner solve failed.
    pub fn update_p(&mut self, target: &dyn TargetDensity, newton: NewtonOptions) -> Result<usize> {
        let prox = Prox::new(target, self.rho, newton)?;
        let mut failed = 0;
        for s in &mut self.samples {
            let bphi = &self.b * &s.phi;
            if !s.update_p(&bphi, self.rho, &prox, target) {
                failed += 1;
            }
        }
        Ok(failed)
    }

    pub fn update_multipliers(&mut self) {
        for s in &mut self.samples {
            let bphi = &self.b * &s.phi;
            let bj = &self.b * &s.jac;
            s.update_multipliers(&self.b, &bphi, &bj, self.rho);
        }
    }

    /// `(primal, dual)` residuals of the current state.
    pub fn residuals(&self) -> (f64, f64) {
        let mut st = [0.0; N_STATS];
        for s in &self.samples {
            let bphi = &self.b * &s.phi;
            let bj = &self.b * &s.jac;
            st[ST_P] += (&s.p - bphi).norm_squared();
            st[ST_JAC] += (&s.z - bj).norm_squared();
            st[ST_W] += (&s.w - &self.b).norm_squared();
        }
        let (d, k) = self.b.shape();
        (
            primal_residual(&st, self.samples.len(), d, k, false),
            dual_residual(&self.b, &self.b_prev, self.rho),
        )
    }

    /// One full iteration: B, W, Z, p, multipliers.
    pub fn iterate(&mut self, target: &dyn TargetDensity, newton: NewtonOptions) -> Result<usize> {
        self.update_b();
        self.update_w();
        self.update_z()?;
        let failed = self.update_p(target, newton)?;
        self.update_multipliers();
        Ok(failed)
    }
}

pub(crate) fn supports(basis: &Basis) -> Vec<Vec<usize>> {
    (0..basis.dim()).map(|a| basis.set().support(a).to_vec()).collect()
}

/// Fits a dense map minimising `1/N sum_i [-log q(S(x_i)) - log det J_S(x_i)]`.
pub fn fit_dense(
    samples: &Samples,
    target: &dyn TargetDensity,
    basis: &Basis,
    config: &SolverConfig,
) -> Result<FitResult> {
    if basis.set().structure() != Structure::Dense {
        return Err(Error::invalid(format!(
            "dense solver needs a dense basis, got {}",
            basis.set().structure()
        )));
    }
    check_inputs(basis, samples, target, config)?;
    let state = DenseState::new(basis, samples, config.rho, config.init_floor)?;
    let prox = Prox::new(target, config.rho, config.newton())?;
    let supports = supports(basis);
    let ctx = PassCtx {
        rho: config.rho,
        theta: 0.0,
        prox: &prox,
        target,
        supports: &supports,
    };
    let DenseState {
        b,
        samples: blocks,
        solver,
        ..
    } = state;
    let mut engine = Engine::new(blocks, config.workers, config.reduction)?;
    run(&mut engine, &solver, b, &ctx, config, basis, samples, false)
}

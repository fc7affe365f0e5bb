//! Consensus ADMM for triangular maps with an optional transport-cost term
//! `theta |S(x_i) - x_i|^2`. Positivity only concerns the diagonal partials
//! `dS^d/dx_d`, so the barrier acts on scalars `Z_i^d`.

use nalgebra::{DMatrix, DVector};

use super::dense::{positive_root, supports, w_update};
use super::{
    add_times_jacobian_t, check_inputs, dual_residual, primal_residual, run, static_matrix, times_jacobian, Block,
    ConsensusSolver, Engine, FitResult, NewtonOptions, PassCtx, Prox, SolverConfig, Stats, N_STATS, ST_DIAG, ST_FAIL,
    ST_JAC, ST_OBJ, ST_P, ST_W,
};
use crate::basis::Basis;
use crate::density::TargetDensity;
use crate::error::{Error, Result};
use crate::map::identity_weights;
use crate::samples::Samples;

/// Positive root of `rho Z^2 + (beta - rho y) Z - 1 = 0`.
pub fn zd_update(y: f64, beta: f64, rho: f64) -> f64 {
    positive_root(rho * y - beta, rho)
}

/// Minimiser of `lambda'(Y - v) + rho/2 |Y - v|^2 + beta (Z - Y_d) + rho/2 (Z - Y_d)^2`
/// with `v = B Phi^d`: `Y = (I - e_d e_d' / 2)(rho Z e_d + rho v + beta e_d - lambda) / rho`.
pub fn yd_update(
    zd: f64,
    bphi_d: &DVector<f64>,
    beta: f64,
    lambda_d: &DVector<f64>,
    d: usize,
    rho: f64,
) -> DVector<f64> {
    let mut y = (bphi_d * rho - lambda_d) / rho;
    y[d] += (rho * zd + beta) / rho;
    y[d] *= 0.5;
    y
}

/// Per-sample variables of the triangular solver. Column `d` of `y` and
/// `lambda` holds `Y_i^d` and `lambda_i^d`.
#[derive(Clone, Debug)]
pub struct KrSample {
    pub index: usize,
    pub x: DVector<f64>,
    pub phi: DVector<f64>,
    pub jac: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub alpha: DMatrix<f64>,
    pub zd: DVector<f64>,
    pub y: DMatrix<f64>,
    pub beta: DVector<f64>,
    pub lambda: DMatrix<f64>,
    pub p: DVector<f64>,
    pub gamma: DVector<f64>,
    contrib: DMatrix<f64>,
    stats: Stats,
}

impl KrSample {
    /// Variables consistent with `b`, multipliers zero, `Z^d` floored at `floor`.
    pub fn init(index: usize, basis: &Basis, x: &[f64], b: &DMatrix<f64>, floor: f64) -> Self {
        let (phi, jac) = basis.eval_with_jacobian(x);
        let y = b * &jac;
        let (d, k) = b.shape();
        Self {
            index,
            x: DVector::from_column_slice(x),
            p: b * &phi,
            phi,
            jac,
            w: b.clone(),
            alpha: DMatrix::zeros(d, k),
            zd: DVector::from_fn(d, |a, _| y[(a, a)].max(floor)),
            y,
            beta: DVector::zeros(d),
            lambda: DMatrix::zeros(d, d),
            gamma: DVector::zeros(d),
            contrib: DMatrix::zeros(d, k),
            stats: [0.0; N_STATS],
        }
    }

    pub fn update_w(&mut self, b: &DMatrix<f64>, rho: f64) {
        self.w = w_update(b, &self.alpha, rho);
    }

    /// Uses `Y` from the previous iteration.
    pub fn update_zd(&mut self, rho: f64) {
        for d in 0..self.zd.len() {
            self.zd[d] = zd_update(self.y[(d, d)], self.beta[d], rho);
        }
    }

    /// `bj` is `B J_i`, whose column `d` is `B Phi_i^d`.
    pub fn update_y(&mut self, bj: &DMatrix<f64>, rho: f64) {
        for d in 0..self.zd.len() {
            let col = yd_update(
                self.zd[d],
                &bj.column(d).into_owned(),
                self.beta[d],
                &self.lambda.column(d).into_owned(),
                d,
                rho,
            );
            self.y.set_column(d, &col);
        }
    }

    pub fn update_p(&mut self, bphi: &DVector<f64>, rho: f64, prox: &Prox, target: &dyn TargetDensity) -> bool {
        match prox.solve(target, bphi, &self.gamma, rho, &self.p) {
            Some(p) => {
                self.p = p;
                true
            }
            None => false,
        }
    }

    /// Dual ascent; returns squared residual norms `(p, Y, W, Z^d)`.
    pub fn update_multipliers(
        &mut self,
        b: &DMatrix<f64>,
        bphi: &DVector<f64>,
        bj: &DMatrix<f64>,
        rho: f64,
    ) -> (f64, f64, f64, f64) {
        let rp = &self.p - bphi;
        let ry = &self.y - bj;
        let rw = &self.w - b;
        let rz = DVector::from_fn(self.zd.len(), |d, _| self.zd[d] - self.y[(d, d)]);
        self.gamma += &rp * rho;
        self.lambda += &ry * rho;
        self.alpha += &rw * rho;
        self.beta += &rz * rho;
        (
            rp.norm_squared(),
            ry.norm_squared(),
            rw.norm_squared(),
            rz.norm_squared(),
        )
    }

    /// `rho W + alpha + (rho p + gamma + 2 theta x) Phi' + (rho Y + Lambda) J'`.
    pub fn contribution_into(&self, out: &mut DMatrix<f64>, rho: f64, theta: f64, supports: &[Vec<usize>]) {
        out.copy_from(&self.w);
        *out *= rho;
        *out += &self.alpha;
        let a = &self.p * rho + &self.gamma + &self.x * (2.0 * theta);
        out.ger(1.0, &a, &self.phi, 1.0);
        let c = &self.y * rho + &self.lambda;
        add_times_jacobian_t(out, &c, &self.jac, supports);
    }
}

impl Block for KrSample {
    fn step(&mut self, b: &DMatrix<f64>, ctx: &PassCtx) -> Result<()> {
        let bphi = b * &self.phi;
        let bj = times_jacobian(b, &self.jac, ctx.supports);
        self.update_w(b, ctx.rho);
        self.update_zd(ctx.rho);
        self.update_y(&bj, ctx.rho);
        let ok = self.update_p(&bphi, ctx.rho, ctx.prox, ctx.target);
        let (sp, sy, sw, sz) = self.update_multipliers(b, &bphi, &bj, ctx.rho);
        let mut obj = -ctx.target.log_density(bphi.as_slice());
        for d in 0..bj.nrows() {
            let v = bj[(d, d)];
            obj -= if v > 0.0 { v.ln() } else { f64::NEG_INFINITY };
        }
        if ctx.theta > 0.0 {
            obj += ctx.theta * (&bphi - &self.x).norm_squared();
        }
        self.stats = [0.0; N_STATS];
        self.stats[ST_P] = sp;
        self.stats[ST_JAC] = sy;
        self.stats[ST_W] = sw;
        self.stats[ST_DIAG] = sz;
        self.stats[ST_OBJ] = obj;
        self.stats[ST_FAIL] = if ok { 0.0 } else { 1.0 };
        self.refresh(ctx);
        Ok(())
    }

    fn refresh(&mut self, ctx: &PassCtx) {
        let mut out = std::mem::replace(&mut self.contrib, DMatrix::zeros(0, 0));
        self.contribution_into(&mut out, ctx.rho, ctx.theta, ctx.supports);
        self.contrib = out;
    }

    fn contribution(&self) -> &DMatrix<f64> {
        &self.contrib
    }

    fn stats(&self) -> &Stats {
        &self.stats
    }
}

/// Full triangular ADMM state with block-by-block updates, mirroring one
/// iteration of [`fit_kr_stage`].
pub struct KrState {
    pub basis: Basis,
    pub rho: f64,
    pub theta: f64,
    pub b: DMatrix<f64>,
    pub b_prev: DMatrix<f64>,
    pub samples: Vec<KrSample>,
    solver: ConsensusSolver,
    l: DMatrix<f64>,
}

impl KrState {
    pub fn new(basis: &Basis, xs: &Samples, theta: f64, rho: f64, init_floor: f64) -> Result<Self> {
        let b = identity_weights(basis)?;
        let samples = xs
            .rows()
            .enumerate()
            .map(|(i, x)| KrSample::init(i, basis, x, &b, init_floor))
            .collect();
        Self::from_parts(basis.clone(), theta, rho, b, samples)
    }

    pub fn from_parts(basis: Basis, theta: f64, rho: f64, b: DMatrix<f64>, samples: Vec<KrSample>) -> Result<Self> {
        if !basis.set().structure().is_triangular() {
            return Err(Error::UnsupportedStructure("dense"));
        }
        if samples.is_empty() {
            return Err(Error::Empty("training samples"));
        }
        let l = static_matrix(basis.len(), samples.iter().map(|s| (&s.phi, &s.jac)), theta, rho);
        let solver = ConsensusSolver::new(&l, basis.set().row_sizes())?;
        Ok(Self {
            basis,
            rho,
            theta,
            b_prev: b.clone(),
            b,
            samples,
            solver,
            l,
        })
    }

    /// `rho (I + 1/N sum [(1 + 2 theta / rho) Phi Phi' + J J'])`.
    pub fn static_matrix(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn rhs(&self) -> DMatrix<f64> {
        let supports = supports(&self.basis);
        let mut m = DMatrix::zeros(self.b.nrows(), self.b.ncols());
        let mut c = m.clone();
        for s in &self.samples {
            s.contribution_into(&mut c, self.rho, self.theta, &supports);
            m += &c;
        }
        m / self.samples.len() as f64
    }

    /// Row `d` is minimised over its first `K_d` entries; the rest stay exactly zero.
    pub fn update_b(&mut self) {
        let b = self.solver.solve(&self.rhs());
        self.b_prev = std::mem::replace(&mut self.b, b);
    }

    pub fn update_w(&mut self) {
        for s in &mut self.samples {
            s.update_w(&self.b, self.rho);
        }
    }

    pub fn update_zd(&mut self) {
        for s in &mut self.samples {
            s.update_zd(self.rho);
        }
    }

    pub fn update_y(&mut self) {
        for s in &mut self.samples {
            let bj = &self.b * &s.jac;
            s.update_y(&bj, self.rho);
        }
    }

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

    pub fn residuals(&self) -> (f64, f64) {
        let mut st = [0.0; N_STATS];
        for s in &self.samples {
            let bphi = &self.b * &s.phi;
            let bj = &self.b * &s.jac;
            st[ST_P] += (&s.p - bphi).norm_squared();
            st[ST_JAC] += (&s.y - bj).norm_squared();
            st[ST_W] += (&s.w - &self.b).norm_squared();
            st[ST_DIAG] += (0..s.zd.len()).map(|d| (s.zd[d] - s.y[(d, d)]).powi(2)).sum::<f64>();
        }
        let (d, k) = self.b.shape();
        (
            primal_residual(&st, self.samples.len(), d, k, true),
            dual_residual(&self.b, &self.b_prev, self.rho),
        )
    }

    /// One full iteration: B, W, Z^d, Y^d, p, multipliers.
    pub fn iterate(&mut self, target: &dyn TargetDensity, newton: NewtonOptions) -> Result<usize> {
        self.update_b();
        self.update_w();
        self.update_zd();
        self.update_y();
        let failed = self.update_p(target, newton)?;
        self.update_multipliers();
        Ok(failed)
    }
}

/// Fits one triangular stage minimising
/// `1/N sum_i [theta |S(x_i) - x_i|^2 - log q(S(x_i)) - sum_d log dS^d/dx_d(x_i)]`.
pub fn fit_kr_stage(
    samples: &Samples,
    target: &dyn TargetDensity,
    basis: &Basis,
    theta: f64,
    config: &SolverConfig,
) -> Result<FitResult> {
    if !basis.set().structure().is_triangular() {
        return Err(Error::UnsupportedStructure("dense"));
    }
    if !(theta >= 0.0 && theta.is_finite()) {
        return Err(Error::invalid(format!(
            "theta must be finite and non-negative, got {theta}"
        )));
    }
    check_inputs(basis, samples, target, config)?;
    let state = KrState::new(basis, samples, theta, config.rho, config.init_floor)?;
    let prox = Prox::new(target, config.rho, config.newton())?;
    let supports = supports(basis);
    let ctx = PassCtx {
        rho: config.rho,
        theta,
        prox: &prox,
        target,
        supports: &supports,
    };
    let KrState {
        b,
        samples: blocks,
        solver,
        ..
    } = state;
    let mut engine = Engine::new(blocks, config.workers, config.reduction)?;
    run(&mut engine, &solver, b, &ctx, config, basis, samples, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{Structure, UnivariateFamily};

    #[test]
    fn zd_examples() {
        assert!((zd_update(1.0, 0.0, 1.0) - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-15);
        assert_eq!(zd_update(0.0, 0.0, 1.0), 1.0);
    }

    #[test]
    fn yd_scalar_case() {
        let (rho, z, v, beta, lam) = (1.5, 0.8, 1.1, 0.3, -0.2);
        let y = yd_update(
            z,
            &DVector::from_element(1, v),
            beta,
            &DVector::from_element(1, lam),
            0,
            rho,
        );
        assert!((y[0] - (rho * z + rho * v + beta - lam) / (2.0 * rho)).abs() < 1e-15);
    }

    #[test]
    fn consistent_state_is_fixed_point() {
        let basis = Basis::build(Structure::Kr, 2, 2, UnivariateFamily::Hermite).unwrap();
        let xs = Samples::new(2, vec![0.1, -0.3, 1.2, 0.4, -0.7, 0.9]).unwrap();
        let mut st = KrState::new(&basis, &xs, 0.0, 1.0, 1e-6).unwrap();
        let b0 = st.b.clone();
        st.update_b();
        assert!((&st.b - b0).amax() < 1e-12);
    }
}

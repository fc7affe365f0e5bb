use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use log::info;
use otmap::apps::{
    bayes_lasso_transport, gibbs_lasso, load_regression_csv, sample_source, summarize_posterior, write_kde_dumps,
    write_summary_csv, Method, SourceKind,
};
use otmap::composer::write_progress;
use otmap::io::{read_map, read_samples_csv, write_map, write_samples_csv, write_sequence};
use otmap::{fit_map, fit_sequential, Basis, Error, InvertOptions, MultiIndexSet, Samples, Structure, ThetaSchedule};

use crate::config::{self, FitConfig, LassoConfig};
use crate::{ApplyArgs, FitArgs, IndexSetArgs, LassoArgs, MethodChoice, SampleArgs, SolverFlags, SourceChoice};

pub enum Outcome {
    Done,
    NotConverged,
}

fn apply_solver_flags(
    solver: &mut otmap::SolverConfig,
    flags: &SolverFlags,
    file: Option<&Path>,
) -> anyhow::Result<()> {
    if let Some(v) = flags.rho {
        solver.rho = v;
    }
    if let Some(v) = flags.max_iters {
        solver.max_iters = v;
    }
    if let Some(v) = flags.tol {
        solver.tol_primal = v;
        solver.tol_dual = v;
    }
    if let Some(v) = flags.reduction {
        solver.reduction = v;
    }
    solver.workers = config::resolve_workers(flags.workers, config::file_sets_workers(file)?, solver.workers)?;
    Ok(())
}

/// Builds the basis, explaining a refusal by the term cap.
fn build_basis(cfg: &FitConfig, dim: usize) -> anyhow::Result<Basis> {
    let b = &cfg.basis;
    match Basis::build(b.structure, dim, b.order, b.family) {
        Ok(basis) => Ok(basis),
        Err(Error::IndexSetTooLarge { requested, cap }) => bail!(
            "a {} basis with D={dim} and O={} needs {requested} terms per map row, above the cap of {cap}; \
             use --structure kr or krsv, or lower --order",
            b.structure,
            b.order
        ),
        Err(e) => Err(e.into()),
    }
}

fn diagnostics_path(cfg: &FitConfig, out: &Path) -> PathBuf {
    cfg.diagnostics
        .clone()
        .unwrap_or_else(|| out.with_extension("diagnostics.csv"))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn fit(args: FitArgs) -> anyhow::Result<Outcome> {
    let mut cfg: FitConfig = config::load(args.config.as_deref())?;
    if args.source.is_some() {
        cfg.source = args.source;
    }
    if let Some(t) = args.target {
        cfg.target = t;
    }
    if let Some(s) = args.structure {
        cfg.basis.structure = s;
    }
    if let Some(f) = args.family {
        cfg.basis.family = f;
    }
    if let Some(o) = args.order {
        cfg.basis.order = o;
    }
    if args.dim.is_some() {
        cfg.dim = args.dim;
    }
    if args.stages.is_some() {
        cfg.stages = args.stages;
    }
    if let Some(v) = args.theta {
        cfg.composer.theta = ThetaSchedule::Constant { value: v };
    }
    if let Some(v) = args.stop_tol {
        cfg.composer.stop_tol = v;
    }
    if args.out.is_some() {
        cfg.out = args.out;
    }
    if args.diagnostics.is_some() {
        cfg.diagnostics = args.diagnostics;
    }
    apply_solver_flags(&mut cfg.solver, &args.solver, args.config.as_deref())?;
    if let Some(t) = cfg.stages {
        cfg.composer.stages = t;
        if !cfg.basis.structure.is_triangular() {
            bail!(
                "--stages needs a triangular structure (kr or krsv), got {}",
                cfg.basis.structure
            );
        }
    }

    // A declared dimension lets the term cap refuse before any data is read.
    let early = cfg.dim.map(|d| build_basis(&cfg, d)).transpose()?;
    let source = cfg
        .source
        .clone()
        .context("no source samples given (use --source or `source` in the config)")?;
    let out = cfg
        .out
        .clone()
        .context("no output map path given (use --out or `out` in the config)")?;
    let (xs, _) =
        read_samples_csv(&source).with_context(|| format!("cannot load source samples {}", source.display()))?;
    if let Some(d) = cfg.dim {
        if d != xs.dim() {
            bail!("{} has {} columns but --dim is {d}", source.display(), xs.dim());
        }
    }
    let basis = match early {
        Some(b) => b,
        None => build_basis(&cfg, xs.dim())?,
    };
    let target = cfg.target.build(xs.dim())?;
    info!(
        "fitting {} samples of dimension {} with {} terms",
        xs.len(),
        xs.dim(),
        basis.len()
    );

    let mut diag = config::echo(&cfg)?;
    let outcome = if cfg.stages.is_some() {
        let fit = fit_sequential(&xs, target.as_ref(), &basis, &cfg.composer, &cfg.solver)?;
        if let Some(e) = &fit.failure {
            if fit.map.is_empty() {
                bail!("first stage failed: {e}");
            }
            eprintln!("warning: stopped after {} stages: {e}", fit.map.len());
        }
        write_sequence(&out, &fit.map)?;
        let mut buf = Vec::new();
        write_progress(&mut buf, &fit.records)?;
        diag.push_str(&String::from_utf8(buf)?);
        if fit.failure.is_none() && fit.all_converged() {
            Outcome::Done
        } else {
            Outcome::NotConverged
        }
    } else {
        let fit = fit_map(&xs, target.as_ref(), &basis, &cfg.solver)?;
        write_map(&out, &fit.map)?;
        diag.push_str("iter,objective,primal_res,dual_res\n");
        for r in &fit.history {
            writeln!(diag, "{},{},{},{}", r.iter, r.objective, r.primal_res, r.dual_res)?;
        }
        if fit.converged {
            Outcome::Done
        } else {
            eprintln!(
                "warning: no convergence after {} iterations; best iterate written",
                fit.iterations
            );
            Outcome::NotConverged
        }
    };
    write_text(&diagnostics_path(&cfg, &out), &diag)?;
    Ok(outcome)
}

fn load_for_apply(args: &ApplyArgs) -> anyhow::Result<(otmap::SequentialMap, Samples, Option<Vec<String>>)> {
    let seq = read_map(&args.map)
        .with_context(|| format!("cannot load map {}", args.map.display()))?
        .into_sequence();
    let (xs, header) =
        read_samples_csv(&args.input).with_context(|| format!("cannot load samples {}", args.input.display()))?;
    let d = seq.dim().unwrap_or(0);
    if xs.dim() != d {
        bail!(
            "dimension mismatch: map {} has D={d} but {} has {} columns",
            args.map.display(),
            args.input.display(),
            xs.dim()
        );
    }
    Ok((seq, xs, header))
}

pub fn push(args: ApplyArgs) -> anyhow::Result<Outcome> {
    let (seq, xs, header) = load_for_apply(&args)?;
    let ys = seq.compose_forward(&xs)?;
    write_samples_csv(&args.out, &ys, header.as_deref())?;
    Ok(Outcome::Done)
}

pub fn invert(args: ApplyArgs) -> anyhow::Result<Outcome> {
    let (seq, ys, header) = load_for_apply(&args)?;
    if let Some(m) = seq.stages().iter().find(|m| m.structure() == Structure::Dense) {
        bail!(
            "cannot invert {}: inversion is only supported for triangular (kr, krsv) maps, this map is {}",
            args.map.display(),
            m.structure()
        );
    }
    let xs = seq.compose_inverse(&ys, &InvertOptions::default())?;
    write_samples_csv(&args.out, &xs, header.as_deref())?;
    Ok(Outcome::Done)
}

pub fn sample(args: SampleArgs) -> anyhow::Result<Outcome> {
    let d = args.dim;
    let kind = match args.kind {
        SourceChoice::Laplace => SourceKind::Laplace {
            rate: args.rate,
            dim: d,
        },
        SourceChoice::Gaussian => SourceKind::standard_gaussian(d),
        SourceChoice::Bimodal => SourceKind::TwoGaussianMixture {
            weight: 0.5,
            mean_a: vec![-args.separation; d],
            mean_b: vec![args.separation; d],
            std: 1.0,
        },
    };
    let xs = sample_source(&kind, args.n, args.seed)?;
    let header: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
    write_samples_csv(&args.out, &xs, Some(&header))?;
    Ok(Outcome::Done)
}

pub fn lasso(args: LassoArgs) -> anyhow::Result<Outcome> {
    let mut cfg: LassoConfig = config::load(args.config.as_deref())?;
    if args.data.is_some() {
        cfg.data = args.data;
    }
    if let Some(r) = args.response {
        cfg.response = r;
    }
    if args.lambda.is_some() {
        cfg.lambda = args.lambda;
    }
    if args.sigma2.is_some() {
        cfg.sigma2 = args.sigma2;
    }
    if let Some(s) = args.structure {
        cfg.transport.structure = s;
    }
    if let Some(o) = args.order {
        cfg.transport.order = o;
    }
    if let Some(n) = args.n_prior {
        cfg.transport.n_prior = n;
    }
    if let Some(b) = args.burn_in {
        cfg.gibbs.burn_in = b;
    }
    if let Some(n) = args.n_samples {
        cfg.gibbs.n_samples = n;
    }
    if let Some(s) = args.seed {
        cfg.transport.seed = s;
        cfg.gibbs.seed = s;
    }
    if let Some(d) = args.out_dir {
        cfg.out_dir = d;
    }
    cfg.kde |= args.kde;
    apply_solver_flags(&mut cfg.solver, &args.solver, args.config.as_deref())?;

    let data = cfg
        .data
        .clone()
        .context("no dataset given (use --data or `data` in the config)")?;
    let lambda = cfg
        .lambda
        .context("no prior rate given (use --lambda or `lambda` in the config)")?;
    let ds =
        load_regression_csv(&data, &cfg.response).with_context(|| format!("cannot load dataset {}", data.display()))?;
    let sigma2 = match cfg.sigma2 {
        Some(s) => s,
        None => ds.residual_variance()?,
    };
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("cannot create {}", cfg.out_dir.display()))?;

    let mut diag = config::echo(&cfg)?;
    writeln!(diag, "# sigma2 used: {sigma2}")?;
    diag.push_str("method,converged,iterations\n");
    let mut outcome = Outcome::Done;
    let mut runs = Vec::new();
    if matches!(args.method, MethodChoice::Transport | MethodChoice::Both) {
        let fit = bayes_lasso_transport(&ds, lambda, sigma2, &cfg.transport, &cfg.solver)?;
        writeln!(diag, "transport,{},{}", fit.converged, fit.iterations)?;
        if !fit.converged {
            eprintln!(
                "warning: transport map did not converge after {} iterations",
                fit.iterations
            );
            outcome = Outcome::NotConverged;
        }
        runs.push((Method::Transport, fit.posterior));
    }
    if matches!(args.method, MethodChoice::Gibbs | MethodChoice::Both) {
        let post = gibbs_lasso(&ds, lambda, sigma2, &(&cfg.gibbs).into())?;
        writeln!(diag, "gibbs,,{}", cfg.gibbs.burn_in + cfg.gibbs.n_samples)?;
        runs.push((Method::Gibbs, post));
    }
    for (method, post) in &runs {
        let dir = &cfg.out_dir;
        write_samples_csv(&dir.join(format!("samples_{method}.csv")), post, Some(&ds.names))?;
        let summary = summarize_posterior(post, &ds.names, *method)?;
        write_summary_csv(&dir.join(format!("summary_{method}.csv")), &summary)?;
        if cfg.kde {
            write_kde_dumps(dir, method.name(), post, &ds.names)?;
        }
    }
    write_text(&cfg.out_dir.join("lasso.diagnostics.csv"), &diag)?;
    Ok(outcome)
}

pub fn index_set(args: IndexSetArgs) -> anyhow::Result<Outcome> {
    let set = match MultiIndexSet::new(args.structure, args.dim, args.order) {
        Err(Error::IndexSetTooLarge { requested, cap }) => bail!(
            "a {} set with D={} and O={} has {requested} terms, above the cap of {cap}",
            args.structure,
            args.dim,
            args.order
        ),
        other => other?,
    };
    let mut out = String::new();
    writeln!(
        out,
        "structure {} D={} O={} K={}",
        args.structure,
        args.dim,
        args.order,
        set.len()
    )?;
    for (d, k) in set.row_sizes().iter().enumerate() {
        writeln!(out, "row {}: {k} terms", d + 1)?;
    }
    if !args.sizes_only {
        for idx in set.indices() {
            let parts: Vec<String> = idx.iter().map(u32::to_string).collect();
            writeln!(out, "{}", parts.join(" "))?;
        }
    }
    print!("{out}");
    Ok(Outcome::Done)
}

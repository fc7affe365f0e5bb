//! Greedy construction of `S_T o ... o S_1` from low-order triangular stages.

use std::io::Write;
use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::admm::{fit_kr_stage, SolverConfig};
use crate::basis::Basis;
use crate::density::TargetDensity;
use crate::error::{Error, Result};
use crate::map::{SequentialMap, StageInfo, TransportMap};
use crate::samples::Samples;

/// Transport-cost weight per stage. Stage `t` counts from 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ThetaSchedule {
    Constant {
        value: f64,
    },
    /// `theta_t = initial * ratio^t`.
    Geometric {
        initial: f64,
        ratio: f64,
    },
}

impl Default for ThetaSchedule {
    fn default() -> Self {
        ThetaSchedule::Constant { value: 1.0 }
    }
}

impl ThetaSchedule {
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            ThetaSchedule::Constant { value } => value,
            ThetaSchedule::Geometric { initial, ratio } => initial * ratio.powi(t as i32),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            ThetaSchedule::Constant { value } => value >= 0.0 && value.is_finite(),
            ThetaSchedule::Geometric { initial, ratio } => {
                initial >= 0.0 && initial.is_finite() && ratio > 0.0 && ratio.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid theta schedule {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComposerConfig {
    /// Maximum number of stages.
    pub stages: usize,
    pub theta: ThetaSchedule,
    /// Early stop once the monitored objective improves by less than this...
    pub stop_tol: f64,
    /// ...for this many consecutive stages.
    pub patience: usize,
    /// Fraction of samples held out for monitoring (0 monitors the training set).
    pub holdout: f64,
    /// Seed of the train/holdout split.
    pub seed: u64,
}

impl Default for ComposerConfig {
    fn default() -> Self {
        Self {
            stages: 10,
            theta: ThetaSchedule::default(),
            stop_tol: 1e-4,
            patience: 2,
            holdout: 0.2,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageRecord {
    pub stage: usize,
    pub theta: f64,
    pub objective_train: f64,
    pub objective_holdout: Option<f64>,
    pub admm_iters: usize,
    pub converged: bool,
}

#[derive(Debug)]
pub struct SequentialFit {
    pub map: SequentialMap,
    pub records: Vec<StageRecord>,
    /// Objective of the identity map on the monitored set.
    pub initial_objective: f64,
    pub stopped_early: bool,
    /// Set when a stage failed; `map` then holds the stages fitted before it.
    pub failure: Option<Error>,
}

impl SequentialFit {
    pub fn all_converged(&self) -> bool {
        self.records.iter().all(|r| r.converged)
    }
}

/// Samples pushed through a sequence so far, with accumulated log-determinants.
struct Tracked {
    points: Samples,
    logdet: Vec<f64>,
}

impl Tracked {
    fn new(points: Samples) -> Self {
        let n = points.len();
        Self {
            points,
            logdet: vec![0.0; n],
        }
    }

    fn advance(&mut self, map: &TransportMap) -> Result<()> {
        let mut next = Samples::empty(self.points.dim());
        for (i, x) in self.points.rows().enumerate() {
            self.logdet[i] += map.log_det_jacobian(x)?;
            next.push(map.forward(x)?.as_slice())?;
        }
        self.points = next;
        Ok(())
    }

    fn objective(&self, target: &dyn TargetDensity) -> f64 {
        let n = self.points.len() as f64;
        self.points
            .rows()
            .zip(&self.logdet)
            .map(|(z, ld)| -target.log_density(z) - ld)
            .sum::<f64>()
            / n
    }
}

/// `1/N sum_i [-log q(S(x_i)) - log det J_S(x_i)]`.
pub fn empirical_objective(map: &TransportMap, samples: &Samples, target: &dyn TargetDensity) -> Result<f64> {
    let mut t = Tracked::new(samples.clone());
    t.advance(map)?;
    Ok(t.objective(target))
}

/// Objective of a sequence, with log-determinants accumulated stage by stage.
pub fn sequence_objective(seq: &SequentialMap, samples: &Samples, target: &dyn TargetDensity) -> Result<f64> {
    Ok(*kl_decay_check(seq, samples, target)?
        .last()
        .ok_or(Error::Empty("sequential map stages"))?)
}

/// Objective after each stage prefix `S_t o ... o S_1`, `t = 1..T`.
pub fn kl_decay_check(seq: &SequentialMap, samples: &Samples, target: &dyn TargetDensity) -> Result<Vec<f64>> {
    let mut t = Tracked::new(samples.clone());
    let mut out = Vec::with_capacity(seq.len());
    for (i, m) in seq.stages().iter().enumerate() {
        t.advance(m).map_err(|e| e.at_stage(i + 1))?;
        out.push(t.objective(target));
    }
    Ok(out)
}

fn split(samples: &Samples, fraction: f64, seed: u64) -> (Samples, Option<Samples>) {
    let n = samples.len();
    let n_hold = (fraction * n as f64).round() as usize;
    if n_hold == 0 || n_hold >= n {
        return (samples.clone(), None);
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (hold, train) = idx.split_at(n_hold);
    let mut train = train.to_vec();
    let mut hold = hold.to_vec();
    train.sort_unstable();
    hold.sort_unstable();
    (samples.select(&train), Some(samples.select(&hold)))
}

/// Fits up to `config.stages` triangular stages, each on the training samples
/// pushed through the stages before it.
pub fn fit_sequential(
    samples: &Samples,
    target: &dyn TargetDensity,
    basis: &Basis,
    config: &ComposerConfig,
    solver: &SolverConfig,
) -> Result<SequentialFit> {
    if config.stages == 0 {
        return Err(Error::invalid("at least one stage is required"));
    }
    if !basis.set().structure().is_triangular() {
        return Err(Error::UnsupportedStructure("dense"));
    }
    if !(0.0..1.0).contains(&config.holdout) {
        return Err(Error::invalid(format!(
            "holdout fraction must lie in [0, 1), got {}",
            config.holdout
        )));
    }
    if config.patience == 0 {
        return Err(Error::invalid("patience must be at least 1"));
    }
    config.theta.validate()?;
    solver.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("training samples"));
    }

    let (train, hold) = split(samples, config.holdout, config.seed);
    let mut train = Tracked::new(train);
    let mut hold = hold.map(Tracked::new);
    let monitored = |train: &Tracked, hold: &Option<Tracked>| match hold {
        Some(h) => h.objective(target),
        None => train.objective(target),
    };
    let initial_objective = monitored(&train, &hold);
    let mut prev = initial_objective;
    let mut flat = 0usize;
    let mut fit = SequentialFit {
        map: SequentialMap::new(),
        records: Vec::new(),
        initial_objective,
        stopped_early: false,
        failure: None,
    };

    for t in 0..config.stages {
        let stage = t + 1;
        let theta = config.theta.at(t);
        let result = fit_kr_stage(&train.points, target, basis, theta, solver).and_then(|r| {
            train.advance(&r.map)?;
            if let Some(h) = hold.as_mut() {
                h.advance(&r.map)?;
            }
            Ok(r)
        });
        let r = match result {
            Ok(r) => r,
            Err(e) => {
                warn!("stage {stage} failed: {e}");
                fit.failure = Some(e.at_stage(stage));
                return Ok(fit);
            }
        };
        if !r.converged {
            warn!("stage {stage} stopped at the iteration cap");
        }
        let record = StageRecord {
            stage,
            theta,
            objective_train: train.objective(target),
            objective_holdout: hold.as_ref().map(|h| h.objective(target)),
            admm_iters: r.iterations,
            converged: r.converged,
        };
        info!(
            "stage {stage}: theta {theta} train {:.6} holdout {:?} iters {}",
            record.objective_train, record.objective_holdout, record.admm_iters
        );
        let info = StageInfo {
            theta,
            objective: record.objective_train,
            admm_iterations: r.iterations,
        };
        fit.map.push(r.map, info)?;
        fit.records.push(record);

        let cur = monitored(&train, &hold);
        if prev - cur < config.stop_tol {
            flat += 1;
        } else {
            flat = 0;
        }
        prev = cur;
        if flat >= config.patience && stage >= 2 && stage < config.stages {
            info!("objective flat for {flat} stages; stopping after stage {stage}");
            fit.stopped_early = true;
            break;
        }
    }
    Ok(fit)
}

/// Progress table `stage,theta,objective_train,objective_holdout,admm_iters`.
pub fn write_progress<W: Write>(writer: W, records: &[StageRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["stage", "theta", "objective_train", "objective_holdout", "admm_iters"])?;
    for r in records {
        w.write_record([
            r.stage.to_string(),
            r.theta.to_string(),
            r.objective_train.to_string(),
            r.objective_holdout.map(|v| v.to_string()).unwrap_or_default(),
            r.admm_iters.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_progress_csv(path: &Path, records: &[StageRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_progress(std::io::BufWriter::new(file), records)
}

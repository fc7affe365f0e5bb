//! Config documents for `fit` and `lasso`. Flags override file values, which
//! override built-in defaults.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use nalgebra::{DMatrix, DVector};
use otmap::apps::{GibbsConfig, LassoTransportConfig};
use otmap::density::{GaussianTarget, LaplacePrior, TargetDensity};
use otmap::{ComposerConfig, SolverConfig, Structure, UnivariateFamily};
use serde::{Deserialize, Serialize};

pub const WORKERS_ENV: &str = "OTMAP_WORKERS";

/// Target density of a `fit` run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TargetSpec {
    /// Standard Gaussian in the source dimension.
    GaussianStd,
    Gaussian {
        mean: Vec<f64>,
        covariance: Vec<Vec<f64>>,
    },
    /// Independent Laplace coordinates.
    Laplace {
        rate: f64,
    },
}

impl FromStr for TargetSpec {
    type Err = anyhow::Error;

    /// `gaussian-std` or `laplace:RATE`; other targets need a config file.
    fn from_str(s: &str) -> anyhow::Result<Self> {
        if s == "gaussian-std" {
            return Ok(TargetSpec::GaussianStd);
        }
        if let Some(rate) = s.strip_prefix("laplace:") {
            let rate = rate
                .parse()
                .with_context(|| format!("bad Laplace rate in target '{s}'"))?;
            return Ok(TargetSpec::Laplace { rate });
        }
        bail!("unknown target '{s}' (expected gaussian-std or laplace:RATE)")
    }
}

impl TargetSpec {
    pub fn build(&self, dim: usize) -> anyhow::Result<Box<dyn TargetDensity>> {
        Ok(match self {
            TargetSpec::GaussianStd => Box::new(GaussianTarget::standard(dim)?),
            TargetSpec::Gaussian { mean, covariance } => {
                if mean.len() != dim || covariance.len() != dim || covariance.iter().any(|r| r.len() != dim) {
                    bail!("target Gaussian must be {dim}-dimensional to match the source samples");
                }
                let cov = DMatrix::from_fn(dim, dim, |i, j| covariance[i][j]);
                Box::new(GaussianTarget::new(DVector::from_column_slice(mean), cov)?)
            }
            TargetSpec::Laplace { rate } => Box::new(LaplacePrior::new(*rate, dim)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisSection {
    pub structure: Structure,
    pub family: UnivariateFamily,
    pub order: usize,
}

impl Default for BasisSection {
    fn default() -> Self {
        Self {
            structure: Structure::Krsv,
            family: UnivariateFamily::Hermite,
            order: 2,
        }
    }
}

/// Effective settings of a `fit` run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub source: Option<PathBuf>,
    pub target: TargetSpec,
    pub out: Option<PathBuf>,
    pub diagnostics: Option<PathBuf>,
    /// Expected dimension; checked against the basis size before any data is read.
    pub dim: Option<usize>,
    /// Number of sequential stages; absent fits a single map.
    pub stages: Option<usize>,
    pub basis: BasisSection,
    pub composer: ComposerConfig,
    pub solver: SolverConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            source: None,
            target: TargetSpec::GaussianStd,
            out: None,
            diagnostics: None,
            dim: None,
            stages: None,
            basis: BasisSection::default(),
            composer: ComposerConfig::default(),
            solver: SolverConfig::default(),
        }
    }
}

/// Effective settings of a `lasso` run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LassoConfig {
    pub data: Option<PathBuf>,
    pub response: String,
    pub lambda: Option<f64>,
    /// Noise variance; absent uses the least-squares residual variance.
    pub sigma2: Option<f64>,
    pub out_dir: PathBuf,
    pub kde: bool,
    pub transport: LassoTransportConfig,
    pub gibbs: GibbsSection,
    pub solver: SolverConfig,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            data: None,
            response: "medv".into(),
            lambda: None,
            sigma2: None,
            out_dir: PathBuf::from("."),
            kde: false,
            transport: LassoTransportConfig::default(),
            gibbs: GibbsSection::default(),
            // The preconditioned LASSO targets converge fastest near this penalty.
            solver: SolverConfig {
                rho: 10.0,
                ..Default::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GibbsSection {
    pub burn_in: usize,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for GibbsSection {
    fn default() -> Self {
        let g = GibbsConfig::default();
        Self {
            burn_in: g.burn_in,
            n_samples: g.n_samples,
            seed: g.seed,
        }
    }
}

impl From<&GibbsSection> for GibbsConfig {
    fn from(g: &GibbsSection) -> Self {
        GibbsConfig {
            burn_in: g.burn_in,
            n_samples: g.n_samples,
            seed: g.seed,
        }
    }
}

pub fn load<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> anyhow::Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

/// Worker count from the flag, then the config file, then `OTMAP_WORKERS`.
pub fn resolve_workers(flag: Option<usize>, file_set: bool, file_value: usize) -> anyhow::Result<usize> {
    if let Some(w) = flag {
        return Ok(w);
    }
    if file_set {
        return Ok(file_value);
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .with_context(|| format!("{WORKERS_ENV}='{v}' is not a worker count")),
        Err(_) => Ok(file_value),
    }
}

/// Whether a TOML document sets `solver.workers`.
pub fn file_sets_workers(path: Option<&Path>) -> anyhow::Result<bool> {
    let Some(path) = path else { return Ok(false) };
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    let value: toml::Table = toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
    Ok(value
        .get("solver")
        .and_then(|s| s.as_table())
        .is_some_and(|s| s.contains_key("workers")))
}

/// The effective config as `# `-prefixed TOML lines.
pub fn echo<T: Serialize>(cfg: &T) -> anyhow::Result<String> {
    let text = toml::to_string(cfg).context("cannot serialize effective config")?;
    let mut out = String::from("# effective config\n");
    for line in text.lines() {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_config_roundtrips_through_toml() {
        let mut cfg = FitConfig {
            stages: Some(4),
            target: TargetSpec::Laplace { rate: 2.0 },
            ..Default::default()
        };
        cfg.solver.rho = 3.0;
        let text = toml::to_string(&cfg).unwrap();
        let back: FitConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg: FitConfig = toml::from_str("[basis]\norder = 3\n[solver]\nrho = 2.0\n").unwrap();
        assert_eq!(cfg.basis.order, 3);
        assert_eq!(cfg.basis.structure, Structure::Krsv);
        assert_eq!(cfg.solver.rho, 2.0);
        assert_eq!(cfg.solver.max_iters, SolverConfig::default().max_iters);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FitConfig>("[solver]\nrhoo = 2.0\n").is_err());
    }

    #[test]
    fn target_flags() {
        assert_eq!("gaussian-std".parse::<TargetSpec>().unwrap(), TargetSpec::GaussianStd);
        assert_eq!(
            "laplace:0.5".parse::<TargetSpec>().unwrap(),
            TargetSpec::Laplace { rate: 0.5 }
        );
        assert!("cauchy".parse::<TargetSpec>().is_err());
    }
}

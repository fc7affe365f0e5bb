use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::samples::Samples;
use crate::stats::{mean, quantile_sorted, std_dev};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Transport,
    Gibbs,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Transport => "transport",
            Method::Gibbs => "gibbs",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSummary {
    pub method: Method,
    pub names: Vec<String>,
    pub median: Vec<f64>,
    pub q025: Vec<f64>,
    pub q975: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub count: usize,
}

/// Per-coordinate medians, 2.5% / 97.5% quantiles (linear interpolation),
/// means and standard deviations.
pub fn summarize_posterior(samples: &Samples, names: &[String], method: Method) -> Result<PosteriorSummary> {
    if samples.is_empty() {
        return Err(Error::Empty("posterior samples"));
    }
    if names.len() != samples.dim() {
        return Err(Error::DimensionMismatch {
            what: "coordinate names",
            expected: samples.dim(),
            found: names.len(),
        });
    }
    let mut s = PosteriorSummary {
        method,
        names: names.to_vec(),
        median: Vec::new(),
        q025: Vec::new(),
        q975: Vec::new(),
        mean: Vec::new(),
        std: Vec::new(),
        count: samples.len(),
    };
    for a in 0..samples.dim() {
        let mut col = samples.column(a);
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "posterior samples",
            });
        }
        s.mean.push(mean(&col));
        s.std.push(std_dev(&col));
        col.sort_by(f64::total_cmp);
        s.median.push(quantile_sorted(&col, 0.5));
        s.q025.push(quantile_sorted(&col, 0.025));
        s.q975.push(quantile_sorted(&col, 0.975));
    }
    Ok(s)
}

/// Table `name,median,q2.5,q97.5,mean,std`.
pub fn write_summary<W: Write>(writer: W, s: &PosteriorSummary) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["name", "median", "q2.5", "q97.5", "mean", "std"])?;
    for a in 0..s.names.len() {
        w.write_record([
            s.names[a].clone(),
            s.median[a].to_string(),
            s.q025[a].to_string(),
            s.q975[a].to_string(),
            s.mean[a].to_string(),
            s.std[a].to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_summary_csv(path: &Path, s: &PosteriorSummary) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_summary(std::io::BufWriter::new(file), s)
}

/// One single-column CSV (`value`) per coordinate, named `<prefix>_<name>.csv`,
/// for external density estimation. Returns the written paths.
pub fn write_kde_dumps(dir: &Path, prefix: &str, samples: &Samples, names: &[String]) -> Result<Vec<PathBuf>> {
    if names.len() != samples.dim() {
        return Err(Error::DimensionMismatch {
            what: "coordinate names",
            expected: samples.dim(),
            found: names.len(),
        });
    }
    let mut paths = Vec::with_capacity(names.len());
    for (a, name) in names.iter().enumerate() {
        let safe: String = name
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        let path = dir.join(format!("{prefix}_{safe}.csv"));
        let file = std::fs::File::create(&path).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
        w.write_record(["value"])?;
        for v in samples.column(a) {
            w.write_record([v.to_string()])?;
        }
        w.flush().map_err(csv::Error::from)?;
        paths.push(path);
    }
    Ok(paths)
}

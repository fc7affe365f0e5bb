use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Predictors standardised to zero mean and unit (sample) standard deviation,
/// response centred.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionDataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub raw_x: DMatrix<f64>,
    pub raw_y: DVector<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub y_mean: f64,
    pub names: Vec<String>,
    pub response: String,
}

impl RegressionDataset {
    pub fn new(raw_x: DMatrix<f64>, raw_y: DVector<f64>, names: Vec<String>, response: String) -> Result<Self> {
        let (n, d) = raw_x.shape();
        if n < 2 {
            return Err(Error::invalid(format!("regression needs at least 2 rows, got {n}")));
        }
        if d == 0 {
            return Err(Error::ZeroDimension);
        }
        if raw_y.len() != n {
            return Err(Error::DimensionMismatch {
                what: "response length",
                expected: n,
                found: raw_y.len(),
            });
        }
        if names.len() != d {
            return Err(Error::DimensionMismatch {
                what: "predictor names",
                expected: d,
                found: names.len(),
            });
        }
        if raw_x.iter().chain(raw_y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "regression data",
            });
        }
        let mut x = raw_x.clone();
        let mut means = Vec::with_capacity(d);
        let mut stds = Vec::with_capacity(d);
        for (j, name) in names.iter().enumerate() {
            let col = raw_x.column(j);
            let m = col.mean();
            let s = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
            if !(s > 1e-12 * m.abs().max(1.0)) {
                return Err(Error::Standardization(name.clone()));
            }
            x.column_mut(j).apply(|v| *v = (*v - m) / s);
            means.push(m);
            stds.push(s);
        }
        let y_mean = raw_y.mean();
        let y = raw_y.map(|v| v - y_mean);
        Ok(Self {
            x,
            y,
            raw_x,
            raw_y,
            means,
            stds,
            y_mean,
            names,
            response,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// Ordinary least-squares coefficients on the standardised data.
    pub fn least_squares(&self) -> Result<DVector<f64>> {
        let gram = self.x.transpose() * &self.x;
        let chol = gram.cholesky().ok_or(Error::NotPositiveDefinite)?;
        Ok(chol.solve(&(self.x.transpose() * &self.y)))
    }

    /// `RSS / (n - d)` of the least-squares fit.
    pub fn residual_variance(&self) -> Result<f64> {
        let (n, d) = (self.n(), self.d());
        if n <= d {
            return Err(Error::invalid(format!(
                "residual variance needs more rows ({n}) than predictors ({d})"
            )));
        }
        let beta = self.least_squares()?;
        Ok((&self.y - &self.x * beta).norm_squared() / (n - d) as f64)
    }
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan")
}

/// Reads a headed CSV; every column other than `response` is a predictor.
pub fn read_regression_csv<R: Read>(reader: R, response: &str) -> Result<RegressionDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let resp = headers
        .iter()
        .position(|h| h == response)
        .ok_or_else(|| Error::MissingColumn(response.to_string()))?;
    let names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != resp)
        .map(|(_, h)| h.clone())
        .collect();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for (j, cell) in rec.iter().enumerate() {
            let column = headers[j].clone();
            if is_missing(cell) {
                return Err(Error::MissingValue { row: i + 1, column });
            }
            let v: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                row: i + 1,
                column,
                value: cell.to_string(),
            })?;
            if j == resp {
                ys.push(v);
            } else {
                xs.push(v);
            }
        }
    }
    let n = ys.len();
    let d = names.len();
    let raw_x = DMatrix::from_row_slice(n, d, &xs);
    RegressionDataset::new(raw_x, DVector::from_vec(ys), names, response.to_string())
}

pub fn load_regression_csv(path: &Path, response: &str) -> Result<RegressionDataset> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_regression_csv(std::io::BufReader::new(file), response)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_rows_roundtrip_and_standardise() {
        let ds = read_regression_csv("a,y,b\n1.5,3,-2\n2.5,5,4\n".as_bytes(), "y").unwrap();
        assert_eq!(ds.names, vec!["a", "b"]);
        assert_eq!(ds.raw_x.as_slice(), &[1.5, 2.5, -2.0, 4.0]);
        assert_eq!(ds.raw_y.as_slice(), &[3.0, 5.0]);
        for j in 0..2 {
            let c = ds.x.column(j);
            assert!(c.mean().abs() < 1e-12);
            assert!((c.norm_squared() - 1.0).abs() < 1e-12);
        }
        assert_eq!(ds.y.as_slice(), &[-1.0, 1.0]);
    }

    #[test]
    fn distinct_errors() {
        assert!(matches!(
            read_regression_csv("a,y\n1,2\n".as_bytes(), "z"),
            Err(Error::MissingColumn(c)) if c == "z"
        ));
        assert!(matches!(
            read_regression_csv("a,y\n1,2\nNA,3\n".as_bytes(), "y"),
            Err(Error::MissingValue { row: 2, .. })
        ));
        assert!(matches!(
            read_regression_csv("a,y\n1,2\nfoo,3\n".as_bytes(), "y"),
            Err(Error::NonNumeric { row: 2, .. })
        ));
        assert!(matches!(
            read_regression_csv("a,y\n1,2\n1,3\n1,4\n".as_bytes(), "y"),
            Err(Error::Standardization(c)) if c == "a"
        ));
    }
}

//! Map documents (JSON) and sample batches (CSV).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{Basis, MultiIndexSet, Structure, UnivariateFamily};
use crate::error::{Error, Result};
use crate::map::{SequentialMap, StageInfo, TransportMap};
use crate::samples::Samples;

pub const DOCUMENT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageDocument {
    #[serde(rename = "W")]
    pub weights: Vec<Vec<f64>>,
    #[serde(default)]
    pub theta: f64,
    #[serde(default)]
    pub objective: Option<f64>,
    #[serde(default)]
    pub admm_iterations: usize,
    #[serde(default)]
    pub monotone_validated: bool,
}

/// On-disk form of a single map (`W` set, `stages` empty) or of a sequence
/// (`stages` non-empty, `W` absent). All stages share one basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapDocument {
    pub version: u32,
    pub structure: Structure,
    pub family: UnivariateFamily,
    #[serde(rename = "D")]
    pub dim: usize,
    #[serde(rename = "O")]
    pub order: usize,
    pub indices: Vec<Vec<u32>>,
    #[serde(rename = "W", default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monotone_validated: Option<bool>,
    #[serde(default)]
    pub stages: Vec<StageDocument>,
}

/// A decoded map document.
#[derive(Clone, Debug, PartialEq)]
pub enum MapArtifact {
    Single(TransportMap),
    Sequence(SequentialMap),
}

impl MapArtifact {
    /// Views a single map as a one-stage sequence.
    pub fn into_sequence(self) -> SequentialMap {
        match self {
            MapArtifact::Sequence(s) => s,
            MapArtifact::Single(m) => {
                let mut s = SequentialMap::new();
                s.push(m, StageInfo::default()).expect("first stage always fits");
                s
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            MapArtifact::Single(m) => m.dim(),
            MapArtifact::Sequence(s) => s.dim().unwrap_or(0),
        }
    }
}

fn rows_of(w: &DMatrix<f64>) -> Vec<Vec<f64>> {
    w.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn header(basis: &Basis) -> MapDocument {
    MapDocument {
        version: DOCUMENT_VERSION,
        structure: basis.set().structure(),
        family: basis.family(),
        dim: basis.dim(),
        order: basis.set().order(),
        indices: basis.set().indices().to_vec(),
        weights: None,
        monotone_validated: None,
        stages: Vec::new(),
    }
}

pub fn map_document(map: &TransportMap) -> MapDocument {
    let mut doc = header(map.basis());
    doc.weights = Some(rows_of(map.weights()));
    doc.monotone_validated = Some(map.monotone_validated());
    doc
}

pub fn sequence_document(seq: &SequentialMap) -> Result<MapDocument> {
    let first = seq.stages().first().ok_or(Error::Empty("sequential map stages"))?;
    if seq.stages().iter().any(|s| s.basis() != first.basis()) {
        return Err(Error::invalid("all stages of a saved sequence must share one basis"));
    }
    let mut doc = header(first.basis());
    doc.stages = seq
        .stages()
        .iter()
        .zip(seq.info())
        .map(|(m, info)| StageDocument {
            weights: rows_of(m.weights()),
            theta: info.theta,
            objective: info.objective.is_finite().then_some(info.objective),
            admm_iterations: info.admm_iterations,
            monotone_validated: m.monotone_validated(),
        })
        .collect();
    Ok(doc)
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.into(),
        message: message.into(),
    }
}

fn weights_from(rows: &[Vec<f64>], d: usize, k: usize, path: &str) -> Result<DMatrix<f64>> {
    if rows.len() != d {
        return Err(schema(path, format!("expected {d} rows, found {}", rows.len())));
    }
    for (r, row) in rows.iter().enumerate() {
        if row.len() != k {
            return Err(schema(
                format!("{path}[{r}]"),
                format!("expected {k} entries, found {}", row.len()),
            ));
        }
    }
    Ok(DMatrix::from_fn(d, k, |r, c| rows[r][c]))
}

fn map_from(basis: &Basis, rows: &[Vec<f64>], validated: bool, path: &str) -> Result<TransportMap> {
    let w = weights_from(rows, basis.dim(), basis.len(), path)?;
    let mut map = TransportMap::new(basis.clone(), w).map_err(|e| schema(path, e.to_string()))?;
    map.set_monotone_validated(validated);
    Ok(map)
}

impl MapDocument {
    pub fn decode(&self) -> Result<MapArtifact> {
        if self.version != DOCUMENT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: self.version,
                expected: DOCUMENT_VERSION,
            });
        }
        let set = MultiIndexSet::new(self.structure, self.dim, self.order).map_err(|e| schema("", e.to_string()))?;
        if set.indices() != self.indices.as_slice() {
            return Err(schema(
                "indices",
                format!(
                    "index list does not match the canonical {} set for D={} O={}",
                    self.structure, self.dim, self.order
                ),
            ));
        }
        let basis = Basis::new(set, self.family);
        match (&self.weights, self.stages.is_empty()) {
            (Some(w), true) => Ok(MapArtifact::Single(map_from(
                &basis,
                w,
                self.monotone_validated.unwrap_or(false),
                "W",
            )?)),
            (None, false) => {
                let mut seq = SequentialMap::new();
                for (t, st) in self.stages.iter().enumerate() {
                    let path = format!("stages[{t}].W");
                    let map = map_from(&basis, &st.weights, st.monotone_validated, &path)?;
                    let info = StageInfo {
                        theta: st.theta,
                        objective: st.objective.unwrap_or(f64::NAN),
                        admm_iterations: st.admm_iterations,
                    };
                    seq.push(map, info)?;
                }
                Ok(MapArtifact::Sequence(seq))
            }
            (Some(_), false) => Err(schema("W", "a document holds either W or stages, not both")),
            (None, true) => Err(schema("W", "missing weights: expected W or a non-empty stages list")),
        }
    }
}

/// Parses a document, checking the version before the rest of the schema.
pub fn parse_document(text: &str) -> Result<MapDocument> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    match value.get("version") {
        None => return Err(schema("version", "missing field")),
        Some(v) => match v.as_u64() {
            Some(v) if v == DOCUMENT_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::UnsupportedVersion {
                    found: v.min(u32::MAX as u64) as u32,
                    expected: DOCUMENT_VERSION,
                })
            }
            None => return Err(schema("version", "expected an unsigned integer")),
        },
    }
    serde_path_to_error::deserialize(value).map_err(|e| schema(e.path().to_string(), e.inner().to_string()))
}

pub fn read_map(path: &Path) -> Result<MapArtifact> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_document(&text)?.decode()
}

pub fn write_document(path: &Path, doc: &MapDocument) -> Result<()> {
    let file = create(path)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, doc)?;
    writeln!(w).and_then(|_| w.flush()).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_map(path: &Path, map: &TransportMap) -> Result<()> {
    write_document(path, &map_document(map))
}

pub fn write_sequence(path: &Path, seq: &SequentialMap) -> Result<()> {
    write_document(path, &sequence_document(seq)?)
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads one sample per row. A first row containing any non-numeric cell is
/// taken as a header and returned separately.
pub fn read_samples<R: Read>(reader: R) -> Result<(Samples, Option<Vec<String>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut header = None;
    let mut data = Vec::new();
    let mut dim = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if i == 0 {
            dim = rec.len();
            if rec.iter().any(|c| !c.is_empty() && c.parse::<f64>().is_err()) {
                header = Some(rec.iter().map(str::to_string).collect());
                continue;
            }
        }
        for (c, cell) in rec.iter().enumerate() {
            let column = header
                .as_ref()
                .and_then(|h: &Vec<String>| h.get(c).cloned())
                .unwrap_or_else(|| (c + 1).to_string());
            if cell.is_empty() {
                return Err(Error::MissingValue { row: i + 1, column });
            }
            let v: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                row: i + 1,
                column: column.clone(),
                value: cell.to_string(),
            })?;
            data.push(v);
        }
    }
    if dim == 0 {
        return Err(Error::Empty("sample file"));
    }
    Ok((Samples::new(dim, data)?, header))
}

pub fn read_samples_csv(path: &Path) -> Result<(Samples, Option<Vec<String>>)> {
    read_samples(BufReader::new(open(path)?))
}

/// Writes rows with shortest round-trip decimal formatting.
pub fn write_samples<W: Write>(writer: W, samples: &Samples, header: Option<&[String]>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if let Some(h) = header {
        w.write_record(h)?;
    }
    let mut buf = Vec::with_capacity(samples.dim());
    for row in samples.rows() {
        buf.clear();
        buf.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&buf)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_samples_csv(path: &Path, samples: &Samples, header: Option<&[String]>) -> Result<()> {
    write_samples(BufWriter::new(create(path)?), samples, header)
}

//! Survival datasets: CSV ingestion, covariate transforms, scaling and validation.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formula::{ModelSpec, Transform};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing column '{0}'")]
    MissingColumn(String),
    #[error("non-positive follow-up time in row {0}")]
    NonPositiveTime(usize),
    #[error("cannot parse value in row {row}, column '{col}'")]
    UnparseableValue { row: usize, col: String },
    #[error("status in row {0} must be 0 or 1")]
    InvalidStatus(usize),
    #[error("log transform of non-positive value in row {row}, column '{col}'")]
    NonPositiveLog { row: usize, col: String },
    #[error("dataset contains no events")]
    NoEvents,
    #[error("need at least two complete rows, found {0}")]
    TooFewRows(usize),
    #[error("need at least one covariate")]
    NoCovariates,
    #[error("continuous column '{0}' is constant")]
    ZeroVariance(String),
    #[error("column '{0}' is flagged binary but does not take exactly two values")]
    NotBinary(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Cells that read as missing.
fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c == "NA"
}

/// A raw CSV table; cells are kept as text until a column is referenced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn from_reader<R: Read>(rdr: R) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(rdr);
        let headers = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let rows = rdr
            .records()
            .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<Result<_, _>>()?;
        Ok(Table { headers, rows })
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self, DataError> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), DataError> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(&self.headers)?;
        for row in &self.rows {
            wtr.write_record(row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn column_index(&self, name: &str) -> Result<usize, DataError> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    }

    /// Parses one cell; `Ok(None)` for a missing value. `row` is 0-based.
    fn number(&self, row: usize, col: usize) -> Result<Option<f64>, DataError> {
        let cell = &self.rows[row][col];
        if is_missing(cell) {
            return Ok(None);
        }
        cell.trim()
            .parse::<f64>()
            .map(Some)
            .map_err(|_| DataError::UnparseableValue { row: row + 1, col: self.headers[col].clone() })
    }
}

/// Recodes the raw Mayo PBC table for analysis: `trt` becomes a 0/1 treatment
/// indicator, `status` becomes 1 for death (original code 2) and 0 otherwise,
/// and a `log_bili` column is appended.
pub fn recode_pbc(raw: &Table) -> Result<Table, DataError> {
    let trt = raw.column_index("trt")?;
    let status = raw.column_index("status")?;
    let bili = raw.column_index("bili")?;
    let mut out = raw.clone();
    out.headers.push("log_bili".into());
    for (r, row) in out.rows.iter_mut().enumerate() {
        if let Some(v) = raw.number(r, trt)? {
            row[trt] = fmt_num(v - 1.0);
        }
        if let Some(v) = raw.number(r, status)? {
            row[status] = if v == 2.0 { "1" } else { "0" }.into();
        }
        let log_bili = match raw.number(r, bili)? {
            Some(v) if v > 0.0 => fmt_num(v.ln()),
            Some(_) => return Err(DataError::NonPositiveLog { row: r + 1, col: "bili".into() }),
            None => "NA".into(),
        };
        row.push(log_bili);
    }
    Ok(out)
}

fn fmt_num(v: f64) -> String {
    // shortest representation that parses back to the same value
    format!("{v}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Binary,
}

impl ColumnKind {
    /// Exactly two distinct observed values means binary.
    pub fn detect(column: ArrayView1<'_, f64>) -> Self {
        let distinct: BTreeSet<u64> = column.iter().map(|v| v.to_bits()).collect();
        if distinct.len() == 2 {
            ColumnKind::Binary
        } else {
            ColumnKind::Continuous
        }
    }
}

/// Affine map from the stored column back to the input scale: `x = center + scale * z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaling {
    pub center: f64,
    pub scale: f64,
}

impl ColumnScaling {
    pub const IDENTITY: ColumnScaling = ColumnScaling { center: 0.0, scale: 1.0 };
}

/// Right-censored observations `(X_i, Δ_i, Z_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalDataset {
    time: Vec<f64>,
    log_time: Vec<f64>,
    status: Vec<bool>,
    z: Array2<f64>,
    names: Vec<String>,
    kinds: Vec<ColumnKind>,
    scaling: Vec<ColumnScaling>,
}

impl SurvivalDataset {
    /// Builds a validated dataset with automatically detected column kinds.
    pub fn new(time: Vec<f64>, status: Vec<bool>, z: Array2<f64>, names: Vec<String>) -> Result<Self, DataError> {
        let (n, p) = z.dim();
        if time.len() != n || status.len() != n || names.len() != p {
            return Err(DataError::Shape(format!(
                "time {}, status {}, covariate rows {n}, names {} for {p} columns",
                time.len(),
                status.len(),
                names.len()
            )));
        }
        if p == 0 {
            return Err(DataError::NoCovariates);
        }
        if n < 2 {
            return Err(DataError::TooFewRows(n));
        }
        if let Some(i) = time.iter().position(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(DataError::NonPositiveTime(i + 1));
        }
        if !status.iter().any(|&s| s) {
            return Err(DataError::NoEvents);
        }
        if let Some((i, _)) = z.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(DataError::UnparseableValue { row: i.0 + 1, col: names[i.1].clone() });
        }
        let kinds = z.columns().into_iter().map(ColumnKind::detect).collect();
        let log_time = time.iter().map(|t| t.ln()).collect();
        Ok(SurvivalDataset { time, log_time, status, z, names, kinds, scaling: vec![ColumnScaling::IDENTITY; p] })
    }

    pub fn n(&self) -> usize {
        self.time.len()
    }

    pub fn p(&self) -> usize {
        self.z.ncols()
    }

    pub fn time(&self) -> &[f64] {
        &self.time
    }

    pub fn log_time(&self) -> &[f64] {
        &self.log_time
    }

    pub fn status(&self) -> &[bool] {
        &self.status
    }

    pub fn covariates(&self) -> &Array2<f64> {
        &self.z
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn kinds(&self) -> &[ColumnKind] {
        &self.kinds
    }

    pub fn scaling(&self) -> &[ColumnScaling] {
        &self.scaling
    }

    /// Row `i` of the covariate matrix as a slice.
    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.p();
        &self.z.as_slice().expect("standard layout")[i * p..(i + 1) * p]
    }

    pub fn n_events(&self) -> usize {
        self.status.iter().filter(|&&s| s).count()
    }

    /// Overrides the detected kind of a column.
    pub fn set_kind(&mut self, name: &str, kind: ColumnKind) -> Result<(), DataError> {
        let q = self
            .names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))?;
        if kind == ColumnKind::Binary && ColumnKind::detect(self.z.column(q)) != ColumnKind::Binary {
            return Err(DataError::NotBinary(name.to_string()));
        }
        self.kinds[q] = kind;
        Ok(())
    }

    /// Maps a coefficient vector on the stored covariate scale back to the input scale.
    pub fn unscale_beta(&self, beta: &[f64]) -> Vec<f64> {
        beta.iter().zip(&self.scaling).map(|(b, s)| b / s.scale).collect()
    }

    /// Same data with covariate column `q` multiplied by `c`.
    pub fn rescale_column(&self, q: usize, c: f64) -> SurvivalDataset {
        let mut out = self.clone();
        out.z.column_mut(q).mapv_inplace(|v| v * c);
        out.scaling[q].scale /= c;
        out
    }

    /// Keeps the rows selected by `idx`, in that order.
    pub fn select_rows(&self, idx: &[usize]) -> Result<SurvivalDataset, DataError> {
        let z = self.z.select(ndarray::Axis(0), idx);
        let time = idx.iter().map(|&i| self.time[i]).collect();
        let status = idx.iter().map(|&i| self.status[i]).collect();
        let mut out = SurvivalDataset::new(time, status, z, self.names.clone())?;
        out.scaling = self.scaling.clone();
        Ok(out)
    }
}

/// Centers each continuous column to mean 0 and scales it to unit sample
/// standard deviation; binary columns are left as they are. The applied
/// transform is composed into the recorded scaling so coefficients can be
/// mapped back to the input scale.
pub fn standardize_covariates(d: &SurvivalDataset) -> Result<SurvivalDataset, DataError> {
    rescale(d, false)
}

/// Like [`standardize_covariates`] but binary columns are standardized too.
/// Estimation works on this scale so that its stopping rules are unit-free.
pub fn standardize_all_covariates(d: &SurvivalDataset) -> Result<SurvivalDataset, DataError> {
    rescale(d, true)
}

/// Rounds to a multiple of 2⁻⁴⁰. Standardizing `c·Z` and `Z` then gives
/// bit-identical columns except in the rare case where a value sits on a
/// rounding boundary. The non-smoothed score is discontinuous, so the last-bit
/// differences would otherwise change the solver path and the p-values.
fn snap(x: f64) -> f64 {
    const GRID: f64 = (1u64 << 40) as f64;
    (x * GRID).round() / GRID
}

fn rescale(d: &SurvivalDataset, binary_too: bool) -> Result<SurvivalDataset, DataError> {
    let mut out = d.clone();
    let n = d.n() as f64;
    for q in 0..d.p() {
        if !binary_too && d.kinds[q] == ColumnKind::Binary {
            continue;
        }
        let mut col = out.z.column_mut(q);
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let sd = var.sqrt();
        if !(sd > 1e-12 * mean.abs().max(1.0)) {
            return Err(DataError::ZeroVariance(d.names[q].clone()));
        }
        col.mapv_inplace(|v| snap((v - mean) / sd));
        let prev = d.scaling[q];
        out.scaling[q] = ColumnScaling { center: prev.center + prev.scale * mean, scale: prev.scale * sd };
    }
    Ok(out)
}

/// Builds a dataset from a table: selects the formula's columns, drops rows with a
/// missing value in any of them, applies in-formula transforms and validates.
pub fn ingest_table(table: &Table, spec: &ModelSpec) -> Result<SurvivalDataset, DataError> {
    let time_col = table.column_index(&spec.time_col)?;
    let status_col = table.column_index(&spec.status_col)?;
    let term_cols = spec
        .terms
        .iter()
        .map(|t| table.column_index(&t.source))
        .collect::<Result<Vec<_>, _>>()?;

    let p = spec.p();
    let mut time = Vec::new();
    let mut status = Vec::new();
    let mut flat = Vec::new();
    'rows: for r in 0..table.rows.len() {
        let Some(t) = table.number(r, time_col)? else { continue };
        let Some(s) = table.number(r, status_col)? else { continue };
        let mut zrow = Vec::with_capacity(p);
        for &c in &term_cols {
            let Some(v) = table.number(r, c)? else { continue 'rows };
            zrow.push(v);
        }
        if t <= 0.0 {
            return Err(DataError::NonPositiveTime(r + 1));
        }
        let s = match s {
            0.0 => false,
            1.0 => true,
            _ => return Err(DataError::InvalidStatus(r + 1)),
        };
        for (v, term) in zrow.iter_mut().zip(&spec.terms) {
            if term.transform == Transform::Log {
                if *v <= 0.0 {
                    return Err(DataError::NonPositiveLog { row: r + 1, col: term.source.clone() });
                }
                *v = v.ln();
            }
        }
        time.push(t);
        status.push(s);
        flat.extend(zrow);
    }
    let n = time.len();
    log::info!("ingested {n} complete rows of {} ({} dropped)", table.rows.len(), table.rows.len() - n);
    let z = Array2::from_shape_vec((n, p), flat).map_err(|e| DataError::Shape(e.to_string()))?;
    SurvivalDataset::new(time, status, z, spec.column_names())
}

pub fn ingest_csv(path: impl AsRef<Path>, spec: &ModelSpec) -> Result<SurvivalDataset, DataError> {
    ingest_table(&Table::read_csv(path)?, spec)
}

/// Writes the dataset (time, status, covariates on the stored scale) as CSV.
pub fn write_dataset_csv<W: Write>(d: &SurvivalDataset, spec: &ModelSpec, w: W) -> Result<(), DataError> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec![spec.time_col.clone(), spec.status_col.clone()];
    header.extend(d.names.iter().cloned());
    wtr.write_record(&header)?;
    for i in 0..d.n() {
        let mut rec = vec![format!("{}", d.time[i]), if d.status[i] { "1" } else { "0" }.to_string()];
        rec.extend(d.row(i).iter().map(|v| format!("{v}")));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

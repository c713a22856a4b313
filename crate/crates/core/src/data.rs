//! The composite analysis dataset: covariates for everyone, trial
//! participation for everyone, treatment and outcome only for trial rows.
//!
//! Target-population rows may carry an outcome only when they are flagged
//! as control-regime observations, which the relative-scale estimator needs.

use std::cmp::Ordering;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("dataset has no rows")]
    Empty,
    #[error("line {line}: expected {expected} covariates, found {found}")]
    Arity { line: usize, expected: usize, found: usize },
    #[error("line {line}: field `{field}` must be 0 or 1, found `{value}`")]
    NonBinary { line: usize, field: &'static str, value: String },
    #[error("line {line}: field `{field}` is not a number: `{value}`")]
    NotNumeric { line: usize, field: String, value: String },
    #[error(
        "line {line}: treatment/outcome present on a non-participant row (s=0); \
         only covariates are recorded outside the trial unless the row is control-flagged"
    )]
    OutcomeOutsideTrial { line: usize },
    #[error("line {line}: trial row (s=1) is missing `{field}`")]
    MissingTrialValue { line: usize, field: &'static str },
    #[error("line {line}: control-flagged row must have s=0, a in {{0, empty}} and an outcome")]
    BadControlRow { line: usize },
    #[error("no trial rows in arm a={0}")]
    MissingArm(u8),
    #[error("header: {0}")]
    Header(String),
    #[error("line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("no {0} rows remain after subsampling")]
    EmptyStratum(&'static str),
    #[error("sampling fraction {0} outside (0, 1]")]
    Fraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignTag {
    Nested,
    NonNested,
}

/// How the composite sample relates to the underlying populations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplingDesign {
    /// The trial is embedded in a cohort drawn from the target population.
    Nested,
    /// Trial and target samples drawn separately, with these retention
    /// fractions applied to the participant and non-participant strata.
    NonNested { f_trial: f64, f_target: f64 },
}

impl SamplingDesign {
    pub fn tag(&self) -> DesignTag {
        match self {
            Self::Nested => DesignTag::Nested,
            Self::NonNested { .. } => DesignTag::NonNested,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeRow {
    pub id: u64,
    pub x: Vec<f64>,
    pub s: u8,
    pub a: Option<u8>,
    pub y: Option<u8>,
    /// Non-participant row whose outcome was observed under control.
    #[serde(default)]
    pub control: bool,
}

impl CompositeRow {
    pub fn trial(id: u64, x: Vec<f64>, a: u8, y: u8) -> Self {
        Self { id, x, s: 1, a: Some(a), y: Some(y), control: false }
    }

    pub fn target(id: u64, x: Vec<f64>) -> Self {
        Self { id, x, s: 0, a: None, y: None, control: false }
    }

    pub fn control(id: u64, x: Vec<f64>, y: u8) -> Self {
        Self { id, x, s: 0, a: Some(0), y: Some(y), control: true }
    }

    pub fn is_trial(&self) -> bool {
        self.s == 1
    }
}

/// Rows plus a precomputed covariate-cell index: every distinct covariate
/// tuple is a cell, numbered in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeDataset {
    rows: Vec<CompositeRow>,
    design: DesignTag,
    covariate_names: Vec<String>,
    cells: Vec<Vec<f64>>,
    cell_of: Vec<usize>,
}

fn cmp_tuple(a: &[f64], b: &[f64]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

/// Folds -0.0 into 0.0 so cells are keyed by value.
fn canonical(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x
    }
}

impl CompositeDataset {
    pub fn new(rows: Vec<CompositeRow>, design: DesignTag) -> Result<Self, DataError> {
        let k = rows.first().ok_or(DataError::Empty)?.x.len();
        let names = (1..=k).map(|j| format!("x{j}")).collect();
        Self::with_names(rows, design, names)
    }

    pub fn with_names(
        mut rows: Vec<CompositeRow>,
        design: DesignTag,
        covariate_names: Vec<String>,
    ) -> Result<Self, DataError> {
        if rows.is_empty() {
            return Err(DataError::Empty);
        }
        let k = covariate_names.len();
        for (i, r) in rows.iter_mut().enumerate() {
            // Row positions are reported as CSV lines (header is line 1).
            let line = i + 2;
            if r.x.len() != k {
                return Err(DataError::Arity { line, expected: k, found: r.x.len() });
            }
            r.x.iter_mut().for_each(|v| *v = canonical(*v));
            validate_row(r, line)?;
        }
        for arm in [0, 1] {
            if !rows.iter().any(|r| r.s == 1 && r.a == Some(arm)) {
                return Err(DataError::MissingArm(arm));
            }
        }
        let mut cells: Vec<Vec<f64>> = rows.iter().map(|r| r.x.clone()).collect();
        cells.sort_by(|a, b| cmp_tuple(a, b));
        cells.dedup_by(|a, b| cmp_tuple(a, b).is_eq());
        let cell_of = rows
            .iter()
            .map(|r| cells.binary_search_by(|c| cmp_tuple(c, &r.x)).expect("cell exists"))
            .collect();
        Ok(Self { rows, design, covariate_names, cells, cell_of })
    }

    pub fn rows(&self) -> &[CompositeRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn design(&self) -> DesignTag {
        self.design
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn arity(&self) -> usize {
        self.covariate_names.len()
    }

    /// Distinct covariate tuples, sorted.
    pub fn cells(&self) -> &[Vec<f64>] {
        &self.cells
    }

    /// Cell index of each row.
    pub fn cell_of(&self) -> &[usize] {
        &self.cell_of
    }

    pub fn cell_index(&self, x: &[f64]) -> Option<usize> {
        self.cells.binary_search_by(|c| cmp_tuple(c, x)).ok()
    }

    pub fn has_control_rows(&self) -> bool {
        self.rows.iter().any(|r| r.control)
    }

    pub fn n_trial(&self) -> usize {
        self.rows.iter().filter(|r| r.s == 1).count()
    }

    pub fn n_target(&self) -> usize {
        self.rows.len() - self.n_trial()
    }

    /// Copy with the outcome of every observed row replaced by `1 - y`.
    pub fn flip_outcomes(&self) -> Self {
        let mut out = self.clone();
        for r in &mut out.rows {
            r.y = r.y.map(|y| 1 - y);
        }
        out
    }

    /// Reads the CSV format `id,x1..xk,s,a,y[,control]`; blank `a`/`y`
    /// cells are missing values.
    pub fn read_csv<R: Read>(reader: R, design: DesignTag) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr.headers().map_err(|e| DataError::Header(e.to_string()))?.clone();
        let cols: Vec<&str> = header.iter().map(str::trim).collect();
        let has_control = cols.last() == Some(&"control");
        let tail = if has_control { 4 } else { 3 };
        if cols.len() < 1 + tail || cols[0] != "id" {
            return Err(DataError::Header(format!(
                "expected `id,x1..xk,s,a,y[,control]`, found `{}`",
                cols.join(",")
            )));
        }
        let s_pos = cols.len() - tail;
        if cols[s_pos..s_pos + 3] != ["s", "a", "y"] {
            return Err(DataError::Header(format!(
                "expected columns s,a,y after the covariates, found `{}`",
                cols[s_pos..].join(",")
            )));
        }
        let names: Vec<String> = cols[1..s_pos].iter().map(|s| s.to_string()).collect();

        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| DataError::Csv { line, message: e.to_string() })?;
            if rec.len() != cols.len() {
                return Err(DataError::Csv {
                    line,
                    message: format!("expected {} fields, found {}", cols.len(), rec.len()),
                });
            }
            let id = rec[0].trim().parse::<u64>().map_err(|_| DataError::NotNumeric {
                line,
                field: "id".into(),
                value: rec[0].to_owned(),
            })?;
            let mut x = Vec::with_capacity(names.len());
            for (j, name) in names.iter().enumerate() {
                let raw = rec[1 + j].trim();
                let v = raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    DataError::NotNumeric { line, field: name.clone(), value: raw.to_owned() }
                })?;
                x.push(v);
            }
            let s = parse_bit(&rec[s_pos], "s", line)?.ok_or_else(|| DataError::NonBinary {
                line,
                field: "s",
                value: String::new(),
            })?;
            let a = parse_bit(&rec[s_pos + 1], "a", line)?;
            let y = parse_bit(&rec[s_pos + 2], "y", line)?;
            let control = if has_control {
                parse_bit(&rec[s_pos + 3], "control", line)?.unwrap_or(0) == 1
            } else {
                false
            };
            rows.push(CompositeRow { id, x, s, a, y, control });
        }
        Self::with_names(rows, design, names)
    }

    /// Writes the CSV format read by [`CompositeDataset::read_csv`]. The
    /// `control` column is emitted only when some row is control-flagged.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let io = |e: csv::Error| DataError::Csv { line: 0, message: e.to_string() };
        let control = self.has_control_rows();
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["id".to_owned()];
        header.extend(self.covariate_names.iter().cloned());
        header.extend(["s", "a", "y"].map(String::from));
        if control {
            header.push("control".into());
        }
        w.write_record(&header).map_err(io)?;
        let bit = |v: Option<u8>| v.map(|b| b.to_string()).unwrap_or_default();
        for r in &self.rows {
            let mut rec = vec![r.id.to_string()];
            rec.extend(r.x.iter().map(|v| v.to_string()));
            rec.push(r.s.to_string());
            rec.push(bit(r.a));
            rec.push(bit(r.y));
            if control {
                rec.push(u8::from(r.control).to_string());
            }
            w.write_record(&rec).map_err(io)?;
        }
        w.flush().map_err(|e| DataError::Csv { line: 0, message: e.to_string() })
    }
}

fn parse_bit(raw: &str, field: &'static str, line: usize) -> Result<Option<u8>, DataError> {
    match raw.trim() {
        "" => Ok(None),
        "0" => Ok(Some(0)),
        "1" => Ok(Some(1)),
        other => Err(DataError::NonBinary { line, field, value: other.to_owned() }),
    }
}

fn validate_row(r: &CompositeRow, line: usize) -> Result<(), DataError> {
    if r.s > 1 {
        return Err(DataError::NonBinary { line, field: "s", value: r.s.to_string() });
    }
    for (field, v) in [("a", r.a), ("y", r.y)] {
        if let Some(b) = v.filter(|&b| b > 1) {
            return Err(DataError::NonBinary { line, field, value: b.to_string() });
        }
    }
    if r.control {
        if r.s != 0 || r.y.is_none() || r.a == Some(1) {
            return Err(DataError::BadControlRow { line });
        }
        return Ok(());
    }
    if r.s == 1 {
        if r.a.is_none() {
            return Err(DataError::MissingTrialValue { line, field: "a" });
        }
        if r.y.is_none() {
            return Err(DataError::MissingTrialValue { line, field: "y" });
        }
    } else if r.a.is_some() || r.y.is_some() {
        return Err(DataError::OutcomeOutsideTrial { line });
    }
    Ok(())
}

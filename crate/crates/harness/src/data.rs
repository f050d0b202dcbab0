//! Dataset files: headerless CSV in one of three layouts.
//!
//! * observations — one row per observation, one float column per
//!   coordinate (mixture family);
//! * sequences — a leading integer sequence-id column, then float
//!   coordinates; consecutive rows with the same id form one sequence
//!   (HMM and Kalman families);
//! * counts — one row per document, one nonnegative integer per category
//!   (Dirichlet family).
//!
//! Floats are written with `Display`, which is the shortest representation
//! that parses back to the same bits, so generate→ingest round trips are
//! lossless.

use std::path::Path;

use nalgebra::DVector;

use online_em::dirichlet::CountVector;

use crate::config::Family;
use crate::{HarnessError, Result};

/// An in-memory dataset in whichever layout the family uses.
#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Observations(Vec<DVector<f64>>),
    Sequences(Vec<Vec<DVector<f64>>>),
    Counts(Vec<CountVector>),
}

impl Dataset {
    /// Number of top-level items: observations, sequences, or documents.
    pub fn len(&self) -> usize {
        match self {
            Dataset::Observations(v) => v.len(),
            Dataset::Sequences(v) => v.len(),
            Dataset::Counts(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coordinate dimension (categories for counts); 0 when empty.
    pub fn dim(&self) -> usize {
        match self {
            Dataset::Observations(v) => v.first().map_or(0, |x| x.len()),
            Dataset::Sequences(v) => v.first().and_then(|s| s.first()).map_or(0, |x| x.len()),
            Dataset::Counts(v) => v.first().map_or(0, |c| c.dim()),
        }
    }

    /// One-line description echoed by `ingest-check`.
    pub fn summary(&self) -> String {
        match self {
            Dataset::Observations(v) => {
                format!("{} observations of dimension {}", v.len(), self.dim())
            }
            Dataset::Sequences(v) => {
                let steps: usize = v.iter().map(|s| s.len()).sum();
                format!(
                    "{} sequences ({} steps) of dimension {}",
                    v.len(),
                    steps,
                    self.dim()
                )
            }
            Dataset::Counts(v) => {
                format!("{} documents over {} categories", v.len(), self.dim())
            }
        }
    }

    /// Splits off the last `holdout` items, leaving the rest in place.
    pub fn split_tail(&mut self, holdout: usize) -> Result<Dataset> {
        if holdout >= self.len() {
            return Err(HarnessError::config(format!(
                "holdout of {holdout} items does not leave any of the {} for training",
                self.len()
            )));
        }
        let keep = self.len() - holdout;
        Ok(match self {
            Dataset::Observations(v) => Dataset::Observations(v.split_off(keep)),
            Dataset::Sequences(v) => Dataset::Sequences(v.split_off(keep)),
            Dataset::Counts(v) => Dataset::Counts(v.split_off(keep)),
        })
    }
}

/// Serializes a dataset in the family's CSV layout.
pub fn dataset_to_csv(dataset: &Dataset) -> String {
    let mut out = String::new();
    let push_floats = |out: &mut String, values: &DVector<f64>| {
        for (i, v) in values.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&v.to_string());
        }
    };
    match dataset {
        Dataset::Observations(rows) => {
            for row in rows {
                push_floats(&mut out, row);
                out.push('\n');
            }
        }
        Dataset::Sequences(sequences) => {
            for (id, sequence) in sequences.iter().enumerate() {
                for step in sequence {
                    out.push_str(&id.to_string());
                    out.push(',');
                    push_floats(&mut out, step);
                    out.push('\n');
                }
            }
        }
        Dataset::Counts(documents) => {
            for doc in documents {
                for (i, c) in doc.counts().iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(&c.to_string());
                }
                out.push('\n');
            }
        }
    }
    out
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    std::fs::write(path, dataset_to_csv(dataset))
        .map_err(|e| HarnessError::io(format!("writing {}: {e}", path.display())))
}

/// Parses a dataset file in the layout the family expects.
pub fn read_dataset(path: &Path, family: Family) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::io(format!("reading {}: {e}", path.display())))?;
    parse_dataset(&text, family)
}

pub fn parse_dataset(text: &str, family: Family) -> Result<Dataset> {
    let rows = parse_rows(text)?;
    if rows.is_empty() {
        return Err(HarnessError::config("dataset is empty"));
    }
    match family {
        Family::Mixture => {
            let observations = rows
                .into_iter()
                .map(|(line, cells)| parse_floats(line, &cells, 0))
                .collect::<Result<Vec<_>>>()?;
            Ok(Dataset::Observations(observations))
        }
        Family::Hmm | Family::Kalman => {
            let mut sequences: Vec<Vec<DVector<f64>>> = Vec::new();
            let mut current_id: Option<i64> = None;
            for (line, cells) in rows {
                if cells.len() < 2 {
                    return Err(HarnessError::config(format!(
                        "line {line}: sequence rows need an id column plus coordinates"
                    )));
                }
                let id: i64 = cells[0].trim().parse().map_err(|_| {
                    HarnessError::config(format!(
                        "line {line}, column 1: invalid sequence id {:?}",
                        cells[0]
                    ))
                })?;
                let step = parse_floats(line, &cells, 1)?;
                if current_id != Some(id) {
                    sequences.push(Vec::new());
                    current_id = Some(id);
                }
                sequences.last_mut().unwrap().push(step);
            }
            Ok(Dataset::Sequences(sequences))
        }
        Family::Dirichlet => {
            let mut documents = Vec::new();
            for (line, cells) in rows {
                let mut counts = Vec::with_capacity(cells.len());
                for (i, cell) in cells.iter().enumerate() {
                    let value: u64 = cell.trim().parse().map_err(|_| {
                        HarnessError::config(format!(
                            "line {line}, column {}: invalid count {cell:?}",
                            i + 1
                        ))
                    })?;
                    counts.push(value);
                }
                documents.push(
                    CountVector::new(counts)
                        .map_err(|e| HarnessError::config(format!("line {line}: {e}")))?,
                );
            }
            Ok(Dataset::Counts(documents))
        }
    }
}

/// Splits non-empty lines into cells and enforces a rectangular shape.
fn parse_rows(text: &str) -> Result<Vec<(usize, Vec<String>)>> {
    let mut rows: Vec<(usize, Vec<String>)> = Vec::new();
    let mut width: Option<usize> = None;
    for (index, line) in text.lines().enumerate() {
        let line_no = index + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<String> = line.split(',').map(|c| c.to_string()).collect();
        match width {
            None => width = Some(cells.len()),
            Some(w) if w != cells.len() => {
                return Err(HarnessError::config(format!(
                    "line {line_no}: expected {w} columns, found {}",
                    cells.len()
                )));
            }
            Some(_) => {}
        }
        rows.push((line_no, cells));
    }
    Ok(rows)
}

fn parse_floats(line: usize, cells: &[String], skip: usize) -> Result<DVector<f64>> {
    let mut values = Vec::with_capacity(cells.len() - skip);
    for (i, cell) in cells.iter().enumerate().skip(skip) {
        let value: f64 = cell.trim().parse().map_err(|_| {
            HarnessError::config(format!(
                "line {line}, column {}: invalid number {cell:?}",
                i + 1
            ))
        })?;
        if !value.is_finite() {
            return Err(HarnessError::config(format!(
                "line {line}, column {}: non-finite value {cell:?}",
                i + 1
            )));
        }
        values.push(value);
    }
    Ok(DVector::from_column_slice(&values))
}

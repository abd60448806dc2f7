//! On-disk formats shared by the subcommands: the JSON problem file, plain
//! CSV matrices, and the per-iteration trace.
//!
//! Matrices travel as CSV with a generated `c0,c1,...` header and one matrix
//! row per line, so every artifact parses under ordinary CSV rules. Floats
//! are printed with Rust's shortest round-trip formatting, which preserves
//! the exact bit pattern on re-read.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use lrmc::{IterationRecord, IterationTrace, ObservedMatrix};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// A serialized completion problem: observed values with their mask, plus
/// the ground truth and peak signal level when they are known. Synthetic
/// problems keep both around so downstream commands can score the
/// reconstruction.
#[derive(Debug, Serialize, Deserialize)]
pub struct ProblemFile {
    pub rows: usize,
    pub cols: usize,
    /// Row-major entries; unobserved positions hold 0.
    pub values: Vec<f64>,
    /// Row-major observation mask, same length as `values`.
    pub mask: Vec<bool>,
    /// Row-major ground truth, when known.
    #[serde(default)]
    pub truth: Option<Vec<f64>>,
    /// Peak signal level for PSNR, when known.
    #[serde(default)]
    pub peak: Option<f64>,
}

impl ProblemFile {
    pub fn from_parts(
        data: &ObservedMatrix,
        truth: Option<&DMatrix<f64>>,
        peak: Option<f64>,
    ) -> Self {
        let (rows, cols) = data.shape();
        Self {
            rows,
            cols,
            values: row_major(data.values()),
            mask: (0..rows)
                .flat_map(|r| (0..cols).map(move |c| (r, c)))
                .map(|(r, c)| data.mask()[(r, c)])
                .collect(),
            truth: truth.map(row_major),
            peak,
        }
    }

    /// Validates the field lengths and rebuilds the in-memory problem.
    pub fn into_parts(
        self,
    ) -> Result<(ObservedMatrix, Option<DMatrix<f64>>, Option<f64>), CliError> {
        let cells = self.rows.checked_mul(self.cols).ok_or_else(|| {
            CliError::usage("problem dimensions overflow")
        })?;
        if self.rows == 0 || self.cols == 0 {
            return Err(CliError::usage("problem dimensions must be positive"));
        }
        if self.values.len() != cells || self.mask.len() != cells {
            return Err(CliError::usage(format!(
                "problem file inconsistent: {}x{} needs {} entries, got {} values and {} mask flags",
                self.rows,
                self.cols,
                cells,
                self.values.len(),
                self.mask.len()
            )));
        }
        let values = DMatrix::from_row_iterator(self.rows, self.cols, self.values);
        let mask = DMatrix::from_row_iterator(self.rows, self.cols, self.mask);
        let data = if mask.iter().all(|&b| b) {
            ObservedMatrix::fully_observed(values)
        } else {
            ObservedMatrix::new(values, mask)
        }
        .map_err(|e| CliError::usage(format!("invalid problem data: {e}")))?;
        let truth = match self.truth {
            Some(entries) if entries.len() == cells => {
                Some(DMatrix::from_row_iterator(self.rows, self.cols, entries))
            }
            Some(entries) => {
                return Err(CliError::usage(format!(
                    "problem file inconsistent: truth has {} entries, expected {}",
                    entries.len(),
                    cells
                )));
            }
            None => None,
        };
        Ok((data, truth, self.peak))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let raw = fs::read_to_string(path).map_err(|e| {
            CliError::usage(format!("cannot read problem file '{}': {e}", path.display()))
        })?;
        serde_json::from_str(&raw).map_err(|e| {
            CliError::usage(format!("invalid problem file '{}': {e}", path.display()))
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let body = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::usage(format!("cannot serialize problem: {e}")))?;
        write_text(path, &(body + "\n"))
    }
}

fn row_major(matrix: &DMatrix<f64>) -> Vec<f64> {
    let (rows, cols) = matrix.shape();
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            out.push(matrix[(r, c)]);
        }
    }
    out
}

/// Writes a dense matrix as CSV: a `c0,c1,...` header, then one matrix row
/// per line.
pub fn write_matrix_csv(matrix: &DMatrix<f64>, path: &Path) -> Result<(), CliError> {
    let (rows, cols) = matrix.shape();
    let mut out = String::new();
    for c in 0..cols {
        if c > 0 {
            out.push(',');
        }
        let _ = write!(out, "c{c}");
    }
    out.push('\n');
    for r in 0..rows {
        for c in 0..cols {
            if c > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", matrix[(r, c)]);
        }
        out.push('\n');
    }
    write_text(path, &out)
}

/// Reads a matrix written by [`write_matrix_csv`]; the header only fixes the
/// column count.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>, CliError> {
    let raw = fs::read_to_string(path).map_err(|e| {
        CliError::usage(format!("cannot read matrix '{}': {e}", path.display()))
    })?;
    let mut lines = raw.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| CliError::usage(format!("matrix '{}' is empty", path.display())))?;
    let cols = header.split(',').count();
    let mut entries = Vec::new();
    let mut rows = 0;
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols {
            return Err(CliError::usage(format!(
                "matrix '{}' row {} has {} fields, expected {}",
                path.display(),
                rows + 1,
                fields.len(),
                cols
            )));
        }
        for field in fields {
            let value: f64 = field.trim().parse().map_err(|_| {
                CliError::usage(format!(
                    "matrix '{}' has a non-numeric field '{}'",
                    path.display(),
                    field
                ))
            })?;
            entries.push(value);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(CliError::usage(format!(
            "matrix '{}' has a header but no rows",
            path.display()
        )));
    }
    Ok(DMatrix::from_row_iterator(rows, cols, entries))
}

/// Column order of the per-iteration trace CSV.
pub const TRACE_HEADER: &str = "iter,objective,gap,rank,sigma_min,ms";

pub fn write_trace_csv(trace: &IterationTrace, path: &Path) -> Result<(), CliError> {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for record in &trace.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            record.iter,
            record.objective,
            record.gap,
            record.rank,
            record.sigma_min,
            record.elapsed_ms
        );
    }
    write_text(path, &out)
}

/// Reads a trace back. The file does not store the termination flag, so
/// convergence is re-derived from the final gap and the tolerance in force.
pub fn read_trace_csv(path: &Path, tol: f64) -> Result<IterationTrace, CliError> {
    let raw = fs::read_to_string(path).map_err(|e| {
        CliError::usage(format!("cannot read trace '{}': {e}", path.display()))
    })?;
    let mut records = Vec::new();
    for (number, line) in raw.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(CliError::usage(format!(
                "trace '{}' line {} has {} fields, expected 6",
                path.display(),
                number + 1,
                fields.len()
            )));
        }
        let parse_err = |field: &str| {
            CliError::usage(format!(
                "trace '{}' line {} has a malformed field '{}'",
                path.display(),
                number + 1,
                field
            ))
        };
        records.push(IterationRecord {
            iter: fields[0].trim().parse().map_err(|_| parse_err(fields[0]))?,
            objective: fields[1].trim().parse().map_err(|_| parse_err(fields[1]))?,
            gap: fields[2].trim().parse().map_err(|_| parse_err(fields[2]))?,
            rank: fields[3].trim().parse().map_err(|_| parse_err(fields[3]))?,
            sigma_min: fields[4].trim().parse().map_err(|_| parse_err(fields[4]))?,
            elapsed_ms: fields[5].trim().parse().map_err(|_| parse_err(fields[5]))?,
        });
    }
    if records.is_empty() {
        return Err(CliError::usage(format!(
            "trace '{}' has no records",
            path.display()
        )));
    }
    let converged = records.last().is_some_and(|r| r.gap < tol);
    Ok(IterationTrace { records, converged })
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::usage(format!("cannot serialize JSON: {e}")))?;
    write_text(path, &(body + "\n"))
}

fn write_text(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| {
        CliError::usage(format!("cannot write '{}': {e}", path.display()))
    })
}

//! Column-major observation matrix shared by features and knockoffs.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{KnockoffError, Result};

/// An `n` observations by `p` features real matrix, stored column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    n: usize,
    names: Vec<String>,
    data: Vec<f64>,
}

impl DataMatrix {
    /// Builds a matrix from columns of equal length, naming them `x1..xp`.
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self> {
        let names = (1..=columns.len()).map(|j| format!("x{j}")).collect();
        Self::from_named_columns(names, columns)
    }

    pub fn from_named_columns(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(KnockoffError::ShapeMismatch {
                expected: format!("{} column names", columns.len()),
                actual: format!("{} names", names.len()),
            });
        }
        let n = columns.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * columns.len());
        for (j, col) in columns.into_iter().enumerate() {
            if col.len() != n {
                return Err(KnockoffError::ShapeMismatch {
                    expected: format!("{n} rows"),
                    actual: format!("{} rows in column {}", col.len(), names[j]),
                });
            }
            data.extend(col);
        }
        Ok(Self { n, names, data })
    }

    pub fn zeros(n: usize, p: usize) -> Self {
        Self { n, names: (1..=p).map(|j| format!("x{j}")).collect(), data: vec![0.0; n * p] }
    }

    /// A zero matrix with the same shape and column names as `self`.
    pub fn zeros_like(&self) -> Self {
        Self { n: self.n, names: self.names.clone(), data: vec![0.0; self.data.len()] }
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn set_names(&mut self, names: Vec<String>) -> Result<()> {
        if names.len() != self.ncols() {
            return Err(KnockoffError::ShapeMismatch {
                expected: format!("{} names", self.ncols()),
                actual: format!("{} names", names.len()),
            });
        }
        self.names = names;
        Ok(())
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }

    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.n..(j + 1) * self.n]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.ncols()).map(move |j| self.col(j))
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[col * self.n + row]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[col * self.n + row] = value;
    }

    /// Flat column-major view of all entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &DataMatrix) -> bool {
        self.n == other.n && self.ncols() == other.ncols()
    }

    pub(crate) fn check_same_shape(&self, other: &DataMatrix) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(KnockoffError::ShapeMismatch {
                expected: format!("{}x{}", self.n, self.ncols()),
                actual: format!("{}x{}", other.n, other.ncols()),
            })
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Parses a headered CSV document. Every field must be a finite number.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let names: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        if names.is_empty() || names.iter().all(String::is_empty) {
            return Err(KnockoffError::InvalidInput("CSV header row is empty".into()));
        }
        let mut columns = vec![Vec::new(); names.len()];
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != names.len() {
                return Err(KnockoffError::InvalidInput(format!(
                    "row {} has {} fields, header has {}",
                    row + 1,
                    record.len(),
                    names.len()
                )));
            }
            for (j, field) in record.iter().enumerate() {
                let value: f64 = field.parse().map_err(|_| {
                    KnockoffError::InvalidInput(format!(
                        "row {}, column {}: `{field}` is not a number",
                        row + 1,
                        names[j]
                    ))
                })?;
                if !value.is_finite() {
                    return Err(KnockoffError::InvalidInput(format!(
                        "row {}, column {}: non-finite value",
                        row + 1,
                        names[j]
                    )));
                }
                columns[j].push(value);
            }
        }
        Self::from_named_columns(names, columns)
    }

    pub fn read_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file))
    }

    /// Writes the matrix as CSV using the shortest representation that
    /// round-trips each value exactly.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(&self.names)?;
        let mut row = Vec::with_capacity(self.ncols());
        for i in 0..self.n {
            row.clear();
            row.extend((0..self.ncols()).map(|j| format_f64(self.get(i, j))));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Shortest round-trip decimal form of a float.
pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}
